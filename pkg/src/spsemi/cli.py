"""Command-line entry point.

    spsemi {eikonal,wkb,schrodinger,converge,check-ops} [--config PATH | --preset NAME]
           [--out DIR] [--seed N] [--threads N] [--min-slope X]

Exit codes: 0 ok, 1 assertion failure, 2 configuration error, 3 numerical blow-up.
"""
from __future__ import annotations

import argparse
import dataclasses
import io
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, build_scenario, dump_manifest, load_config, load_preset, preset_names
from .diagnostics import SweepAborted, harness_horizon, run_epsilon_sweep, run_h_sweep
from .eikonal import PROBE_COUNT, PROBE_SEED, fundamental_matrix, solve_linear_eikonal, solve_quadratic_eikonal, write_phase_csv
from .schrodinger import solve_schrodinger
from .spectral import Grid, check_inequality_suite, write_field_dump
from .wkb import solve_wkb, solve_wkb_mollified

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2, 3
COMMANDS = ("eikonal", "wkb", "schrodinger", "converge", "check-ops")


class _Writer:
    """Collects every output file of a run and writes them from one place."""

    def __init__(self, directory: Path, formats):
        self.directory = directory
        self.formats = set(formats)
        self.files: dict[str, bytes] = {}

    def text(self, name: str, content: str):
        self.files[name] = content.encode()

    def binary(self, name: str, content: bytes):
        self.files[name] = content

    def flush(self):
        self.directory.mkdir(parents=True, exist_ok=True)
        for name in sorted(self.files):
            (self.directory / name).write_bytes(self.files[name])


def _csv(fn) -> str:
    buf = io.StringIO()
    fn(buf)
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _cmd_eikonal(cfg: RunConfig, out: _Writer, args) -> int:
    sc = build_scenario(cfg)
    so = cfg.solver
    if sc.requires_straightening or so.ghost:
        phase = solve_quadratic_eikonal(
            sc.pot_quad, sc.M0, sc.alpha0, sc.beta0, sc.charge_q * sc.c_const, so.ghost, so.T, so.dt
        )
    else:
        phase = solve_linear_eikonal(sc.pot_quad.E, sc.alpha0, sc.beta0, so.T, so.dt, gamma=sc.pot_quad.gamma)
    phase = fundamental_matrix(phase)
    if "csv" in out.formats:
        out.text("phase.csv", _csv(lambda fh: write_phase_csv(fh, phase)))
    report = {
        "status": phase.status,
        "last_valid_time": phase.last_valid_time,
        "hj_residual_max": phase.hj_residual if phase.hj_residual is not None else float("nan"),
        "probes": PROBE_COUNT if phase.hj_residual is not None else 0,
        "probe_seed": PROBE_SEED,
        "max_step_error_estimate": float(np.max(phase.error_estimate)) if phase.error_estimate is not None else 0.0,
        "focusing_time": phase.focusing_time,
        "flags": list(phase.flags),
    }
    out.text("residual.json", _json(report))
    if phase.is_partial:
        print(f"eikonal: {phase.status} (last valid t={phase.last_valid_time:.6g})", file=sys.stderr)
        return EXIT_BLOWUP
    return EXIT_OK


def _dump(out: _Writer, name: str, entries):
    buf = io.BytesIO()
    for label, field_, t in entries:
        write_field_dump(buf, field_, label, t)
    out.binary(name, buf.getvalue())


def _cmd_wkb(cfg: RunConfig, out: _Writer, args) -> int:
    sc = build_scenario(cfg)
    so = cfg.solver
    if so.h > 0:
        tr = solve_wkb_mollified(sc, so.eps, so.h, so.T, so.dt, s=so.s, output_stride=so.output_stride, ceiling=so.ceiling)
    else:
        tr = solve_wkb(sc, so.eps, so.form, so.T, so.dt, s=so.s, output_stride=so.output_stride, ceiling=so.ceiling)
    if "csv" in out.formats:
        out.text("diagnostics.csv", _csv(tr.write_diagnostics_csv))
    if "dump" in out.formats:
        entries = []
        for st in tr.snapshots:
            entries.append(("a", st.a, st.t))
            if st.phi is not None:
                entries.append(("phi", st.phi, st.t))
            if st.v is not None:
                entries.extend((f"v{i + 1}", c, st.t) for i, c in enumerate(st.v.components))
        _dump(out, "snapshots.bin", entries)
    if "json" in out.formats:
        out.text("summary.json", _json({"status": tr.status, "blowup_time": tr.blowup_time, "form": tr.form,
                                        "sup": {c: tr.sup(c) for c in tr.diagnostics if c != "t"}}))
    if tr.is_partial:
        print(f"wkb: {tr.status} at t={tr.blowup_time}", file=sys.stderr)
        return EXIT_BLOWUP
    return EXIT_OK


def _cmd_schrodinger(cfg: RunConfig, out: _Writer, args) -> int:
    sc = build_scenario(cfg)
    so = cfg.solver
    tr = solve_schrodinger(sc, so.eps, so.T, so.dt, output_stride=so.output_stride)
    if "csv" in out.formats:
        out.text("diagnostics.csv", _csv(tr.write_diagnostics_csv))
    if "dump" in out.formats:
        _dump(out, "snapshots.bin", [("u", st.u, st.t) for st in tr.snapshots])
    if "json" in out.formats:
        mass = tr.diagnostics["mass"]
        out.text("summary.json", _json({"gauge": tr.gauge, "flags": tr.flags,
                                        "mass_drift": float(np.max(np.abs(mass / mass[0] - 1)))}))
    for flag in tr.flags:
        print(f"schrodinger: warning: {flag}", file=sys.stderr)
    return EXIT_OK


def _cmd_converge(cfg: RunConfig, out: _Writer, args) -> int:
    sc = build_scenario(cfg)
    so = cfg.solver
    min_slope = args.min_slope if args.min_slope is not None else so.min_slope
    threads = args.threads
    T = so.T
    try:
        if so.h_list:
            fit = run_h_sweep(
                sc, so.eps, so.h_list, T, so.dt, s=so.s, output_stride=so.output_stride, threads=threads, ceiling=so.ceiling
            )
            ok = fit.checks["monotone"]
        else:
            if so.auto_T:
                form = "straightened" if sc.requires_straightening else so.form
                T = harness_horizon(sc, so.eps_list, so.T, so.dt, form, threads, ceiling=so.ceiling)
            fit = run_epsilon_sweep(
                sc, so.eps_list, T, so.dt, so.compare, s=so.s, output_stride=so.output_stride, threads=threads,
                wave_n=so.wave_n or None, wave_dt=so.wave_dt or None, ceiling=so.ceiling,
            )
            max_res = so.max_residual if so.max_residual >= 0 else None
            ok = fit.passes_all(min_slope, max_res)
    except SweepAborted as exc:
        print(f"converge: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    if "csv" in out.formats:
        out.text("ratefit.csv", _csv(fit.write_csv))
    summary = fit.summary()
    summary["min_slope"] = min_slope
    summary["passed"] = bool(ok)
    out.text("ratefit.json", _json(summary))
    if not ok:
        slopes = ", ".join(f"{c}={v:.4g}" for c, v in fit.slopes.items())
        print(f"converge: assertion failed (slopes {slopes}; min {min_slope:g}; checks {fit.checks})", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def _cmd_check_ops(cfg: RunConfig, out: _Writer, args) -> int:
    sc = cfg.scenario
    report = check_inequality_suite(cfg.solver.samples, cfg.seed, grid=Grid(sc.dim, sc.n, sc.period), s=cfg.solver.s)
    out.text("check_ops.txt", "\n".join(report.lines()) + "\n")
    out.text("check_ops.json", _json(dataclasses.asdict(report)))
    print("\n".join(report.lines()))
    return EXIT_OK if report.passed else EXIT_ASSERT


_HANDLERS = {
    "eikonal": _cmd_eikonal,
    "wkb": _cmd_wkb,
    "schrodinger": _cmd_schrodinger,
    "converge": _cmd_converge,
    "check-ops": _cmd_check_ops,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spsemi", description="Semiclassical Schrodinger-Poisson simulation and checks")
    p.add_argument("command", choices=COMMANDS)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="TOML or JSON run configuration")
    src.add_argument("--preset", help=f"named preset ({', '.join(preset_names())})")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    p.add_argument("--min-slope", type=float, dest="min_slope", help="slope assertion for converge")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config:
            cfg = load_config(args.config)
        elif args.preset:
            cfg = load_preset(args.preset)
        else:
            cfg = RunConfig()
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.out:
            cfg = dataclasses.replace(cfg, output=dataclasses.replace(cfg.output, directory=args.out))
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = _Writer(Path(cfg.output.directory), cfg.output.formats)
        out.text("manifest.toml", dump_manifest(cfg))
        code = _HANDLERS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.flush()
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
