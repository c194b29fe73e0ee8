"""Run configuration: TOML (or JSON) with [scenario], [solver], [output] sections.

Every key has a default and unknown keys are rejected.  Field initializers are
sparse Fourier-mode lists ``[{mode = [m1, m2, m3], re = ..., im = ...}, ...]``
giving ``sum (re + i im) exp(2 pi i m.x / L)``, so configs are grid independent.
A scenario may start from a named preset (see ``spsemi/presets/``); explicit
keys override the preset values.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import tomli
import tomli_w

from .eikonal import QuadraticPotentialSpec
from .spectral import Grid, SpectralField
from .wkb import Scenario

__all__ = [
    "ConfigError",
    "Mode",
    "ScenarioConfig",
    "SolverConfig",
    "OutputConfig",
    "RunConfig",
    "load_config",
    "parse_config",
    "preset_names",
    "load_preset",
    "build_scenario",
    "dump_manifest",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Mode:
    mode: tuple[int, ...]
    re: float = 0.0
    im: float = 0.0


def _modes(value, key: str) -> tuple[Mode, ...]:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{key}: expected a list of modes")
    out = []
    for i, entry in enumerate(value):
        if isinstance(entry, Mode):
            out.append(entry)
            continue
        if not isinstance(entry, dict):
            raise ConfigError(f"{key}[{i}]: expected a table with mode/re/im")
        unknown = set(entry) - {"mode", "re", "im"}
        if unknown:
            raise ConfigError(f"unknown key {key}[{i}].{sorted(unknown)[0]}")
        if "mode" not in entry:
            raise ConfigError(f"{key}[{i}]: missing 'mode'")
        try:
            m = tuple(int(v) for v in entry["mode"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}[{i}].mode: expected integers") from exc
        out.append(Mode(m, float(entry.get("re", 0.0)), float(entry.get("im", 0.0))))
    return tuple(out)


def _modes_out(modes: tuple[Mode, ...]) -> list[dict]:
    return [{"mode": list(m.mode), "re": m.re, "im": m.im} for m in modes]


_MODE_KEYS = ("a0", "phi0", "a1", "r_shape", "doping", "v_pert")
_POTENTIAL_PROFILES = ("constant", "cosine")


@dataclass(frozen=True)
class ScenarioConfig:
    preset: str = ""
    name: str = "custom"
    dim: int = 3
    n: int = 16
    period: float = 2.0 * math.pi
    q: float = 1.0
    c_const: float = 1.0
    a0: tuple[Mode, ...] = (Mode((0,), 1.0, 0.0),)
    phi0: tuple[Mode, ...] = ()
    a1: tuple[Mode, ...] = ()
    r_shape: tuple[Mode, ...] = ()
    r_eps_scale: float = 0.0
    r_power: float = 1.0
    doping: tuple[Mode, ...] = ()
    v_pert: tuple[Mode, ...] = ()
    Q: tuple = ()
    E: tuple = ()
    gamma: float = 0.0
    potential_profile: str = "constant"
    potential_frequency: float = 1.0
    M0: tuple = ()
    alpha0: tuple = ()
    beta0: float = 0.0
    a0_noise: float = 0.0


@dataclass(frozen=True)
class SolverConfig:
    solver: str = "wkb"
    form: str = "scalar_phase"
    eps: float = 0.1
    eps_list: tuple[float, ...] = (0.4, 0.2, 0.1, 0.05)
    h: float = 0.0
    h_list: tuple[float, ...] = ()
    T: float = 1.0
    auto_T: bool = False
    dt: float = 0.01
    output_stride: int = 10
    ghost: bool = True
    compare: str = "density"
    min_slope: float = 0.9
    max_residual: float = -1.0
    s: float = 3.0
    wave_n: int = 0
    wave_dt: float = 0.0
    samples: int = 100
    ceiling: float = 1e6


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json", "dump")


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        sc = {}
        for f in fields(ScenarioConfig):
            v = getattr(self.scenario, f.name)
            if f.name in _MODE_KEYS:
                v = _modes_out(v)
            elif f.name in ("Q", "M0"):
                v = _nested_out(v)
            elif isinstance(v, tuple):
                v = list(v)
            sc[f.name] = v
        so = {f.name: (list(getattr(self.solver, f.name)) if isinstance(getattr(self.solver, f.name), tuple) else getattr(self.solver, f.name)) for f in fields(SolverConfig)}
        out = {"directory": self.output.directory, "formats": list(self.output.formats)}
        return {"seed": self.seed, "scenario": sc, "solver": so, "output": out}


def _nested_out(v):
    if isinstance(v, tuple):
        return [_nested_out(x) for x in v]
    return v


def _nested_in(v, key):
    if isinstance(v, (list, tuple)):
        return tuple(_nested_in(x, key) for x in v)
    try:
        return float(v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected numbers") from exc


def _coerce(cls, section: str, raw: dict, base) -> Any:
    if not isinstance(raw, dict):
        raise ConfigError(f"[{section}] must be a table")
    names = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"unknown key {section}.{key}")
    values = {}
    for key, value in raw.items():
        full = f"{section}.{key}"
        default = getattr(base, key)
        if key in _MODE_KEYS and section == "scenario":
            values[key] = _modes(value, full)
        elif key in ("Q", "M0", "E", "alpha0") and section == "scenario":
            values[key] = _nested_in(value, full) if isinstance(value, (list, tuple)) else float(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{full}: expected true/false")
            values[key] = value
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{full}: expected an integer")
            values[key] = value
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{full}: expected a number")
            values[key] = float(value)
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(f"{full}: expected a string")
            values[key] = value
        elif isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{full}: expected a list")
            values[key] = tuple(float(v) if not isinstance(v, str) else v for v in value)
        else:  # pragma: no cover - every field has a typed default
            values[key] = value
    return dataclasses.replace(base, **values)


def preset_names() -> list[str]:
    root = resources.files("spsemi").joinpath("presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def _preset_text(name: str) -> str:
    res = resources.files("spsemi").joinpath("presets", f"{name}.toml")
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return res.read_text()


def load_preset(name: str) -> RunConfig:
    return parse_config({"scenario": {"preset": name}})


def parse_config(raw: dict) -> RunConfig:
    """Validate a raw mapping and resolve scenario presets."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a table")
    for key in raw:
        if key not in ("scenario", "solver", "output", "seed"):
            raise ConfigError(f"unknown key {key}")
    base = RunConfig()
    sc_raw = dict(raw.get("scenario", {}))
    preset = sc_raw.get("preset", "")
    if preset:
        if not isinstance(preset, str):
            raise ConfigError("scenario.preset: expected a string")
        pre = tomli.loads(_preset_text(preset))
        if pre.get("scenario", {}).get("preset"):
            raise ConfigError(f"preset {preset!r} must not reference another preset")
        base = parse_config(pre)
    seed = raw.get("seed", base.seed)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed: expected an integer")
    cfg = RunConfig(
        scenario=_coerce(ScenarioConfig, "scenario", sc_raw, base.scenario),
        solver=_coerce(SolverConfig, "solver", raw.get("solver", {}), base.solver),
        output=_coerce(OutputConfig, "output", raw.get("output", {}), base.output),
        seed=seed,
    )
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    sc, so = cfg.scenario, cfg.solver
    try:
        Grid(sc.dim, sc.n, sc.period)
    except ValueError as exc:
        raise ConfigError(f"scenario grid: {exc}") from exc
    if sc.potential_profile not in _POTENTIAL_PROFILES:
        raise ConfigError(f"scenario.potential_profile: expected one of {_POTENTIAL_PROFILES}")
    if so.solver not in ("eikonal", "wkb", "schrodinger", "converge", "check-ops"):
        raise ConfigError(f"solver.solver: unknown solver {so.solver!r}")
    if so.form not in ("scalar_phase", "velocity", "straightened"):
        raise ConfigError(f"solver.form: unknown form {so.form!r}")
    if so.T <= 0 or so.dt <= 0:
        raise ConfigError("solver.T and solver.dt must be positive")
    if not so.ceiling > 0:
        raise ConfigError("solver.ceiling must be positive")
    if so.output_stride < 1:
        raise ConfigError("solver.output_stride must be >= 1")
    for fmt in cfg.output.formats:
        if fmt not in ("csv", "json", "dump"):
            raise ConfigError(f"output.formats: unknown format {fmt!r}")


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        raw = json.loads(text) if path.suffix == ".json" else tomli.loads(text)
    except (tomli.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(raw)


def dump_manifest(cfg: RunConfig) -> str:
    """Fully resolved config as TOML; re-parses to an equal :class:`RunConfig`."""
    return tomli_w.dumps(cfg.to_dict())


# ---------------------------------------------------------------------------
# scenario construction


def _field(grid: Grid, modes: tuple[Mode, ...]) -> SpectralField:
    return SpectralField.from_modes(grid, [(m.mode, complex(m.re, m.im)) for m in modes])


def _matrix(value, dim: int, key: str):
    if value == () or value is None:
        return None
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(dim)
    if arr.shape != (dim, dim):
        raise ConfigError(f"scenario.{key}: expected a scalar or a {dim}x{dim} matrix")
    return arr


def _vector(value, dim: int, key: str):
    if value == () or value is None:
        return None
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size != dim:
        raise ConfigError(f"scenario.{key}: expected {dim} components")
    return arr


def build_scenario(cfg: RunConfig) -> Scenario:
    sc = cfg.scenario
    grid = Grid(sc.dim, sc.n, sc.period)
    try:
        fields_ = {k: _field(grid, getattr(sc, k)) for k in _MODE_KEYS}
    except ValueError as exc:
        raise ConfigError(f"scenario field modes: {exc}") from exc
    doping = fields_["doping"]
    if abs(doping.mean()) > 0:
        raise ConfigError("scenario.doping must be mean free; put the mean in c_const")
    a0 = fields_["a0"]
    if sc.a0_noise:
        rng = np.random.default_rng(cfg.seed)
        noise = []
        for m in np.ndindex(*([5] * sc.dim)):
            mv = tuple(v - 2 for v in m)
            if any(mv):
                noise.append((mv, sc.a0_noise * complex(rng.standard_normal(), rng.standard_normal()) / (1 + sum(v * v for v in mv))))
        a0 = a0 + SpectralField.from_modes(grid, noise).real
    Q = _matrix(sc.Q, sc.dim, "Q")
    E = _vector(sc.E, sc.dim, "E")
    if sc.potential_profile == "cosine":
        w = sc.potential_frequency
        Qc, Ec = Q, E
        Q = None if Qc is None else (lambda t: Qc * math.cos(w * t))
        E = None if Ec is None else (lambda t: Ec * math.cos(w * t))
    pot = QuadraticPotentialSpec.build(sc.dim, Q=Q, E=E, gamma=sc.gamma, name=sc.potential_profile)
    v_pert = fields_["v_pert"] if sc.v_pert else None
    try:
        return Scenario(
            grid=grid,
            a0=a0,
            phi0=fields_["phi0"].real,
            pot_quad=pot,
            v_pert=v_pert.real if v_pert is not None else None,
            doping_tilde=doping.real,
            c_const=sc.c_const,
            charge_q=sc.q,
            a1=fields_["a1"],
            r_eps_scale=sc.r_eps_scale,
            r_shape=fields_["r_shape"],
            r_power=sc.r_power,
            M0=_matrix(sc.M0, sc.dim, "M0"),
            alpha0=_vector(sc.alpha0, sc.dim, "alpha0"),
            beta0=sc.beta0,
            name=sc.name,
        )
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from exc
