"""Quadratic observables, WKB reconstruction and the eps / h convergence harness."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .eikonal import QuadraticPhase, eval_phase_gradient
from .schrodinger import WaveTrajectory, solve_schrodinger
from .spectral import (
    Grid,
    SpectralField,
    VectorField,
    gradient,
    norm_hs,
    norm_l2,
    norm_linf,
    norm_zhidkov,
    resample,
    vector_norm_hs,
    vector_norm_l2,
    vector_norm_zhidkov,
)
from .wkb import (
    CorrectorTrajectory,
    Scenario,
    WkbState,
    WkbTrajectory,
    solve_corrector,
    solve_wkb,
    solve_wkb_mollified,
)

__all__ = [
    "position_density",
    "momentum_density",
    "modified_momentum_density",
    "wkb_momentum_density",
    "straightened_modified_momentum",
    "wkb_reconstruct",
    "RateFit",
    "fit_rate",
    "SweepAborted",
    "run_epsilon_sweep",
    "run_h_sweep",
    "harness_horizon",
    "COMPARE_MODES",
]

COMPARE_MODES = ("density", "amplitude", "momentum", "modified_momentum", "pointwise_L2", "pointwise_Linf")
ROUNDOFF_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# observables


def position_density(u: SpectralField) -> SpectralField:
    return SpectralField(u.grid, np.abs(u.values) ** 2)


def momentum_density(u: SpectralField, eps: float, frame: np.ndarray | None = None) -> VectorField:
    """``eps Im(conj(u) grad u)`` with a spectral gradient.

    ``frame`` (a constant ``dim x dim`` matrix ``P``) replaces the gradient by
    ``P grad``, as used along straightened characteristics.
    """
    grid = u.grid
    xi = grid.wavenumbers if frame is None else np.tensordot(frame, grid.wavenumbers, axes=1)
    grads = grid.inverse(1j * xi * u.coeffs)
    conj = np.conj(u.values)
    return VectorField(tuple(SpectralField(grid, eps * (conj * gc).imag) for gc in grads))


def _points(grid: Grid) -> np.ndarray:
    return np.moveaxis(grid.mesh, 0, -1)


def modified_momentum_density(
    u: SpectralField, eps: float, phase: QuadraticPhase, t: float, gauged: bool = False
) -> VectorField:
    """Momentum of ``u exp(-i phi_eik / eps)`` written as ``J(u) - |u|^2 grad phi_eik``.

    With ``gauged=True`` the wave is the Avron-Herbst ``w`` whose linear phase
    has already been removed, so only the quadratic part is subtracted.
    """
    grid = u.grid
    mom = momentum_density(u, eps)
    grad = eval_phase_gradient(phase, t, _points(grid))
    if gauged:
        _, alpha, _ = phase.coefficients(t)
        grad = grad - alpha
    rho = position_density(u).values.real
    return VectorField(tuple(SpectralField(grid, m.values.real - rho * grad[..., i]) for i, m in enumerate(mom)))


def wkb_momentum_density(state: WkbState, phase: QuadraticPhase, modified: bool = False) -> VectorField:
    """Momentum of ``u = a exp(i (phi_eik + phi) / eps)`` from the WKB state, without forming ``u``.

    Uses the exact identity ``eps Im(conj(u) grad u) = |a|^2 (grad phi_eik + grad phi) + eps Im(conj(a) grad a)``;
    ``modified=True`` drops the ``grad phi_eik`` contribution.  Linear eikonal phases only.
    """
    if state.form == "straightened":
        return straightened_modified_momentum(state, phase)
    grid = state.a.grid
    a = state.a
    rho = np.abs(a.values) ** 2
    v = state.velocity().values.real
    if not modified:
        _, alpha, _ = phase.coefficients(state.t)
        if not phase.is_linear:
            raise ValueError("use the straightened form for quadratic eikonal phases")
        v = v + alpha.reshape((-1,) + (1,) * grid.dim)
    ga = gradient(a).values
    corr = state.eps * (np.conj(a.values) * ga).imag
    return VectorField(tuple(SpectralField(grid, rho * v[i] + corr[i]) for i in range(grid.dim)))


def straightened_modified_momentum(state: WkbState, phase: QuadraticPhase) -> VectorField:
    """``|a|^2 v + eps Im(conj(a) d a)`` along characteristics, ``d = Phi^{-T} grad`` and ``a = a_tilde e^{-g}``."""
    if state.form != "straightened":
        raise ValueError("state is not in straightened form")
    grid = state.a.grid
    a = state.amplitude()
    P = np.linalg.inv(phase.Phi_at(state.t)).T
    rho = np.abs(a.values) ** 2
    v = state.v.values.real
    corr = momentum_density(a, state.eps, frame=P).values.real if state.eps else 0.0 * v
    return VectorField(tuple(SpectralField(grid, rho * v[i] + corr[i]) for i in range(grid.dim)))


def wkb_reconstruct(
    a: SpectralField,
    phi: SpectralField,
    phase: QuadraticPhase,
    eps: float,
    t: float,
    corrector: tuple[SpectralField, SpectralField] | None = None,
    gauged: bool = False,
) -> SpectralField:
    """``(a + eps b) exp(i phi1) exp(i (phi_eik + phi) / eps)`` sampled on the grid.

    The eikonal phase must be linear.  Its slope term ``alpha.x`` is kept only
    when ``alpha / eps`` is a grid wavenumber; with ``gauged=True`` it is dropped
    instead, which matches the Avron-Herbst frame of the Schrodinger solver.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    grid = a.grid
    M, alpha, beta = phase.coefficients(t)
    if np.any(M != 0):
        raise ValueError("quadratic eikonal phases are not periodic; reconstruct in the straightened frame")
    total = phi.values.real + beta
    if not gauged and np.any(alpha != 0):
        m = alpha / (eps * grid.fundamental)
        if np.max(np.abs(m - np.round(m))) > 1e-9:
            raise ValueError(
                f"linear phase slope alpha/eps = {alpha / eps} is not a grid wavenumber; use gauged=True"
            )
        total = total + np.tensordot(alpha, grid.mesh, axes=1)
    amp = a.values
    if corrector is not None:
        phi1, b = corrector
        amp = (amp + eps * b.values) * np.exp(1j * phi1.values.real)
    return SpectralField(grid, amp * np.exp(1j * total / eps))


# ---------------------------------------------------------------------------
# rate fits


@dataclass
class RateFit:
    """Error table over a decreasing parameter list with per-column log-log fits."""

    parameter: str
    params: np.ndarray
    errors: dict[str, np.ndarray]
    primary: str
    slopes: dict[str, float] = field(default_factory=dict)
    intercepts: dict[str, float] = field(default_factory=dict)
    residuals: dict[str, float] = field(default_factory=dict)
    dropped: dict[str, list[float]] = field(default_factory=dict)
    status: dict[str, str] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)
    info: dict[str, float] = field(default_factory=dict)
    reference: tuple[str, ...] = ()

    @property
    def slope(self) -> float:
        return self.slopes[self.primary]

    @property
    def residual(self) -> float:
        return self.residuals[self.primary]

    @property
    def intercept(self) -> float:
        return self.intercepts[self.primary]

    def passes(self, min_slope: float, max_residual: float | None = None, column: str | None = None) -> bool:
        """All-zero columns pass (nothing to converge); otherwise slope and residual are checked."""
        col = column or self.primary
        if self.status[col] == "all-zero":
            return True
        if self.status[col] != "ok" or not self.slopes[col] >= min_slope:
            return False
        return max_residual is None or self.residuals[col] <= max_residual

    def passes_all(self, min_slope: float, max_residual: float | None = None) -> bool:
        """Every column except the ``reference`` ones passes, and every check holds."""
        cols = [c for c in self.errors if c not in self.reference]
        return all(self.passes(min_slope, max_residual, c) for c in cols) and all(self.checks.values())

    def write_csv(self, fh) -> None:
        cols = list(self.errors)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([self.parameter] + cols)
        for i, p in enumerate(self.params):
            writer.writerow(["%.17g" % p] + ["%.17g" % self.errors[c][i] for c in cols])
        for label, table in (("slope", self.slopes), ("intercept", self.intercepts), ("residual", self.residuals)):
            writer.writerow([label] + ["%.17g" % table[c] for c in cols])

    def summary(self) -> dict:
        return {
            "parameter": self.parameter,
            "params": [float(p) for p in self.params],
            "primary": self.primary,
            "errors": {c: [float(e) for e in v] for c, v in self.errors.items()},
            "slopes": {c: float(v) for c, v in self.slopes.items()},
            "intercepts": {c: float(v) for c, v in self.intercepts.items()},
            "residuals": {c: float(v) for c, v in self.residuals.items()},
            "status": dict(self.status),
            "dropped": {c: [float(x) for x in v] for c, v in self.dropped.items()},
            "checks": {c: bool(v) for c, v in self.checks.items()},
            "info": {c: float(v) for c, v in self.info.items()},
            "reference": list(self.reference),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def fit_rate(parameter: str, params: Sequence[float], errors: dict[str, Sequence[float]], primary: str) -> RateFit:
    """Least-squares fit of ``log(error) = slope log(param) + intercept`` per column.

    Errors below the round-off floor are excluded and listed in ``dropped``.
    A column with fewer than two usable points is ``"all-zero"`` when every
    error sits at the floor, ``"degenerate"`` otherwise; its slope is ``nan``.
    """
    params = np.asarray(params, dtype=float)
    if primary not in errors:
        raise ValueError(f"primary column {primary!r} missing")
    fit = RateFit(parameter, params, {c: np.asarray(v, dtype=float) for c, v in errors.items()}, primary)
    for col, errs in fit.errors.items():
        if errs.shape != params.shape:
            raise ValueError(f"column {col!r} has {errs.size} entries for {params.size} parameters")
        keep = errs > ROUNDOFF_FLOOR
        fit.dropped[col] = [float(p) for p in params[~keep]]
        if keep.sum() < 2:
            fit.slopes[col] = fit.intercepts[col] = fit.residuals[col] = float("nan")
            fit.status[col] = "all-zero" if not keep.any() else "degenerate"
            continue
        x = np.log(params[keep])
        y = np.log(errs[keep])
        slope, intercept = np.polyfit(x, y, 1)
        fit.slopes[col] = float(slope)
        fit.intercepts[col] = float(intercept)
        fit.residuals[col] = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
        fit.status[col] = "ok"
    return fit


# ---------------------------------------------------------------------------
# sweeps


class SweepAborted(RuntimeError):
    def __init__(self, parameter: str, value: float, time: float | None, status: str):
        self.parameter = parameter
        self.value = value
        self.time = time
        self.status = status
        super().__init__(f"member run {parameter}={value:g} flagged {status!r} at t={time}")


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _check_decreasing(values: Sequence[float], name: str):
    v = list(values)
    if len(v) < 3:
        raise ValueError(f"{name} needs at least 3 values")
    if any(b >= a for a, b in zip(v, v[1:])):
        raise ValueError(f"{name} must be strictly decreasing")


def _guard(tr, parameter: str, value: float):
    if getattr(tr, "is_partial", False):
        raise SweepAborted(parameter, value, tr.blowup_time, tr.status)


def harness_horizon(
    sc: Scenario, eps_list: Sequence[float], T: float, dt: float, form: str = "scalar_phase", threads: int = 1, **kw
) -> float:
    """``T`` itself, or half the smallest blow-up time flagged by any member run on ``[0, T]``."""
    runs = _map(lambda e: solve_wkb(sc, e, form, T, dt, output_stride=max(1, int(round(T / dt))), **kw), list(eps_list), threads)
    times = [r.blowup_time for r in runs if r.is_partial and r.blowup_time is not None]
    return 0.5 * min(times) if times else T


def _common_times(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> list[tuple[int, int]]:
    pairs = []
    for i, t in enumerate(a):
        j = int(np.argmin(np.abs(b - t)))
        if abs(b[j] - t) <= tol * max(1.0, abs(t)):
            pairs.append((i, j))
    return pairs


def _wkb_errors(run: WkbTrajectory, limit: WkbTrajectory, s: float) -> dict[str, float]:
    dens = amp = vel = 0.0
    for i, j in _common_times(run.times, limit.times):
        x, y = run.snapshots[i], limit.snapshots[j]
        ax, ay = x.amplitude(), y.amplitude()
        dens = max(dens, norm_l2(position_density(ax) - position_density(ay)))
        amp = max(amp, norm_hs(ax - ay, s))
        vel = max(vel, vector_norm_zhidkov(x.velocity() - y.velocity(), s))
    return {"density_L2": dens, "amplitude_Hs": amp, "velocity_Xs": vel}


def _momentum_errors(run: WkbTrajectory, limit: WkbTrajectory, modified: bool) -> dict[str, float]:
    err = 0.0
    for i, j in _common_times(run.times, limit.times):
        x, y = run.snapshots[i], limit.snapshots[j]
        mx = wkb_momentum_density(x, run.phase, modified)
        my = wkb_momentum_density(y, limit.phase, modified)
        err = max(err, vector_norm_l2(mx - my))
    return {"momentum_L2": err}


def _pointwise_errors(
    wave: WaveTrajectory, limit: WkbTrajectory, corr: CorrectorTrajectory, eps: float
) -> dict[str, float]:
    n = wave.scenario.grid.n
    out = {"corrected_L2": 0.0, "corrected_Linf": 0.0, "uncorrected_L2": 0.0, "uncorrected_Linf": 0.0}
    gauged = wave.gauge == "avron_herbst"
    for i, j in _common_times(wave.times, limit.times):
        st = limit.snapshots[j]
        u = wave.snapshots[i].u
        a, phi = resample(st.a, n), resample(st.phi, n)
        phi1, b = corr.at(st.t)
        c = (resample(phi1, n), resample(b, n))
        rec = wkb_reconstruct(a, phi, limit.phase, eps, st.t, corrector=c, gauged=gauged)
        bare = wkb_reconstruct(a, phi, limit.phase, eps, st.t, gauged=gauged)
        out["corrected_L2"] = max(out["corrected_L2"], norm_l2(u - rec))
        out["corrected_Linf"] = max(out["corrected_Linf"], norm_linf(u - rec))
        out["uncorrected_L2"] = max(out["uncorrected_L2"], norm_l2(u - bare))
        out["uncorrected_Linf"] = max(out["uncorrected_Linf"], norm_linf(u - bare))
    return out


_PRIMARY = {
    "density": "density_L2",
    "amplitude": "amplitude_Hs",
    "momentum": "momentum_L2",
    "modified_momentum": "momentum_L2",
    "pointwise_L2": "corrected_L2",
    "pointwise_Linf": "corrected_Linf",
}


def run_epsilon_sweep(
    sc: Scenario,
    eps_list: Sequence[float],
    T: float,
    dt: float,
    compare: str = "density",
    *,
    form: str | None = None,
    s: float = 3.0,
    output_stride: int = 1,
    threads: int = 1,
    wave_n: int | None = None,
    wave_dt: float | None = None,
    ratio_floor: float = 10.0,
    ceiling: float = 1e6,
) -> RateFit:
    """Error of the eps-problem against the eps = 0 limit for each eps, with a log-log fit.

    ``density``/``amplitude``: WKB(eps) vs WKB(0) in density L2, amplitude H^s
    and velocity X^s (sup over common output times).  ``momentum``: momentum
    density of the WKB solution vs ``|a|^2 grad(phi_eik + phi)``.
    ``modified_momentum``: the same with ``grad phi_eik`` removed, run in
    straightened form.  ``pointwise_*``: Schrodinger(eps) on ``wave_n`` points
    vs the reconstruction with and without the first-order corrector; the check
    ``uncorrected_vs_corrected`` requires the uncorrected error to exceed
    ``ratio_floor`` times the corrected one at the smallest eps.
    """
    if compare not in COMPARE_MODES:
        raise ValueError(f"unknown compare mode {compare!r}; expected one of {COMPARE_MODES}")
    eps_list = [float(e) for e in eps_list]
    _check_decreasing(eps_list, "eps_list")
    if form is None:
        form = "straightened" if (compare == "modified_momentum" or sc.requires_straightening) else "scalar_phase"
    pointwise = compare.startswith("pointwise")
    if pointwise and form != "scalar_phase":
        raise ValueError("pointwise comparisons need the scalar_phase form")
    stride = 1 if pointwise else output_stride

    limit = solve_wkb(sc, 0.0, form, T, dt, s=s, output_stride=stride, ceiling=ceiling)
    _guard(limit, "eps", 0.0)
    corr = solve_corrector(sc, limit) if pointwise else None

    def member(eps):
        if pointwise:
            wsc = sc.refined(wave_n or sc.grid.n)
            wave = solve_schrodinger(wsc, eps, T, wave_dt or dt, output_stride=max(1, int(round(dt * stride / (wave_dt or dt)))), energy=False)
            return _pointwise_errors(wave, limit, corr, eps)
        run = solve_wkb(sc, eps, form, T, dt, s=s, output_stride=stride, ceiling=ceiling)
        _guard(run, "eps", eps)
        if compare in ("density", "amplitude"):
            return _wkb_errors(run, limit, s)
        return _momentum_errors(run, limit, modified=compare == "modified_momentum")

    rows = _map(member, eps_list, threads)
    cols = {c: [r[c] for r in rows] for c in rows[0]}
    fit = fit_rate("eps", eps_list, cols, _PRIMARY[compare])
    fit.info["T"] = T
    if pointwise:
        fit.reference = ("uncorrected_L2", "uncorrected_Linf")
        last = rows[-1]
        for norm in ("L2", "Linf"):
            ratio = last[f"uncorrected_{norm}"] / max(last[f"corrected_{norm}"], 1e-300)
            fit.info[f"uncorrected_over_corrected_{norm}"] = ratio
        fit.checks["uncorrected_vs_corrected"] = fit.info["uncorrected_over_corrected_L2"] >= ratio_floor
        fit.checks["corrected_below_uncorrected"] = all(
            r["corrected_L2"] < r["uncorrected_L2"] for r in rows
        )
    return fit


def rho_h(run: WkbTrajectory, direct: WkbTrajectory, s: float) -> float:
    """``sup_t ||w||_inf + ||grad w||_{H^s} + ||d||_{H^s}`` with ``w = v_h - v``, ``d = a_h - a``."""
    worst = 0.0
    for i, j in _common_times(run.times, direct.times):
        x, y = run.snapshots[i], direct.snapshots[j]
        w = x.v - y.v
        linf = float(np.max(np.sqrt(np.sum(np.abs(w.values) ** 2, axis=0))))
        gw = math.sqrt(sum(vector_norm_hs(gradient(c), s) ** 2 for c in w.components))
        worst = max(worst, linf + gw + norm_hs(x.a - y.a, s))
    return worst


def run_h_sweep(
    sc: Scenario,
    eps: float,
    h_list: Sequence[float],
    T: float,
    dt: float,
    *,
    s: float = 3.0,
    output_stride: int = 1,
    threads: int = 1,
    ceiling: float = 1e6,
) -> RateFit:
    """Distance ``rho_h`` between the mollified and the direct velocity-form runs for each ``h``.

    ``checks["monotone"]`` records strict decrease of ``rho_h`` along ``h_list``.
    """
    h_list = [float(h) for h in h_list]
    _check_decreasing(h_list, "h_list")
    direct = solve_wkb(sc, eps, "velocity", T, dt, s=s, output_stride=output_stride, ceiling=ceiling)
    _guard(direct, "h", 0.0)

    def member(h):
        run = solve_wkb_mollified(sc, eps, h, T, dt, s=s, output_stride=output_stride, ceiling=ceiling)
        _guard(run, "h", h)
        return rho_h(run, direct, s)

    errs = _map(member, h_list, threads)
    fit = fit_rate("h", h_list, {"rho": errs}, "rho")
    fit.checks["monotone"] = all(b < a for a, b in zip(errs, errs[1:]))
    fit.info["T"] = T
    fit.info["eps"] = eps
    return fit
