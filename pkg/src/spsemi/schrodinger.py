"""Strang splitting for the eps-scaled Schrodinger-Poisson equation on the torus.

    i eps u_t + (eps^2 / 2) Lap u = (E(t).x + gamma(t) + V_pert + V_p) u,
    Lap V_p = q (|u|^2 - c)

A linear external field (or a nonzero initial slope ``alpha0``) is removed by
the Avron-Herbst gauge ``u = w exp(i alpha(t).x / eps)``: ``w`` stays periodic
and its free flow is the Fourier multiplier
``exp(-i eps dt |xi|^2 / 2 - i xi.(s(t+dt) - s(t)) + i (beta(t+dt) - beta(t)) / eps)``
with ``(alpha, beta, s)`` taken from the linear eikonal phase.  Without a
linear field the same multiplier reduces to the plain kinetic step (times the
scalar phase of ``gamma``).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .eikonal import QuadraticPhase
from .spectral import SpectralField, norm_l2
from .wkb import Scenario, _steps

__all__ = ["WaveState", "WaveTrajectory", "solve_schrodinger", "energy_functional", "initial_wave"]

WAVE_COLUMNS = ("t", "mass", "poisson_residual", "energy")


@dataclass(frozen=True)
class WaveState:
    """``u`` at time ``t``.  In the Avron-Herbst gauge ``u`` holds ``w`` and the
    physical wave is ``w exp(i alpha.x / eps)``."""

    t: float
    u: SpectralField
    eps: float
    gauge: str = "plain"
    alpha: np.ndarray | None = None
    shift: np.ndarray | None = None
    beta: float = 0.0


@dataclass
class WaveTrajectory:
    scenario: Scenario
    eps: float
    dt: float
    T: float
    gauge: str
    snapshots: list[WaveState]
    diagnostics: dict[str, np.ndarray]
    phase: QuadraticPhase
    flags: list[str] = field(default_factory=list)
    max_phase_rotation: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def final(self) -> WaveState:
        return self.snapshots[-1]

    def snapshot_at(self, t: float, tol: float = 1e-9) -> WaveState:
        times = self.times
        k = int(np.argmin(np.abs(times - t)))
        if abs(times[k] - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"no snapshot at t={t}")
        return self.snapshots[k]

    def write_diagnostics_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(WAVE_COLUMNS)
        for row in zip(*(self.diagnostics[c] for c in WAVE_COLUMNS)):
            writer.writerow(["%.17g" % float(v) for v in row])


def initial_wave(sc: Scenario, eps: float) -> SpectralField:
    """``a0^eps exp(i (beta0 + phi0) / eps)``; the slope ``alpha0`` is carried by the gauge."""
    a = sc.initial_amplitude(eps)
    return SpectralField(sc.grid, a.values * np.exp(1j * (sc.beta0 + sc.phi0.values.real) / eps))


def _poisson(sc: Scenario, dens: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Physical ``V_p`` and its coefficients for density samples ``dens``."""
    grid = sc.grid
    src = grid.forward(dens) - sc.doping().coeffs
    V_hat = sc.charge_q * grid.inverse_laplacian * src
    return grid.inverse(V_hat).real, V_hat


def energy_functional(state: WaveState, sc: Scenario) -> tuple[float, bool]:
    """``||eps grad u||^2 / 2 + int V_pert |u|^2 + (1/2) int V_p (|u|^2 - c)``.

    Returns ``(value, conserved)``; ``conserved`` is False when ``V_pert``
    depends on time.  Only meaningful in the plain gauge.
    """
    if state.gauge != "plain":
        raise ValueError("energy functional is defined in the plain gauge only")
    grid = sc.grid
    u = state.u
    eps = state.eps
    kin = 0.5 * eps**2 * grid.volume * float(np.sum(grid.k2 * np.abs(u.coeffs) ** 2))
    dens = np.abs(u.values) ** 2
    vp = sc.v_pert_at(state.t).values.real
    ext = float(np.sum(vp * dens)) * grid.cell_volume
    V, _ = _poisson(sc, dens)
    rho = dens - sc.doping().values.real
    pois = 0.5 * float(np.sum(V * rho)) * grid.cell_volume
    return kin + ext + pois, not sc.v_pert_time_dependent


def solve_schrodinger(
    sc: Scenario,
    eps: float,
    T: float = 1.0,
    dt: float = 1e-3,
    *,
    output_stride: int = 1,
    rotation_bound: float = math.pi,
    energy: bool = True,
) -> WaveTrajectory:
    """Strang splitting: half potential step, free/gauge multiplier, half potential step.

    ``dt max|V| / eps`` above ``rotation_bound`` adds a warning flag.
    """
    if eps <= 0:
        raise ValueError("eps must be positive; the eps = 0 limit is solved by the WKB system")
    if sc.requires_straightening:
        raise ValueError("quadratic external potentials are not supported by the direct solver")
    if output_stride < 1:
        raise ValueError("output_stride must be >= 1")
    n_steps, dt = _steps(T, dt)
    grid = sc.grid
    phase = sc.eikonal(T, dt)
    gauge = "avron_herbst" if sc.has_linear_phase else "plain"
    xi = grid.wavenumbers
    k2 = grid.k2
    free = np.exp(-0.5j * eps * dt * k2)
    vpert_static = None if sc.v_pert_time_dependent else sc.v_pert_at(0.0).values.real

    def vpert(t):
        return vpert_static if vpert_static is not None else sc.v_pert_at(t).values.real

    def potential(u_vals, t):
        V, _ = _poisson(sc, np.abs(u_vals) ** 2)
        return vpert(t) + V

    def state_of(t, k, vals):
        return WaveState(
            t=t,
            u=SpectralField(grid, vals),
            eps=eps,
            gauge=gauge,
            alpha=phase.alpha[k].copy(),
            shift=phase.shift[k].copy(),
            beta=float(phase.beta[k]),
        )

    def diag_row(t, vals):
        dens = np.abs(vals) ** 2
        _, V_hat = _poisson(sc, dens)
        src = grid.forward(dens) - sc.doping().coeffs
        src[(0,) * grid.dim] = 0.0
        resid = -k2 * V_hat - sc.charge_q * src
        denom = max(abs(sc.charge_q) * math.sqrt(float(np.sum(np.abs(src) ** 2))), 1e-300)
        pres = math.sqrt(float(np.sum(np.abs(resid) ** 2))) / denom if sc.charge_q else 0.0
        mass = math.sqrt(grid.cell_volume * float(np.sum(dens)))
        en = float("nan")
        if energy and gauge == "plain":
            en, _ = energy_functional(WaveState(t, SpectralField(grid, vals), eps), sc)
        return (t, mass, pres, en)

    u = initial_wave(sc, eps).values.copy()
    snaps = [state_of(0.0, 0, u)]
    rows = [diag_row(0.0, u)]
    flags: list[str] = []
    if sc.v_pert_time_dependent:
        flags.append("energy not conserved: V_pert depends on time")
    max_rot = 0.0
    for k in range(n_steps):
        t = k * dt
        V = potential(u, t)
        max_rot = max(max_rot, dt * float(np.max(np.abs(V))) / eps)
        u = u * np.exp(-0.5j * dt * V / eps)
        s0, s1 = phase.shift[k], phase.shift[k + 1]
        db = phase.beta[k + 1] - phase.beta[k]
        mult = free * np.exp(-1j * np.tensordot(s1 - s0, xi, axes=1) + 1j * db / eps)
        u = grid.inverse(mult * grid.forward(u))
        V = potential(u, t + dt)
        max_rot = max(max_rot, dt * float(np.max(np.abs(V))) / eps)
        u = u * np.exp(-0.5j * dt * V / eps)
        rows.append(diag_row(t + dt, u))
        if (k + 1) % output_stride == 0 or k + 1 == n_steps:
            snaps.append(state_of(t + dt, k + 1, u))
    if max_rot > rotation_bound:
        flags.append(f"phase rotation per step {max_rot:.3g} exceeds bound {rotation_bound:.3g}")
    diag = {c: np.array([r[i] for r in rows]) for i, c in enumerate(WAVE_COLUMNS)}
    return WaveTrajectory(
        scenario=sc,
        eps=eps,
        dt=dt,
        T=T,
        gauge=gauge,
        snapshots=snaps,
        diagnostics=diag,
        phase=phase,
        flags=flags,
        max_phase_rotation=max_rot,
    )


def mass(state: WaveState) -> float:
    return norm_l2(state.u)
