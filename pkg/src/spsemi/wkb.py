"""Phase/amplitude WKB system: scalar-phase, velocity, mollified and straightened forms.

The amplitude/phase pair ``(a, phi)`` solves::

    phi_t + (alpha + grad phi/2) . grad phi + V_pert + V_p = 0
    a_t + (alpha + grad phi) . grad a + a Lap phi / 2 = i (eps/2) Lap a
    Lap V_p = q (|a|^2 - c)

where ``alpha(t)`` is the slope of a linear eikonal phase.  ``eps = 0`` gives
the Euler-Poisson limit.  Quadratic eikonal data are handled by the
straightened form, which works along characteristics ``x = Phi(t) y + s(t)``.

All states are held as Fourier coefficients and advanced with classical RK4;
quadratic products are dealiased by 3/2 zero padding unless ``dealias=False``.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .eikonal import (
    QuadraticPhase,
    QuadraticPotentialSpec,
    fundamental_matrix,
    solve_linear_eikonal,
    solve_quadratic_eikonal,
)
from .spectral import (
    Grid,
    SpectralField,
    VectorField,
    cutoff_symbol,
    norm_l2,
    norm_zhidkov,
    regularized_poisson_symbol,
    resample,
    vector_norm_zhidkov,
)

__all__ = [
    "FORMS",
    "Scenario",
    "WkbState",
    "WkbTrajectory",
    "CorrectorTrajectory",
    "solve_wkb",
    "solve_wkb_mollified",
    "solve_corrector",
    "NORM_BLOWUP",
]

FORMS = ("scalar_phase", "velocity", "straightened")
NORM_BLOWUP = "norm blow-up"
DIAGNOSTIC_COLUMNS = ("t", "a_Xs", "density_dev_L2", "velocity_Xs", "curl", "poisson_residual")


@dataclass(frozen=True)
class Scenario:
    """Complete problem description on one grid.

    ``v_pert`` is ``None``, a :class:`SpectralField` (time independent) or a
    callable ``t -> SpectralField``.  The doping profile is
    ``c = c_const + doping_tilde`` with ``doping_tilde`` mean free.  The initial
    amplitude for a given ``eps`` is ``a0 + eps a1 + r_eps_scale eps^r_power r_shape``.
    """

    grid: Grid
    a0: SpectralField
    phi0: SpectralField
    pot_quad: QuadraticPotentialSpec
    v_pert: SpectralField | Callable[[float], SpectralField] | None = None
    doping_tilde: SpectralField | None = None
    c_const: float = 1.0
    charge_q: float = 1.0
    a1: SpectralField | None = None
    r_eps_scale: float = 0.0
    r_shape: SpectralField | None = None
    r_power: float = 1.0
    M0: np.ndarray | None = None
    alpha0: np.ndarray | None = None
    beta0: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        dim = self.grid.dim
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("M0", np.zeros((dim, dim)) if self.M0 is None else np.asarray(self.M0, dtype=float).reshape(dim, dim))
        set_("alpha0", np.zeros(dim) if self.alpha0 is None else np.asarray(self.alpha0, dtype=float).reshape(dim))
        if self.doping_tilde is None:
            set_("doping_tilde", SpectralField.zeros(self.grid))
        if self.a1 is None:
            set_("a1", SpectralField.zeros(self.grid))
        if self.r_shape is None:
            set_("r_shape", SpectralField.zeros(self.grid))
        if self.pot_quad.dim != dim:
            raise ValueError("potential dimension does not match grid")
        fields = [self.a0, self.phi0, self.doping_tilde, self.a1, self.r_shape]
        if isinstance(self.v_pert, SpectralField):
            fields.append(self.v_pert)
        for f in fields:
            if f.grid != self.grid:
                raise ValueError("all scenario fields must share the scenario grid")
        mean = abs(self.doping_tilde.mean())
        if mean > 1e-12 * max(1.0, norm_l2(self.doping_tilde)):
            raise ValueError(f"doping_tilde must be mean free (mean {mean:.3e}); put the mean in c_const")
        if self.r_eps_scale < 0:
            raise ValueError("r_eps_scale must be >= 0")

    # -- data access -------------------------------------------------------
    def initial_amplitude(self, eps: float) -> SpectralField:
        a = self.a0 + eps * self.a1
        if self.r_eps_scale and eps > 0:
            a = a + (self.r_eps_scale * eps**self.r_power) * self.r_shape
        return a

    @property
    def v_pert_time_dependent(self) -> bool:
        return callable(self.v_pert) and not isinstance(self.v_pert, SpectralField)

    def v_pert_at(self, t: float) -> SpectralField:
        if self.v_pert is None:
            return SpectralField.zeros(self.grid)
        if isinstance(self.v_pert, SpectralField):
            return self.v_pert
        f = self.v_pert(t)
        if f.grid != self.grid:
            raise ValueError("v_pert(t) returned a field on the wrong grid")
        return f

    def doping(self) -> SpectralField:
        return self.doping_tilde + self.c_const

    @property
    def requires_straightening(self) -> bool:
        """True when the eikonal phase has a quadratic part (``Q`` or ``M0`` nonzero)."""
        return bool(self.pot_quad.quadratic or np.any(self.M0 != 0))

    @property
    def has_linear_phase(self) -> bool:
        return bool(self.pot_quad.linear or np.any(self.alpha0 != 0))

    def eikonal(self, T: float, dt: float, ghost: bool = False) -> QuadraticPhase:
        """Eikonal phase on ``[0, T]`` sampled every ``dt`` (characteristics included)."""
        if self.requires_straightening or ghost:
            phase = solve_quadratic_eikonal(
                self.pot_quad, self.M0, self.alpha0, self.beta0, self.charge_q * self.c_const, ghost, T, dt
            )
        else:
            phase = solve_linear_eikonal(self.pot_quad.E, self.alpha0, self.beta0, T, dt, gamma=self.pot_quad.gamma)
        return fundamental_matrix(phase)

    def refined(self, n: int) -> "Scenario":
        """Same continuum data on a grid with ``n`` points per axis."""
        if n == self.grid.n:
            return self
        vp = self.v_pert
        if isinstance(vp, SpectralField):
            vp = resample(vp, n)
        elif vp is not None:
            old = vp
            vp = lambda t: resample(old(t), n)  # noqa: E731
        return dataclasses.replace(
            self,
            grid=self.grid.refined(n),
            a0=resample(self.a0, n),
            phi0=resample(self.phi0, n),
            v_pert=vp,
            doping_tilde=resample(self.doping_tilde, n),
            a1=resample(self.a1, n),
            r_shape=resample(self.r_shape, n),
        )

    def with_(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class WkbState:
    """Snapshot of a WKB run.

    In the straightened form ``a`` holds the rescaled amplitude
    ``a_tilde = a exp(g)`` expressed in the characteristic variable; use
    :meth:`amplitude` for ``a`` itself.
    """

    t: float
    a: SpectralField
    eps: float
    form: str
    phi: SpectralField | None = None
    v: VectorField | None = None
    g: float = 0.0

    def amplitude(self) -> SpectralField:
        if self.form == "straightened" and self.g != 0.0:
            return self.a * math.exp(-self.g)
        return self.a

    def velocity(self) -> VectorField:
        """``grad phi`` (scalar form) or the stored velocity."""
        if self.v is not None:
            return self.v
        xi = self.a.grid.wavenumbers
        return VectorField.from_coeffs(self.a.grid, 1j * xi * self.phi.coeffs)


@dataclass
class WkbTrajectory:
    scenario: Scenario
    eps: float
    form: str
    dt: float
    T: float
    snapshots: list[WkbState]
    diagnostics: dict[str, np.ndarray]
    phase: QuadraticPhase
    status: str = "ok"
    blowup_time: float | None = None
    h: float | None = None
    s: float = 3.0
    stride: int = 1

    @property
    def times(self) -> np.ndarray:
        return np.array([st.t for st in self.snapshots])

    @property
    def is_partial(self) -> bool:
        return self.status != "ok"

    @property
    def final(self) -> WkbState:
        return self.snapshots[-1]

    def snapshot_at(self, t: float, tol: float = 1e-9) -> WkbState:
        times = self.times
        k = int(np.argmin(np.abs(times - t)))
        if abs(times[k] - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"no snapshot at t={t}")
        return self.snapshots[k]

    def sup(self, column: str) -> float:
        return float(np.max(self.diagnostics[column]))

    def write_diagnostics_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DIAGNOSTIC_COLUMNS)
        cols = [self.diagnostics[c] for c in DIAGNOSTIC_COLUMNS]
        for row in zip(*cols):
            writer.writerow(["%.17g" % float(v) for v in row])


# ---------------------------------------------------------------------------
# right-hand sides


class _Products:
    """Pointwise products with optional 3/2 padding."""

    def __init__(self, grid: Grid, dealias: bool):
        self.grid = grid
        self.dealias = dealias

    def to_phys(self, coeffs: np.ndarray) -> np.ndarray:
        if self.dealias:
            return self.grid.to_fine(coeffs)
        axes = tuple(range(-self.grid.dim, 0))
        import scipy.fft as sfft

        return sfft.ifftn(coeffs, axes=axes, norm="forward")

    def to_spec(self, values: np.ndarray) -> np.ndarray:
        if self.dealias:
            return self.grid.from_fine(values)
        import scipy.fft as sfft

        axes = tuple(range(-self.grid.dim, 0))
        out = sfft.fftn(values, axes=axes, norm="forward")
        out[..., self.grid.nyquist_mask] = 0.0
        return out


def _inv_symbol(k2: np.ndarray) -> np.ndarray:
    safe = np.where(k2 > 0, k2, 1.0)
    return np.where(k2 > 0, -1.0 / safe, 0.0)


class _System:
    """Shared plumbing: grid data, eikonal samples at half steps, Poisson coupling."""

    def __init__(self, sc: Scenario, eps: float, phase: QuadraticPhase, dealias: bool):
        self.sc = sc
        self.grid = sc.grid
        self.eps = eps
        self.phase = phase
        self.q = sc.charge_q
        self.xi = self.grid.wavenumbers
        self.k2 = self.grid.k2
        self.ops = _Products(self.grid, dealias)
        self.c_hat = sc.doping().coeffs
        self.dim = self.grid.dim
        self._vpert_cache = None
        if not sc.v_pert_time_dependent:
            self._vpert_cache = self.grid.truncate(sc.v_pert_at(0.0).coeffs)

    def vpert_hat(self, t: float) -> np.ndarray:
        if self._vpert_cache is not None:
            return self._vpert_cache
        return self.grid.truncate(self.sc.v_pert_at(t).coeffs)

    def alpha_dot_xi(self, j: int) -> np.ndarray:
        alpha = self.phase.alpha[j]
        return np.tensordot(alpha, self.xi, axes=1)

    def poisson_hat(self, dens_hat: np.ndarray) -> np.ndarray:
        return self.q * self.grid.inverse_laplacian * (dens_hat - self.c_hat)


class _ScalarPhase(_System):
    def initial(self):
        return (self.grid.truncate(self.sc.phi0.coeffs), self.grid.truncate(self.sc.initial_amplitude(self.eps).coeffs))

    def rhs(self, j, state):
        phi, a = state
        d = self.dim
        xi = self.xi
        stack = np.concatenate([1j * xi * phi, (-self.k2 * phi)[None], a[None], 1j * xi * a])
        P = self.ops.to_phys(stack)
        gphi = P[:d].real
        lphi = P[d].real
        A = P[d + 1]
        ga = P[d + 2 :]
        prods = np.stack(
            [
                0.5 * np.sum(gphi**2, axis=0),
                np.sum(gphi * ga, axis=0) + 0.5 * A * lphi,
                np.abs(A) ** 2,
            ]
        )
        S = self.ops.to_spec(prods)
        adv = 1j * self.alpha_dot_xi(j)
        vp = self.poisson_hat(S[2])
        dphi = -adv * phi - S[0] - self.vpert_hat(self.phase.times[j]) - vp
        da = -adv * a - S[1] - 0.5j * self.eps * self.k2 * a
        return (dphi, da)

    def to_state(self, t, state, g=0.0):
        phi, a = state
        return WkbState(
            t=t,
            a=SpectralField(self.grid, coeffs=a),
            phi=SpectralField(self.grid, coeffs=phi),
            eps=self.eps,
            form="scalar_phase",
        )

    def velocity_coeffs(self, state):
        return 1j * self.xi * state[0]

    def amplitude_coeffs(self, state, j):
        return state[1]


class _Velocity(_System):
    form = "velocity"

    def initial(self):
        phi0 = self.grid.truncate(self.sc.phi0.coeffs)
        return (1j * self.xi * phi0, self.grid.truncate(self.sc.initial_amplitude(self.eps).coeffs))

    def _frame(self, j):
        return self.xi, self.k2

    def rhs(self, j, state):
        v, a = state
        d = self.dim
        xi, k2 = self._frame(j)
        jac = (1j * xi[None, :] * v[:, None]).reshape((d * d,) + v.shape[1:])  # d_j v_i at [i*d + j]
        div = np.sum(1j * xi * v, axis=0)
        stack = np.concatenate([v, jac, a[None], 1j * xi * a, div[None]])
        P = self.ops.to_phys(stack)
        V = P[:d].real
        J = P[d : d + d * d].real.reshape((d, d) + V.shape[1:])
        A = P[d + d * d]
        GA = P[d + d * d + 1 : d + d * d + 1 + d]
        DIV = P[-1].real
        adv = np.einsum("j...,ij...->i...", V, J)
        transport = np.sum(V * GA, axis=0) + 0.5 * A * DIV
        S = self.ops.to_spec(np.concatenate([adv, transport[None], (np.abs(A) ** 2)[None]]))
        return self._assemble(j, v, a, S[:d], S[d], S[d + 1], xi, k2)

    def _assemble(self, j, v, a, adv_hat, transport_hat, dens_hat, xi, k2):
        lin = 1j * self.alpha_dot_xi(j)
        pot = self.vpert_hat(self.phase.times[j]) + self.poisson_hat(dens_hat)
        dv = -lin * v - adv_hat - 1j * xi * pot
        da = -lin * a - transport_hat - 0.5j * self.eps * k2 * a
        return (dv, da)

    def to_state(self, t, state, g=0.0):
        v, a = state
        return WkbState(
            t=t,
            a=SpectralField(self.grid, coeffs=a),
            v=VectorField.from_coeffs(self.grid, v),
            eps=self.eps,
            form=self.form,
            g=g,
        )

    def velocity_coeffs(self, state):
        return state[0]

    def amplitude_coeffs(self, state, j):
        return state[1]


class _Mollified(_Velocity):
    def __init__(self, sc, eps, phase, dealias, h):
        super().__init__(sc, eps, phase, dealias)
        self.h = h
        self.J = cutoff_symbol(h).evaluate(self.grid).real
        self.R = regularized_poisson_symbol(h, sc.charge_q).evaluate(self.grid).real

    def rhs(self, j, state):
        v, a = state
        d = self.dim
        xi, J = self.xi, self.J
        Jv = J * v
        Ja = J * a
        jac = (1j * xi[None, :] * Jv[:, None]).reshape((d * d,) + v.shape[1:])
        div = np.sum(1j * xi * v, axis=0)
        stack = np.concatenate([v, jac, a[None], 1j * xi * Ja, div[None]])
        P = self.ops.to_phys(stack)
        V = P[:d].real
        JAC = P[d : d + d * d].real.reshape((d, d) + V.shape[1:])
        A = P[d + d * d]
        GJA = P[d + d * d + 1 : d + d * d + 1 + d]
        DIV = P[-1].real
        adv = np.einsum("j...,ij...->i...", V, JAC)
        S = self.ops.to_spec(
            np.concatenate([adv, np.sum(V * GJA, axis=0)[None], (0.5 * A * DIV)[None], (np.abs(A) ** 2)[None]])
        )
        lin = 1j * self.alpha_dot_xi(j)
        t = self.phase.times[j]
        dv = -J * (lin * Jv + S[:d]) - 1j * xi * self.vpert_hat(t) - self.R * 1j * xi * (S[d + 2] - self.c_hat)
        da = -J * (lin * Ja + S[d]) - S[d + 1] - 0.5j * self.eps * self.k2 * J**2 * a
        return (dv, da)


class _Straightened(_Velocity):
    """Velocity form along characteristics; derivatives use ``Phi^{-T}`` rotated wavenumbers."""

    form = "straightened"

    def __init__(self, sc, eps, phase, dealias):
        super().__init__(sc, eps, phase, dealias)
        self.ctil_hat = sc.doping_tilde.coeffs
        self._frames = {}

    def _frame(self, j):
        fr = self._frames.get(j)
        if fr is None:
            P = np.linalg.inv(self.phase.Phi[j]).T
            xi = np.tensordot(P, self.xi, axes=1)
            fr = (xi, np.sum(xi**2, axis=0))
            self._frames = {j: fr}
        return fr

    def _assemble(self, j, v, a, adv_hat, transport_hat, dens_hat, xi, k2):
        inv = _inv_symbol(k2)
        g = self.phase.g[j]
        t = self.phase.times[j]
        vp = self.q * math.exp(-2.0 * g) * inv * dens_hat
        vp[(0,) * self.dim] = 0.0
        s = self.phase.shift[j]
        shift_phase = np.exp(1j * np.tensordot(s, self.xi, axes=1))
        vpert = (self.vpert_hat(t) - self.q * inv * self.ctil_hat) * shift_phase
        M = self.phase.M[j]
        dv = -adv_hat - 2.0 * np.tensordot(M, v, axes=1) - 1j * xi * (vpert + vp)
        da = -transport_hat - 0.5j * self.eps * k2 * a
        return (dv, da)

    def to_state(self, t, state, g=0.0):
        return super().to_state(t, state, g)


# ---------------------------------------------------------------------------
# driver


def _rk4_step(rhs, j, state, dt):
    """One RK4 step from half-step sample ``j`` to ``j + 2``."""
    k1 = rhs(j, state)
    s2 = tuple(x + 0.5 * dt * k for x, k in zip(state, k1))
    k2 = rhs(j + 1, s2)
    s3 = tuple(x + 0.5 * dt * k for x, k in zip(state, k2))
    k3 = rhs(j + 1, s3)
    s4 = tuple(x + dt * k for x, k in zip(state, k3))
    k4 = rhs(j + 2, s4)
    return tuple(x + dt / 6.0 * (a + 2 * b + 2 * c + d) for x, a, b, c, d in zip(state, k1, k2, k3, k4))


def _curl_from(xi: np.ndarray, v: np.ndarray, volume: float) -> float:
    d = v.shape[0]
    total = 0.0
    for i in range(d):
        for j in range(i + 1, d):
            w = 1j * xi[i] * v[j] - 1j * xi[j] * v[i]
            total += volume * float(np.sum(np.abs(w) ** 2))
    return math.sqrt(total)


def _diagnostics_row(system, state, j, t, s):
    grid = system.grid
    g = system.phase.g[j] if isinstance(system, _Straightened) else 0.0
    a_hat = system.amplitude_coeffs(state, j)
    a = SpectralField(grid, coeffs=a_hat * math.exp(-g))
    v_hat = system.velocity_coeffs(state)
    vel = VectorField.from_coeffs(grid, v_hat)
    xi, k2 = (system._frame(j) if isinstance(system, _Velocity) else (system.xi, system.k2))
    atil = SpectralField(grid, coeffs=a_hat)
    dens = SpectralField(grid, np.abs(atil.values) ** 2)
    dens_dev = norm_l2(dens - system.sc.doping())
    # Poisson residual of the potential the solver uses at this state
    src = dens.coeffs - (system.c_hat if not isinstance(system, _Straightened) else system.sc.c_const * _delta(grid))
    scale = system.q * (math.exp(-2.0 * g) if isinstance(system, _Straightened) else 1.0)
    V = scale * _inv_symbol(k2) * src
    resid = -k2 * V - scale * np.where(k2 == 0, 0.0, src)
    denom = max(abs(scale) * math.sqrt(float(np.sum(np.abs(src) ** 2))), 1e-300)
    pres = math.sqrt(float(np.sum(np.abs(resid) ** 2))) / denom if scale != 0 else 0.0
    return (
        t,
        norm_zhidkov(a, s),
        dens_dev,
        vector_norm_zhidkov(vel, s),
        _curl_from(xi, v_hat, grid.volume),
        pres,
    )


def _delta(grid: Grid) -> np.ndarray:
    d = np.zeros(grid.shape, dtype=complex)
    d[(0,) * grid.dim] = 1.0
    return d


def _check_eps(eps: float):
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")


def _steps(T: float, dt: float) -> tuple[int, float]:
    if not T > 0 or not dt > 0:
        raise ValueError(f"need T > 0 and dt > 0, got T={T}, dt={dt}")
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    return n, T / n


def _run(system, sc, eps, form, T, dt, s, stride, ceiling, h=None) -> WkbTrajectory:
    n_steps, dt = _steps(T, dt)
    phase = system.phase
    if phase.is_partial:
        # the eikonal phase focused first: integrate only over its valid range
        n_steps = max(0, (len(phase.times) - 1) // 2)
    state = system.initial()
    g0 = phase.g[0] if form == "straightened" else 0.0
    snaps = [system.to_state(0.0, state, g0)]
    rows = [_diagnostics_row(system, state, 0, 0.0, s)]
    status, blowup = "ok", None
    if phase.is_partial:
        status, blowup = phase.status, phase.last_valid_time
    for k in range(n_steps):
        j = 2 * k
        new = _rk4_step(system.rhs, j, state, dt)
        t = (k + 1) * dt
        row = _diagnostics_row(system, new, j + 2, t, s)
        if not all(np.isfinite(row)) or max(row[1], row[3]) > ceiling:
            status, blowup = NORM_BLOWUP, t
            break
        state = new
        rows.append(row)
        if (k + 1) % stride == 0 or k + 1 == n_steps:
            g = phase.g[j + 2] if form == "straightened" else 0.0
            snaps.append(system.to_state(t, state, g))
    diag = {c: np.array([r[i] for r in rows]) for i, c in enumerate(DIAGNOSTIC_COLUMNS)}
    if snaps[-1].t != rows[-1][0]:
        t_last = rows[-1][0]
        g = phase.g[2 * (len(rows) - 1)] if form == "straightened" else 0.0
        snaps.append(system.to_state(t_last, state, g))
    return WkbTrajectory(
        scenario=sc,
        eps=eps,
        form=form if h is None else "mollified",
        dt=dt,
        T=T,
        snapshots=snaps,
        diagnostics=diag,
        phase=phase,
        status=status,
        blowup_time=blowup,
        h=h,
        s=s,
        stride=stride,
    )


def solve_wkb(
    sc: Scenario,
    eps: float,
    form: str = "scalar_phase",
    T: float = 1.0,
    dt: float = 1e-3,
    *,
    s: float = 3.0,
    output_stride: int = 1,
    ceiling: float = 1e6,
    dealias: bool = True,
) -> WkbTrajectory:
    """Integrate the WKB system in the requested form.

    Scenarios with a quadratic eikonal part must use ``form="straightened"``.
    A monitored norm above ``ceiling`` stops the run with status
    ``"norm blow-up"``; the trajectory up to that point is returned.
    """
    _check_eps(eps)
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}; expected one of {FORMS}")
    if sc.requires_straightening and form != "straightened":
        raise ValueError("quadratic eikonal data require form='straightened'")
    if output_stride < 1:
        raise ValueError("output_stride must be >= 1")
    n_steps, dt_eff = _steps(T, dt)
    half = 0.5 * dt_eff
    if form == "straightened":
        phase = sc.eikonal(T, half, ghost=True)
        system = _Straightened(sc, eps, phase, dealias)
    else:
        phase = sc.eikonal(T, half)
        cls = _ScalarPhase if form == "scalar_phase" else _Velocity
        system = cls(sc, eps, phase, dealias)
    return _run(system, sc, eps, form, T, dt, s, output_stride, ceiling)


def solve_wkb_mollified(
    sc: Scenario,
    eps: float,
    h: float,
    T: float = 1.0,
    dt: float = 1e-3,
    *,
    s: float = 3.0,
    output_stride: int = 1,
    ceiling: float = 1e6,
    dealias: bool = True,
) -> WkbTrajectory:
    """Regularized velocity system with cutoff ``J_h`` and bounded Poisson multiplier ``R_h``."""
    _check_eps(eps)
    if not 0.0 < h <= 1.0:
        raise ValueError(f"h must lie in (0, 1], got {h}")
    if sc.requires_straightening:
        raise ValueError("the mollified scheme is defined for linear eikonal data only")
    if output_stride < 1:
        raise ValueError("output_stride must be >= 1")
    n_steps, dt_eff = _steps(T, dt)
    phase = sc.eikonal(T, 0.5 * dt_eff)
    system = _Mollified(sc, eps, phase, dealias, h)
    return _run(system, sc, eps, "velocity", T, dt, s, output_stride, ceiling, h=h)


# ---------------------------------------------------------------------------
# first-order corrector


@dataclass
class CorrectorTrajectory:
    times: np.ndarray
    phi1: list[SpectralField]
    b: list[SpectralField]

    def at(self, t: float, tol: float = 1e-9) -> tuple[SpectralField, SpectralField]:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"no corrector sample at t={t}")
        return self.phi1[k], self.b[k]


def _mid_coeffs(arrs: Sequence[np.ndarray], k: int) -> np.ndarray:
    """Four-point Lagrange value halfway between samples ``k`` and ``k+1``."""
    K = len(arrs)
    if K < 4:
        return 0.5 * (arrs[k] + arrs[k + 1])
    if k == 0:
        return (5 * arrs[0] + 15 * arrs[1] - 5 * arrs[2] + arrs[3]) / 16
    if k == K - 2:
        return (5 * arrs[K - 1] + 15 * arrs[K - 2] - 5 * arrs[K - 3] + arrs[K - 4]) / 16
    return (-arrs[k - 1] + 9 * arrs[k] + 9 * arrs[k + 1] - arrs[k + 2]) / 16


def solve_corrector(sc: Scenario, limit: WkbTrajectory, T: float | None = None, *, dealias: bool = True) -> CorrectorTrajectory:
    """Linearized system for ``(phi1, b)`` around the ``eps = 0`` solution.

    Coefficients are read from the limit snapshots (exactly at snapshot times,
    four-point Lagrange at interval midpoints); the RK4 step equals the
    snapshot spacing, so run the limit with ``output_stride=1`` for full accuracy.
    """
    if limit.eps != 0.0:
        raise ValueError("corrector needs the eps = 0 limit trajectory")
    if limit.form != "scalar_phase":
        raise ValueError("corrector needs a scalar_phase limit trajectory")
    if sc.requires_straightening:
        raise ValueError("corrector is implemented for linear eikonal data only")
    if limit.scenario.grid != sc.grid:
        raise ValueError("limit trajectory lives on a different grid")
    times = limit.times
    T = float(times[-1]) if T is None else float(T)
    if T > times[-1] + 1e-12 * max(1.0, T) or limit.is_partial and T > times[-1]:
        raise ValueError(f"limit trajectory covers [0, {times[-1]}], corrector asked for T={T}")
    n = int(np.searchsorted(times, T - 1e-12 * max(1.0, T))) + 1
    n = min(n, len(times))
    if n > 2 and np.max(np.abs(np.diff(np.diff(times[:n])))) > 1e-9 * times[1]:
        raise ValueError("limit snapshots must be uniformly spaced")

    grid = sc.grid
    d = grid.dim
    xi, k2 = grid.wavenumbers, grid.k2
    ops = _Products(grid, dealias)
    q = sc.charge_q
    phis = [st.phi.coeffs for st in limit.snapshots[:n]]
    amps = [st.a.coeffs for st in limit.snapshots[:n]]
    phase = limit.phase

    def rhs(t, bg, state):
        phi, a = bg
        p1, b = state
        stack = np.concatenate(
            [1j * xi * phi, (-k2 * phi)[None], a[None], 1j * xi * a, 1j * xi * p1, (-k2 * p1)[None], b[None], 1j * xi * b]
        )
        P = ops.to_phys(stack)
        gphi = P[:d].real
        lphi = P[d].real
        A = P[d + 1]
        GA = P[d + 2 : 2 * d + 2]
        gp1 = P[2 * d + 2 : 3 * d + 2].real
        lp1 = P[3 * d + 2].real
        B = P[3 * d + 3]
        GB = P[3 * d + 4 :]
        prods = np.stack(
            [
                np.sum(gphi * gp1, axis=0),
                np.sum(gphi * GB, axis=0) + 0.5 * B * lphi + np.sum(gp1 * GA, axis=0) + 0.5 * A * lp1,
                (np.conj(A) * B).real,
            ]
        )
        S = ops.to_spec(prods)
        _, alpha, _ = phase.coefficients(t)
        lin = 1j * np.tensordot(alpha, xi, axes=1)
        V = 2.0 * q * grid.inverse_laplacian * S[2]
        dp1 = -lin * p1 - S[0] - V
        db = -lin * b - S[1] + 0.5j * (-k2 * a)
        return (dp1, db)

    state = (np.zeros(grid.shape, dtype=complex), grid.truncate(sc.a1.coeffs))
    out_p, out_b = [SpectralField(grid, coeffs=state[0])], [SpectralField(grid, coeffs=state[1])]
    for k in range(n - 1):
        t0, t1 = times[k], times[k + 1]
        h = t1 - t0
        bg0 = (phis[k], amps[k])
        bgm = (_mid_coeffs(phis, k), _mid_coeffs(amps, k))
        bg1 = (phis[k + 1], amps[k + 1])
        k1 = rhs(t0, bg0, state)
        k2_ = rhs(t0 + h / 2, bgm, tuple(x + h / 2 * y for x, y in zip(state, k1)))
        k3 = rhs(t0 + h / 2, bgm, tuple(x + h / 2 * y for x, y in zip(state, k2_)))
        k4 = rhs(t1, bg1, tuple(x + h * y for x, y in zip(state, k3)))
        state = tuple(x + h / 6 * (a + 2 * b + 2 * c + e) for x, a, b, c, e in zip(state, k1, k2_, k3, k4))
        out_p.append(SpectralField(grid, coeffs=state[0]))
        out_b.append(SpectralField(grid, coeffs=state[1]))
    return CorrectorTrajectory(times=np.array(times[:n]), phi1=out_p, b=out_b)
