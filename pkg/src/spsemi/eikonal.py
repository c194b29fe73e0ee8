"""Quadratic eikonal phases, their characteristics and the ghost trace.

The eikonal phase is the polynomial ``phi(t, x) = x.M(t)x + alpha(t).x + beta(t)``
solving the Hamilton-Jacobi equation driven by a quadratic potential
``V(t, x) = x.Q(t)x + E(t).x + gamma(t)``.  Matching coefficients gives the
matrix Riccati system::

    M' + 2 M^2 + Q = -(q / 2 dim) (exp(-2 tr R) - 1) I      (ghost term optional)
    R' = M,   alpha' + 2 M alpha + E = 0,   beta' + |alpha|^2 / 2 + gamma = 0

with ``g = tr R``.  Characteristics ``x(t, y) = Phi(t) y + shift(t)`` satisfy
``Phi' = 2 M Phi`` and ``shift' = 2 M shift + alpha``.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson

__all__ = [
    "QuadraticPotentialSpec",
    "QuadraticPhase",
    "solve_linear_eikonal",
    "solve_quadratic_eikonal",
    "fundamental_matrix",
    "eval_phase",
    "eval_phase_gradient",
    "eval_phase_time_derivative",
    "hamilton_jacobi_residual",
    "ghost_trace_from_laplacian",
    "probe_points",
    "write_phase_csv",
    "phase_csv_columns",
    "BLOWUP_STATUS",
]

BLOWUP_STATUS = "blow-up before T"
PROBE_SEED = 20231
PROBE_COUNT = 100
SYMMETRY_TOL = 1e-12


def _as_matrix_fn(value, dim: int) -> Callable[[float], np.ndarray]:
    if callable(value):
        return lambda t: np.asarray(value(t), dtype=float).reshape(dim, dim)
    arr = np.zeros((dim, dim)) if value is None else np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = float(arr) * np.eye(dim)
    arr = arr.reshape(dim, dim)
    return lambda t: arr


def _as_vector_fn(value, dim: int) -> Callable[[float], np.ndarray]:
    if callable(value):
        return lambda t: np.asarray(value(t), dtype=float).reshape(dim)
    arr = np.zeros(dim) if value is None else np.asarray(value, dtype=float).reshape(dim)
    return lambda t: arr


def _as_scalar_fn(value) -> Callable[[float], float]:
    if callable(value):
        return lambda t: float(value(t))
    c = 0.0 if value is None else float(value)
    return lambda t: c


@dataclass(frozen=True)
class QuadraticPotentialSpec:
    """``V(t, x) = x.Q(t)x + E(t).x + gamma(t)``.

    Each coefficient may be a constant (scalar ``Q`` means a multiple of the
    identity) or a callable of time.  ``quadratic`` declares whether ``Q`` can
    be nonzero; it is inferred for constant data.
    """

    dim: int
    Q: Callable[[float], np.ndarray]
    E: Callable[[float], np.ndarray]
    gamma: Callable[[float], float]
    quadratic: bool = True
    linear: bool = True
    name: str = "custom"

    @classmethod
    def build(cls, dim: int, Q=None, E=None, gamma=None, name: str = "custom") -> "QuadraticPotentialSpec":
        quadratic = callable(Q) or (Q is not None and np.any(np.asarray(Q, dtype=float) != 0))
        linear = callable(E) or (E is not None and np.any(np.asarray(E, dtype=float) != 0))
        return cls(
            dim=dim,
            Q=_as_matrix_fn(Q, dim),
            E=_as_vector_fn(E, dim),
            gamma=_as_scalar_fn(gamma),
            quadratic=bool(quadratic),
            linear=bool(linear),
            name=name,
        )

    @classmethod
    def zero(cls, dim: int) -> "QuadraticPotentialSpec":
        return cls.build(dim, name="zero")

    def Q_at(self, t: float) -> np.ndarray:
        Q = self.Q(t)
        asym = float(np.max(np.abs(Q - Q.T))) if Q.size else 0.0
        if asym > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(Q)))):
            raise ValueError(f"Q({t}) is not symmetric (asymmetry {asym:.3e})")
        return Q

    def evaluate(self, t: float, points: np.ndarray) -> np.ndarray:
        """``V(t, x)`` at ``points`` of shape ``(..., dim)``."""
        x = np.asarray(points, dtype=float)
        Q = self.Q_at(t)
        return np.einsum("...i,ij,...j->...", x, Q, x) + x @ self.E(t) + self.gamma(t)


@dataclass(frozen=True)
class QuadraticPhase:
    """Time samples of the eikonal coefficients.

    ``Phi`` and ``shift`` stay ``None`` until :func:`fundamental_matrix` fills them.
    ``status`` is ``"ok"`` or ``"blow-up before T"``; ``last_valid_time`` is the
    final stored sample either way.
    """

    times: np.ndarray
    M: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    g: np.ndarray
    ghost_enabled: bool
    q: float
    Phi: np.ndarray | None = None
    shift: np.ndarray | None = None
    status: str = "ok"
    last_valid_time: float = 0.0
    error_estimate: np.ndarray | None = None
    hj_residual: float | None = None
    focusing_time: float | None = None
    flags: tuple[str, ...] = ()

    @property
    def dim(self) -> int:
        return self.M.shape[1]

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def is_partial(self) -> bool:
        return self.status != "ok"

    def bracket(self, t: float) -> tuple[int, float]:
        """Index ``k`` and weight ``w`` with ``t = (1-w) t_k + w t_{k+1}``."""
        times = self.times
        tol = 1e-12 * max(1.0, abs(times[-1]))
        if t < times[0] - tol or t > times[-1] + tol:
            raise ValueError(f"t={t} outside the sampled range [{times[0]}, {times[-1]}]")
        if len(times) == 1:
            return 0, 0.0
        k = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        w = (t - times[k]) / (times[k + 1] - times[k])
        return k, float(np.clip(w, 0.0, 1.0))

    def _interp(self, arr: np.ndarray, t: float) -> np.ndarray:
        k, w = self.bracket(t)
        if w == 0.0:
            return arr[k]
        if w == 1.0:
            return arr[k + 1]
        return (1 - w) * arr[k] + w * arr[k + 1]

    def coefficients(self, t: float) -> tuple[np.ndarray, np.ndarray, float]:
        """``(M, alpha, beta)`` at ``t`` by linear interpolation between samples."""
        return self._interp(self.M, t), self._interp(self.alpha, t), float(self._interp(self.beta, t))

    def g_at(self, t: float) -> float:
        return float(self._interp(self.g, t))

    def Phi_at(self, t: float) -> np.ndarray:
        if self.Phi is None:
            raise ValueError("fundamental matrix not computed; call fundamental_matrix first")
        return self._interp(self.Phi, t)

    def shift_at(self, t: float) -> np.ndarray:
        if self.shift is None:
            raise ValueError("characteristic shift not computed; call fundamental_matrix first")
        return self._interp(self.shift, t)

    @property
    def is_linear(self) -> bool:
        return bool(np.all(self.M == 0))


# ---------------------------------------------------------------------------
# linear case

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _gauss(f: Callable[[float], np.ndarray], a: float, b: float) -> np.ndarray:
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    return half * sum(w * f(mid + half * x) for x, w in zip(_GL_NODES, _GL_WEIGHTS))


def _time_grid(T: float, dt: float) -> np.ndarray:
    if not T > 0 or not dt > 0:
        raise ValueError(f"need T > 0 and dt > 0, got T={T}, dt={dt}")
    steps = max(1, int(math.ceil(T / dt - 1e-9)))
    return np.linspace(0.0, T, steps + 1)


def solve_linear_eikonal(E, alpha0: Sequence[float], beta0: float, T: float, dt: float, gamma=None) -> QuadraticPhase:
    """Closed-form linear phase: ``alpha = alpha0 - int E``, ``beta = beta0 - int (|alpha|^2/2 + gamma)``.

    Integrals use 8-point Gauss-Legendre on each sample interval (nested for
    ``beta``), exact for polynomial fields up to degree 15.
    """
    alpha0 = np.asarray(alpha0, dtype=float)
    dim = alpha0.size
    Ef = _as_vector_fn(E, dim)
    gf = _as_scalar_fn(gamma)
    times = _time_grid(T, dt)
    K = len(times)
    alpha = np.zeros((K, dim))
    beta = np.zeros(K)
    alpha[0] = alpha0
    beta[0] = float(beta0)
    for k in range(K - 1):
        t0, t1 = times[k], times[k + 1]
        a_k = alpha[k]

        def alpha_at(t, a_k=a_k, t0=t0):
            if t == t0:
                return a_k
            return a_k - _gauss(Ef, t0, t)

        alpha[k + 1] = a_k - _gauss(Ef, t0, t1)
        beta[k + 1] = beta[k] - _gauss(lambda t: 0.5 * float(alpha_at(t) @ alpha_at(t)) + gf(t), t0, t1)
    return QuadraticPhase(
        times=times,
        M=np.zeros((K, dim, dim)),
        alpha=alpha,
        beta=beta,
        g=np.zeros(K),
        ghost_enabled=False,
        q=0.0,
        last_valid_time=float(times[-1]),
    )


# ---------------------------------------------------------------------------
# quadratic case


def _riccati_rhs(pot: QuadraticPotentialSpec, q: float, ghost: bool):
    dim = pot.dim
    eye = np.eye(dim)

    def rhs(t, state):
        M, R, alpha, beta = state
        dM = -2.0 * M @ M - pot.Q_at(t)
        if ghost:
            dM = dM - (q / (2.0 * dim)) * (math.exp(-2.0 * float(np.trace(R))) - 1.0) * eye
        dalpha = -2.0 * M @ alpha - pot.E(t)
        dbeta = -0.5 * float(alpha @ alpha) - pot.gamma(t)
        return (dM, M, dalpha, dbeta)

    return rhs


def _axpy(state, dstate, h):
    return tuple(s + h * d for s, d in zip(state, dstate))


def _rk4(rhs, t, state, h):
    k1 = rhs(t, state)
    k2 = rhs(t + h / 2, _axpy(state, k1, h / 2))
    k3 = rhs(t + h / 2, _axpy(state, k2, h / 2))
    k4 = rhs(t + h, _axpy(state, k3, h))
    return tuple(s + h / 6 * (a + 2 * b + 2 * c + d) for s, a, b, c, d in zip(state, k1, k2, k3, k4))


def _state_distance(a, b) -> float:
    return max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in zip(a, b))


def solve_quadratic_eikonal(
    pot: QuadraticPotentialSpec,
    M0,
    alpha0,
    beta0: float,
    q: float,
    ghost: bool,
    T: float,
    dt: float,
    blowup_threshold: float = 1e6,
    error_estimate: bool = True,
) -> QuadraticPhase:
    """Fixed-step RK4 for ``(M, R, alpha, beta)``.

    With ``error_estimate`` each step is repeated as two half steps; the
    difference is recorded as the local error estimate (the full step is kept).
    The Hamilton-Jacobi residual at :func:`probe_points` is stored in
    ``hj_residual``.  A matrix norm above ``blowup_threshold`` ends the run early
    with status ``"blow-up before T"``.
    """
    dim = pot.dim
    M0 = np.asarray(M0, dtype=float).reshape(dim, dim)
    if np.max(np.abs(M0 - M0.T)) > SYMMETRY_TOL * max(1.0, float(np.max(np.abs(M0)))):
        raise ValueError("M0 must be symmetric")
    alpha0 = np.asarray(alpha0, dtype=float).reshape(dim)
    times = _time_grid(T, dt)
    h = times[1] - times[0]
    rhs = _riccati_rhs(pot, q, ghost)

    state = (M0.copy(), np.zeros((dim, dim)), alpha0.copy(), float(beta0))
    Ms, Rs, alphas, betas, errs = [state[0]], [state[1]], [state[2]], [state[3]], [0.0]
    status = "ok"
    for k in range(len(times) - 1):
        t = times[k]
        full = _rk4(rhs, t, state, h)
        if error_estimate:
            half = _rk4(rhs, t + h / 2, _rk4(rhs, t, state, h / 2), h / 2)
            err = _state_distance(full, half)
        else:
            err = 0.0
        if not all(np.all(np.isfinite(x)) for x in full) or np.linalg.norm(full[0], 2) > blowup_threshold:
            status = BLOWUP_STATUS
            break
        state = full
        Ms.append(state[0])
        Rs.append(state[1])
        alphas.append(state[2])
        betas.append(state[3])
        errs.append(err)

    kept = times[: len(Ms)]
    R = np.array(Rs)
    phase = QuadraticPhase(
        times=kept,
        M=np.array(Ms),
        alpha=np.array(alphas),
        beta=np.array(betas),
        g=np.trace(R, axis1=1, axis2=2).copy(),
        ghost_enabled=bool(ghost),
        q=float(q),
        status=status,
        last_valid_time=float(kept[-1]),
        error_estimate=np.array(errs),
        flags=(f"{BLOWUP_STATUS} (last valid t={kept[-1]:.6g})",) if status != "ok" else (),
    )
    if len(kept) >= 5:
        res = hamilton_jacobi_residual(phase, pot, probe_points(dim))
        phase = dataclasses.replace(phase, hj_residual=float(np.max(np.abs(res))))
    return phase


# ---------------------------------------------------------------------------
# characteristics

# four-point Lagrange weights for the midpoint of a uniform window
_MID_INTERIOR = np.array([-1.0, 9.0, 9.0, -1.0]) / 16.0
_MID_EDGE = np.array([5.0, 15.0, -5.0, 1.0]) / 16.0


def _midpoints(arr: np.ndarray) -> np.ndarray:
    """Cubic-interpolated values halfway between consecutive samples."""
    K = arr.shape[0]
    if K < 4:
        return 0.5 * (arr[:-1] + arr[1:])
    out = np.empty((K - 1,) + arr.shape[1:])
    w = _MID_INTERIOR.reshape((4,) + (1,) * (arr.ndim - 1))
    out[1 : K - 2] = sum(w[j] * arr[j : K - 3 + j] for j in range(4))
    we = _MID_EDGE.reshape((4,) + (1,) * (arr.ndim - 1))
    out[0] = sum(we[j] * arr[j] for j in range(4))
    out[K - 2] = sum(we[j] * arr[K - 1 - j] for j in range(4))
    return out


def fundamental_matrix(phase: QuadraticPhase, focusing_tol: float = 1e-8) -> QuadraticPhase:
    """Integrate ``Phi' = 2 M Phi`` and ``shift' = 2 M shift + alpha`` from the samples.

    RK4 over each sample interval, with ``M`` and ``alpha`` at interval midpoints
    from four-point Lagrange interpolation.  ``det Phi <= focusing_tol`` marks
    characteristic focusing (the time is recorded, integration continues).
    """
    times = phase.times
    K = len(times)
    dim = phase.dim
    Phi = np.zeros((K, dim, dim))
    shift = np.zeros((K, dim))
    Phi[0] = np.eye(dim)
    Mmid = _midpoints(phase.M) if K > 1 else phase.M
    amid = _midpoints(phase.alpha) if K > 1 else phase.alpha
    for k in range(K - 1):
        h = times[k + 1] - times[k]
        M0, Mh, M1 = phase.M[k], Mmid[k], phase.M[k + 1]
        a0, ah, a1 = phase.alpha[k], amid[k], phase.alpha[k + 1]
        P, s = Phi[k], shift[k]
        k1P, k1s = 2 * M0 @ P, 2 * M0 @ s + a0
        P2, s2 = P + h / 2 * k1P, s + h / 2 * k1s
        k2P, k2s = 2 * Mh @ P2, 2 * Mh @ s2 + ah
        P3, s3 = P + h / 2 * k2P, s + h / 2 * k2s
        k3P, k3s = 2 * Mh @ P3, 2 * Mh @ s3 + ah
        P4, s4 = P + h * k3P, s + h * k3s
        k4P, k4s = 2 * M1 @ P4, 2 * M1 @ s4 + a1
        Phi[k + 1] = P + h / 6 * (k1P + 2 * k2P + 2 * k3P + k4P)
        shift[k + 1] = s + h / 6 * (k1s + 2 * k2s + 2 * k3s + k4s)

    dets = np.linalg.det(Phi)
    bad = np.nonzero(dets <= focusing_tol)[0]
    focusing = float(times[bad[0]]) if bad.size else None
    flags = phase.flags
    if focusing is not None:
        flags = flags + (f"characteristic focusing at t={focusing:.6g}",)
    return dataclasses.replace(phase, Phi=Phi, shift=shift, focusing_time=focusing, flags=flags)


# ---------------------------------------------------------------------------
# evaluation


def eval_phase(phase: QuadraticPhase, t: float, points) -> np.ndarray:
    """``x.M x + alpha.x + beta`` at ``points`` of shape ``(..., dim)``."""
    M, alpha, beta = phase.coefficients(t)
    x = np.asarray(points, dtype=float)
    return np.einsum("...i,ij,...j->...", x, M, x) + x @ alpha + beta


def eval_phase_gradient(phase: QuadraticPhase, t: float, points) -> np.ndarray:
    """``2 M x + alpha`` at ``points`` of shape ``(..., dim)``; same shape as ``points``."""
    M, alpha, _ = phase.coefficients(t)
    x = np.asarray(points, dtype=float)
    return 2.0 * x @ M.T + alpha


def probe_points(dim: int, count: int = PROBE_COUNT, seed: int = PROBE_SEED) -> np.ndarray:
    """Fixed reproducible probe set in ``[-1, 1]^dim``."""
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(count, dim))


def eval_phase_time_derivative(phase: QuadraticPhase, points) -> np.ndarray:
    """``d phi / dt`` at every sample time, by fourth-order finite differences.

    Returns shape ``(K, P)``.  Interior samples use the centred five-point
    stencil; the first and last two use one-sided fourth-order stencils.
    """
    x = np.asarray(points, dtype=float)
    K = len(phase.times)
    if K < 5:
        raise ValueError("need at least 5 time samples for fourth-order differences")
    h = phase.times[1] - phase.times[0]
    vals = (
        np.einsum("pi,kij,pj->kp", x, phase.M, x)
        + np.einsum("pi,ki->kp", x, phase.alpha)
        + phase.beta[:, None]
    )
    d = np.empty_like(vals)
    d[2:-2] = (vals[:-4] - 8 * vals[1:-3] + 8 * vals[3:-1] - vals[4:]) / (12 * h)
    fwd = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12 * h)
    d[0] = fwd @ vals[0:5]
    d[1] = (np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / (12 * h)) @ vals[0:5]
    d[-1] = -(fwd @ vals[-1:-6:-1])
    d[-2] = -((np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / (12 * h)) @ vals[-1:-6:-1])
    return d


def hamilton_jacobi_residual(phase: QuadraticPhase, pot: QuadraticPotentialSpec, points) -> np.ndarray:
    """``phi_t + |grad phi|^2/2 + V (+ ghost term)`` at every sample time and probe point.

    The ghost term is ``q |x|^2 / (2 dim) (exp(-2 g) - 1)`` when enabled.
    """
    x = np.asarray(points, dtype=float)
    dphi = eval_phase_time_derivative(phase, x)
    dim = phase.dim
    out = np.empty_like(dphi)
    r2 = np.sum(x**2, axis=-1)
    for k, t in enumerate(phase.times):
        grad = 2.0 * x @ phase.M[k].T + phase.alpha[k]
        res = dphi[k] + 0.5 * np.sum(grad**2, axis=-1) + pot.evaluate(t, x)
        if phase.ghost_enabled:
            res = res + phase.q * r2 / (2.0 * dim) * (math.exp(-2.0 * phase.g[k]) - 1.0)
        out[k] = res
    return out


def ghost_trace_from_laplacian(phase: QuadraticPhase) -> np.ndarray:
    """``g`` recomputed as half the time integral of ``Laplacian phi = 2 tr M`` (Simpson)."""
    lap = 2.0 * np.trace(phase.M, axis1=1, axis2=2)
    if len(phase.times) < 3:
        return np.concatenate([[0.0], 0.5 * np.cumsum(0.5 * (lap[1:] + lap[:-1]) * np.diff(phase.times))])
    return 0.5 * cumulative_simpson(lap, x=phase.times, initial=0.0)


# ---------------------------------------------------------------------------
# serialization


def phase_csv_columns(dim: int) -> list[str]:
    """Column order: t, M (row-major), alpha, beta, Phi (row-major), g, shift."""
    idx = [f"{i}{j}" for i in range(1, dim + 1) for j in range(1, dim + 1)]
    return (
        ["t"]
        + [f"M_{ij}" for ij in idx]
        + [f"alpha_{i}" for i in range(1, dim + 1)]
        + ["beta"]
        + [f"Phi_{ij}" for ij in idx]
        + ["g"]
        + [f"shift_{i}" for i in range(1, dim + 1)]
    )


def _fmt(x: float) -> str:
    return "%.17g" % x


def write_phase_csv(fh, phase: QuadraticPhase) -> None:
    """One row per sample; ``Phi``/``shift`` columns are ``nan`` when not yet computed."""
    dim = phase.dim
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(phase_csv_columns(dim))
    nan_m = np.full((dim, dim), np.nan)
    nan_v = np.full(dim, np.nan)
    for k, t in enumerate(phase.times):
        Phi = phase.Phi[k] if phase.Phi is not None else nan_m
        shift = phase.shift[k] if phase.shift is not None else nan_v
        row = [t, *phase.M[k].ravel(), *phase.alpha[k], phase.beta[k], *Phi.ravel(), phase.g[k], *shift]
        writer.writerow([_fmt(float(v)) for v in row])
