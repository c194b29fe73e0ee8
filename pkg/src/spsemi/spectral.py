"""Periodic grids, Fourier duality, multipliers, Poisson inversion and norms.

Fields live on the torus ``[0, L)^dim`` sampled on ``n`` points per axis.
Fourier coefficients use the *forward-normalised* convention::

    f(x) = sum_m c_m exp(i xi_m . x),    xi_m = 2 pi m / L,

so coefficients do not depend on the grid size and zero-padding is a plain
copy.  All continuum norms are scaled so that ``||1||_{L^2} = L^{dim/2}``.

The Nyquist index (``m = -n/2``) is kept with its signed wavenumber so that
``divergence(gradient(f))`` equals the Laplacian multiplier exactly; solvers
never populate it (see :meth:`Grid.truncate`).
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Grid",
    "SpectralField",
    "VectorField",
    "MultiplierSymbol",
    "cutoff_profile",
    "cutoff_symbol",
    "low_cut_symbol",
    "regularized_poisson_symbol",
    "bessel_potential_symbol",
    "laplacian_symbol",
    "apply_multiplier",
    "gradient",
    "divergence",
    "laplacian",
    "curl_norm",
    "solve_poisson",
    "PoissonResult",
    "norm_l2",
    "norm_hs",
    "norm_linf",
    "norm_zhidkov",
    "vector_norm_l2",
    "vector_norm_hs",
    "vector_norm_zhidkov",
    "resample",
    "translate",
    "helmholtz_potential",
    "check_inequality_suite",
    "InequalityReport",
    "write_field_dump",
    "read_field_dump",
]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``n`` points on each of ``dim`` axes."""

    dim: int
    n: int
    period: float = 2.0 * math.pi

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"points per axis must be a power of two >= 8, got {self.n}")
        if not self.period > 0:
            raise ValueError(f"period must be positive, got {self.period}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def spacing(self) -> float:
        return self.period / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def volume(self) -> float:
        return self.period**self.dim

    @property
    def fundamental(self) -> float:
        """Smallest nonzero wavenumber magnitude ``2 pi / L``."""
        return 2.0 * math.pi / self.period

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        x = np.arange(self.n) * self.spacing
        return tuple(x for _ in range(self.dim))

    @cached_property
    def mesh(self) -> np.ndarray:
        """Physical coordinates, shape ``(dim, n, ..., n)``."""
        return np.stack(np.meshgrid(*self.coords, indexing="ij"))

    @cached_property
    def mode_numbers(self) -> np.ndarray:
        """Integer mode numbers ``m`` in FFT order, Nyquist stored as ``-n/2``."""
        return np.fft.fftfreq(self.n, d=1.0 / self.n).astype(int)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Wavevector ``xi`` on the spectral grid, shape ``(dim, n, ..., n)``."""
        k1 = self.fundamental * self.mode_numbers
        return np.stack(np.meshgrid(*([k1] * self.dim), indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.wavenumbers**2, axis=0)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on every spectral index that sits on the Nyquist plane of some axis."""
        nyq = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = self.n // 2
            nyq[tuple(idx)] = True
        return nyq

    @cached_property
    def inverse_laplacian(self) -> np.ndarray:
        """Symbol ``-1/|xi|^2`` with the zero mode set to 0 (zero-mean gauge)."""
        with np.errstate(divide="ignore"):
            inv = np.where(self.k2 > 0, -1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)
        return inv

    # -- transforms -------------------------------------------------------
    def forward(self, values: np.ndarray) -> np.ndarray:
        """Fourier coefficients over the trailing ``dim`` axes (leading axes are batched)."""
        return sfft.fftn(values, axes=self._axes, norm="forward")

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        return sfft.ifftn(coeffs, axes=self._axes, norm="forward")

    @property
    def _axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    def truncate(self, coeffs: np.ndarray) -> np.ndarray:
        """Zero the Nyquist planes (keeps real fields real under differentiation)."""
        out = np.array(coeffs, dtype=complex, copy=True)
        out[..., self.nyquist_mask] = 0.0
        return out

    # -- dealiasing ---------------------------------------------------------
    @cached_property
    def padded_n(self) -> int:
        return 3 * self.n // 2

    @cached_property
    def _pad_blocks(self):
        """Matching (coarse, fine) slice tuples covering the retained modes ``|m| < n/2``."""
        h = self.n // 2
        pairs = [(slice(0, h), slice(0, h)), (slice(h + 1, self.n), slice(self.padded_n - h + 1, self.padded_n))]
        return [
            ((Ellipsis,) + tuple(p[0] for p in combo), (Ellipsis,) + tuple(p[1] for p in combo))
            for combo in itertools.product(pairs, repeat=self.dim)
        ]

    def to_fine(self, coeffs: np.ndarray) -> np.ndarray:
        """Physical samples on the 3/2-padded grid (Nyquist dropped)."""
        lead = coeffs.shape[: coeffs.ndim - self.dim]
        fine = np.zeros(lead + (self.padded_n,) * self.dim, dtype=complex)
        for small, big in self._pad_blocks:
            fine[big] = coeffs[small]
        return sfft.ifftn(fine, axes=tuple(range(-self.dim, 0)), norm="forward", overwrite_x=True)

    def from_fine(self, values: np.ndarray) -> np.ndarray:
        """Coefficients of padded-grid samples, truncated back to this grid."""
        fine_coeffs = sfft.fftn(values, axes=tuple(range(-self.dim, 0)), norm="forward")
        lead = fine_coeffs.shape[: fine_coeffs.ndim - self.dim]
        out = np.zeros(lead + self.shape, dtype=complex)
        for small, big in self._pad_blocks:
            out[small] = fine_coeffs[big]
        return out

    def refined(self, n: int) -> "Grid":
        return Grid(self.dim, n, self.period)


class SpectralField:
    """Immutable complex scalar field sampled on a :class:`Grid`."""

    __slots__ = ("grid", "_values", "_coeffs")

    def __init__(self, grid: Grid, values: np.ndarray | None = None, *, coeffs: np.ndarray | None = None):
        if (values is None) == (coeffs is None):
            raise ValueError("give exactly one of values or coeffs")
        self.grid = grid
        if values is not None:
            values = np.asarray(values, dtype=complex)
            if values.shape != grid.shape:
                raise ValueError(f"values shape {values.shape} does not match grid {grid.shape}")
            values = values.copy()
            values.flags.writeable = False
            self._values = values
            self._coeffs = None
        else:
            coeffs = np.asarray(coeffs, dtype=complex)
            if coeffs.shape != grid.shape:
                raise ValueError(f"coeffs shape {coeffs.shape} does not match grid {grid.shape}")
            coeffs = coeffs.copy()
            coeffs.flags.writeable = False
            self._coeffs = coeffs
            self._values = None

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            v = self.grid.inverse(self._coeffs)
            v.flags.writeable = False
            self._values = v
        return self._values

    @property
    def coeffs(self) -> np.ndarray:
        if self._coeffs is None:
            c = self.grid.forward(self._values)
            c.flags.writeable = False
            self._coeffs = c
        return self._coeffs

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralField":
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @classmethod
    def constant(cls, grid: Grid, value: complex) -> "SpectralField":
        return cls(grid, np.full(grid.shape, value, dtype=complex))

    @classmethod
    def from_function(cls, grid: Grid, func: Callable[..., np.ndarray]) -> "SpectralField":
        """Sample ``func(x1, ..., xdim)`` on the grid."""
        vals = np.broadcast_to(func(*grid.mesh), grid.shape)
        return cls(grid, vals)

    @classmethod
    def from_modes(cls, grid: Grid, modes: Sequence[tuple[Sequence[int], complex]]) -> "SpectralField":
        """Build ``sum amp * exp(i 2 pi m.x / L)`` from sparse ``(mode, amp)`` pairs.

        Mode vectors shorter than ``dim`` are padded with zeros; a mode that
        does not fit strictly below the Nyquist index is rejected.
        """
        coeffs = np.zeros(grid.shape, dtype=complex)
        for mode, amp in modes:
            m = list(int(v) for v in mode)
            if len(m) > grid.dim:
                if any(m[grid.dim:]):
                    raise ValueError(f"mode {tuple(m)} has more components than dim={grid.dim}")
                m = m[: grid.dim]
            m += [0] * (grid.dim - len(m))
            if any(abs(v) >= grid.n // 2 for v in m):
                raise ValueError(f"mode {tuple(m)} not resolved on n={grid.n}")
            coeffs[tuple(v % grid.n for v in m)] += complex(amp)
        return cls(grid, coeffs=coeffs)

    def with_values(self, values: np.ndarray) -> "SpectralField":
        return SpectralField(self.grid, values)

    @property
    def real(self) -> "SpectralField":
        return SpectralField(self.grid, self.values.real)

    def mean(self) -> complex:
        return complex(self.coeffs[(0,) * self.grid.dim])

    def __add__(self, other):
        if isinstance(other, SpectralField):
            _same_grid(self, other)
            return SpectralField(self.grid, self.values + other.values)
        return SpectralField(self.grid, self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, SpectralField):
            _same_grid(self, other)
            return SpectralField(self.grid, self.values - other.values)
        return SpectralField(self.grid, self.values - other)

    def __neg__(self):
        return SpectralField(self.grid, -self.values)

    def __mul__(self, other):
        if isinstance(other, SpectralField):
            _same_grid(self, other)
            return SpectralField(self.grid, self.values * other.values)
        return SpectralField(self.grid, self.values * other)

    __rmul__ = __mul__

    def __repr__(self):
        return f"SpectralField(dim={self.grid.dim}, n={self.grid.n}, period={self.grid.period:g})"


def _same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise ValueError("fields live on different grids")


@dataclass(frozen=True)
class VectorField:
    components: tuple[SpectralField, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ValueError("empty vector field")
        _same_grid(*self.components)
        if len(self.components) != self.grid.dim:
            raise ValueError("vector field needs one component per axis")

    @property
    def grid(self) -> Grid:
        return self.components[0].grid

    @classmethod
    def from_coeffs(cls, grid: Grid, coeffs: np.ndarray) -> "VectorField":
        return cls(tuple(SpectralField(grid, coeffs=c) for c in coeffs))

    @property
    def coeffs(self) -> np.ndarray:
        return np.stack([c.coeffs for c in self.components])

    @property
    def values(self) -> np.ndarray:
        return np.stack([c.values for c in self.components])

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField(tuple(a - b for a, b in zip(self.components, other.components)))

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(tuple(a + b for a, b in zip(self.components, other.components)))

    def __len__(self):
        return len(self.components)

    def __getitem__(self, i):
        return self.components[i]


# ---------------------------------------------------------------------------
# multipliers


def _smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        left = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        right = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return left / (left + right)


def cutoff_profile(r: np.ndarray) -> np.ndarray:
    """The smooth cutoff: 1 on ``r <= 1``, 0 on ``r >= 2``, C-infinity in between."""
    return 1.0 - _smooth_step(np.asarray(r, dtype=float) - 1.0)


@dataclass(frozen=True)
class MultiplierSymbol:
    """Fourier multiplier ``m(xi)``; ``rule`` maps a ``(dim, ...)`` wavevector array to values."""

    name: str
    rule: Callable[[np.ndarray], np.ndarray] = field(compare=False)

    def evaluate(self, grid: Grid) -> np.ndarray:
        xi = grid.wavenumbers
        vals = np.broadcast_to(np.asarray(self.rule(xi), dtype=complex), grid.shape)
        bad = ~np.isfinite(vals)
        if bad.any():
            idx = tuple(int(i[0]) for i in np.nonzero(bad))
            raise ValueError(
                f"symbol {self.name!r} undefined at wavenumber {tuple(float(x) for x in xi[(slice(None),) + idx])}"
            )
        return vals


def _norm(xi: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(xi**2, axis=0))


def cutoff_symbol(h: float) -> MultiplierSymbol:
    """``J_h``: symbol ``cutoff(h |xi|)``."""
    return MultiplierSymbol(f"J_h(h={h:g})", lambda xi: cutoff_profile(h * _norm(xi)))


def low_cut_symbol(h: float) -> MultiplierSymbol:
    """``G_h = I - J_{1/h}``: symbol ``1 - cutoff(|xi| / h)``; vanishes near ``xi = 0``."""
    return MultiplierSymbol(f"G_h(h={h:g})", lambda xi: 1.0 - cutoff_profile(_norm(xi) / h))


def regularized_poisson_symbol(h: float, q: float) -> MultiplierSymbol:
    """``R_h = q Delta^{-1} G_h``; defined as 0 at ``xi = 0`` where ``G_h`` vanishes."""

    def rule(xi):
        k2 = np.sum(xi**2, axis=0)
        g = 1.0 - cutoff_profile(np.sqrt(k2) / h)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(k2 > 0, -q * g / np.where(k2 > 0, k2, 1.0), 0.0)

    return MultiplierSymbol(f"R_h(h={h:g},q={q:g})", rule)


def bessel_potential_symbol(s: float) -> MultiplierSymbol:
    """``Lambda^s = (I - Delta)^{s/2}``."""
    return MultiplierSymbol(f"Lambda^{s:g}", lambda xi: (1.0 + np.sum(xi**2, axis=0)) ** (s / 2))


def laplacian_symbol() -> MultiplierSymbol:
    return MultiplierSymbol("Laplacian", lambda xi: -np.sum(xi**2, axis=0))


def apply_multiplier(f: SpectralField, m: MultiplierSymbol) -> SpectralField:
    if not np.all(np.isfinite(f.values)):
        raise ValueError("field has non-finite values")
    return SpectralField(f.grid, coeffs=m.evaluate(f.grid) * f.coeffs)


# ---------------------------------------------------------------------------
# calculus


def gradient(f: SpectralField) -> VectorField:
    xi = f.grid.wavenumbers
    return VectorField.from_coeffs(f.grid, 1j * xi * f.coeffs)


def divergence(v: VectorField) -> SpectralField:
    xi = v.grid.wavenumbers
    return SpectralField(v.grid, coeffs=np.sum(1j * xi * v.coeffs, axis=0))


def laplacian(f: SpectralField) -> SpectralField:
    return SpectralField(f.grid, coeffs=-f.grid.k2 * f.coeffs)


def curl_norm(v: VectorField) -> float:
    """L2 norm of all antisymmetric derivative pairs ``d_i v_j - d_j v_i``, ``i < j``."""
    grid = v.grid
    xi = grid.wavenumbers
    c = v.coeffs
    total = 0.0
    for i in range(grid.dim):
        for j in range(i + 1, grid.dim):
            w = 1j * xi[i] * c[j] - 1j * xi[j] * c[i]
            total += grid.volume * float(np.sum(np.abs(w) ** 2))
    return math.sqrt(total)


class PoissonResult(NamedTuple):
    potential: SpectralField
    source_mean: complex


def solve_poisson(source: SpectralField, q: float) -> PoissonResult:
    """Zero-mean ``V`` with ``Delta V = q (source - mean(source))``.

    The torus forces mean-free sources; the removed mean is returned.
    """
    grid = source.grid
    c = source.coeffs
    mean = complex(c[(0,) * grid.dim])
    return PoissonResult(SpectralField(grid, coeffs=q * grid.inverse_laplacian * c), mean)


def helmholtz_potential(v: VectorField) -> SpectralField:
    """Zero-mean ``phi = Delta^{-1} div v``; ``grad phi = v`` when ``v`` is a mean-free gradient."""
    return SpectralField(v.grid, coeffs=v.grid.inverse_laplacian * divergence(v).coeffs)


def resample(f: SpectralField, n: int) -> SpectralField:
    """Fourier interpolation onto a grid with ``n`` points per axis (exact for band-limited data)."""
    g_old = f.grid
    g_new = g_old.refined(n)
    if n == g_old.n:
        return f
    src = g_old.truncate(f.coeffs)
    lo = min(g_old.n, n)
    keep = np.concatenate([np.arange(0, lo // 2), np.arange(-lo // 2 + 1, 0)])
    out = np.zeros(g_new.shape, dtype=complex)
    out[np.ix_(*([keep % n] * g_old.dim))] = src[np.ix_(*([keep % g_old.n] * g_old.dim))]
    return SpectralField(g_new, coeffs=out)


def translate(f: SpectralField, shift: Sequence[float]) -> SpectralField:
    """Exact spectral translation ``x -> f(x - shift)``."""
    shift = np.asarray(shift, dtype=float).reshape((-1,) + (1,) * f.grid.dim)
    phase = np.exp(-1j * np.sum(f.grid.wavenumbers * shift, axis=0))
    return SpectralField(f.grid, coeffs=f.coeffs * phase)


# ---------------------------------------------------------------------------
# norms


def _sobolev_weight(grid: Grid, s: float) -> np.ndarray:
    return (1.0 + grid.k2) ** s


def norm_l2(f: SpectralField) -> float:
    return math.sqrt(f.grid.volume * float(np.sum(np.abs(f.coeffs) ** 2)))


def norm_hs(f: SpectralField, s: float) -> float:
    if s < 0:
        raise ValueError(f"Sobolev order must be >= 0, got {s}")
    w = _sobolev_weight(f.grid, s)
    return math.sqrt(f.grid.volume * float(np.sum(w * np.abs(f.coeffs) ** 2)))


def norm_linf(f: SpectralField) -> float:
    """Grid maximum; a lower bound for the continuum sup norm."""
    return float(np.max(np.abs(f.values)))


def _grad_hs_sq(grid: Grid, coeffs: np.ndarray, s_minus_one: float) -> float:
    w = _sobolev_weight(grid, s_minus_one) * grid.k2
    return grid.volume * float(np.sum(w * np.abs(coeffs) ** 2))


def norm_zhidkov(f: SpectralField, s: float) -> float:
    """``||f||_{L^inf} + ||grad f||_{H^{s-1}}`` for ``s > dim/2``."""
    if not s > f.grid.dim / 2:
        raise ValueError(f"Zhidkov order must exceed dim/2 = {f.grid.dim / 2}, got s={s}")
    return norm_linf(f) + math.sqrt(_grad_hs_sq(f.grid, f.coeffs, s - 1.0))


def vector_norm_l2(v: VectorField) -> float:
    return math.sqrt(sum(norm_l2(c) ** 2 for c in v.components))


def vector_norm_hs(v: VectorField, s: float) -> float:
    return math.sqrt(sum(norm_hs(c, s) ** 2 for c in v.components))


def vector_norm_zhidkov(v: VectorField, s: float) -> float:
    """Sup of the pointwise Euclidean magnitude plus the H^{s-1} norm of the full Jacobian."""
    grid = v.grid
    if not s > grid.dim / 2:
        raise ValueError(f"Zhidkov order must exceed dim/2 = {grid.dim / 2}, got s={s}")
    linf = float(np.max(np.sqrt(np.sum(np.abs(v.values) ** 2, axis=0))))
    grad = sum(_grad_hs_sq(grid, c.coeffs, s - 1.0) for c in v.components)
    return linf + math.sqrt(grad)


# ---------------------------------------------------------------------------
# inequality spot checks


@dataclass
class InequalityReport:
    passed: bool
    samples: int
    seed: int
    worst_cutoff_ratio: float
    worst_plateau_error: float
    worst_poisson_residual: float
    linf_ratios: dict[int, float]
    linf_growth_flag: bool
    failures: list[tuple[str, int, float]] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [
            f"samples={self.samples} seed={self.seed} passed={self.passed}",
            f"(i)   max [||(I-J_h)f|| + ||(I-J_h^2)f||] / (2h ||grad f||) = {self.worst_cutoff_ratio:.6f}",
            f"(ii)  max ||J_h f - f|| / ||f|| (band below 1/h) = {self.worst_plateau_error:.3e}",
            f"      max Poisson residual (relative) = {self.worst_poisson_residual:.3e}",
        ]
        ratios = ", ".join(f"n={n}: {r:.4f}" for n, r in sorted(self.linf_ratios.items()))
        out.append(f"(iii) max ||f||_inf / ||grad f||_H^(s-1): {ratios}; growth flag={self.linf_growth_flag}")
        for name, sample, value in self.failures:
            out.append(f"FAILED {name} at sample seed ({self.seed}, {sample}): {value:.6e}")
        return out


def _random_band_limited(grid: Grid, rng: np.random.Generator, band: float) -> SpectralField:
    """Random complex mean-free field with modes ``0 < |xi| <= band``."""
    kk = np.sqrt(grid.k2)
    mask = (kk > 0) & (kk <= band) & ~grid.nyquist_mask
    coeffs = np.zeros(grid.shape, dtype=complex)
    count = int(mask.sum())
    coeffs[mask] = (rng.standard_normal(count) + 1j * rng.standard_normal(count)) / (1.0 + kk[mask] ** 2)
    return SpectralField(grid, coeffs=coeffs)


def check_inequality_suite(
    samples: int,
    seed: int,
    grid: Grid | None = None,
    hs: Sequence[float] = (0.25, 0.5, 1.0),
    s: float = 2.0,
    resolutions: Sequence[int] = (8, 16, 32),
    q: float = 1.0,
) -> InequalityReport:
    """Spot-check the cutoff bound, the cutoff plateau, Poisson inversion and the
    L-infinity/gradient ratio on ``samples`` random band-limited mean-free fields."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    grid = grid or Grid(3, 16)
    kk = np.sqrt(grid.k2)
    kmax = float(kk[~grid.nyquist_mask].max())
    failures: list[tuple[str, int, float]] = []
    worst_ratio = 0.0
    worst_plateau = 0.0
    worst_poisson = 0.0
    linf_ratios: dict[int, float] = {n: 0.0 for n in resolutions}
    jay = {h: cutoff_symbol(h).evaluate(grid) for h in hs}

    for i in range(samples):
        rng = np.random.default_rng([seed, i])
        band = rng.uniform(grid.fundamental, kmax)
        f = _random_band_limited(grid, rng, band)
        grad_l2 = vector_norm_l2(gradient(f))
        for h in hs:
            j = jay[h]
            lhs = norm_l2(SpectralField(grid, coeffs=(1 - j) * f.coeffs)) + norm_l2(
                SpectralField(grid, coeffs=(1 - j**2) * f.coeffs)
            )
            rhs = 2 * h * grad_l2
            ratio = lhs / rhs if rhs > 0 else 0.0
            worst_ratio = max(worst_ratio, ratio)
            if lhs > rhs * (1 + 1e-12) + 1e-300:
                failures.append((f"cutoff bound h={h:g}", i, ratio))

            # plateau: a field living strictly below 1/h is left untouched
            below = (kk < 1.0 / h) & (kk > 0) & ~grid.nyquist_mask
            if below.any():
                g_coeffs = np.where(below, f.coeffs, 0.0)
                g = SpectralField(grid, coeffs=g_coeffs)
                gn = norm_l2(g)
                if gn > 0:
                    err = norm_l2(SpectralField(grid, coeffs=(j - 1) * g_coeffs)) / gn
                    worst_plateau = max(worst_plateau, err)
                    if err > 1e-12:
                        failures.append((f"cutoff plateau h={h:g}", i, err))

        src = f + complex(rng.standard_normal())
        V, mean = solve_poisson(src, q)
        resid = laplacian(V).coeffs - q * (src.coeffs - np.where(grid.k2 == 0, mean, 0.0))
        rel = math.sqrt(grid.volume * float(np.sum(np.abs(resid) ** 2))) / max(norm_l2(src), 1e-300)
        worst_poisson = max(worst_poisson, rel)
        if rel > 1e-10:
            failures.append(("poisson residual", i, rel))

        # same continuum function sampled at several resolutions
        low = [(tuple(int(v) for v in m), complex(a)) for m, a in _low_modes(grid.dim, rng)]
        for n in resolutions:
            g = SpectralField.from_modes(Grid(grid.dim, n, grid.period), low)
            denom = math.sqrt(_grad_hs_sq(g.grid, g.coeffs, s - 1.0))
            linf_ratios[n] = max(linf_ratios[n], norm_linf(g) / denom)

    ordered = [linf_ratios[n] for n in sorted(linf_ratios)]
    growth = len(ordered) > 1 and ordered[-1] > 1.25 * ordered[0]
    return InequalityReport(
        passed=not failures,
        samples=samples,
        seed=seed,
        worst_cutoff_ratio=worst_ratio,
        worst_plateau_error=worst_plateau,
        worst_poisson_residual=worst_poisson,
        linf_ratios=linf_ratios,
        linf_growth_flag=growth,
        failures=failures,
    )


def _low_modes(dim: int, rng: np.random.Generator, mmax: int = 3):
    modes = []
    for m in np.ndindex(*([2 * mmax + 1] * dim)):
        mv = tuple(v - mmax for v in m)
        if any(mv):
            amp = (rng.standard_normal() + 1j * rng.standard_normal()) / (1.0 + sum(v * v for v in mv))
            modes.append((mv, amp))
    return modes


# ---------------------------------------------------------------------------
# field dump format


def write_field_dump(fh, f: SpectralField, name: str, time: float) -> None:
    """One JSON header line, then little-endian float64 (re, im) pairs in row-major order."""
    header = {"dim": f.grid.dim, "n": f.grid.n, "period": f.grid.period, "name": name, "time": float(time)}
    fh.write(json.dumps(header).encode() + b"\n")
    fh.write(np.ascontiguousarray(f.values, dtype="<c16").tobytes())


def read_field_dump(fh) -> tuple[dict, SpectralField]:
    header = json.loads(fh.readline().decode())
    grid = Grid(header["dim"], header["n"], header["period"])
    count = grid.n**grid.dim
    data = np.frombuffer(fh.read(16 * count), dtype="<c16")
    if data.size != count:
        raise ValueError("truncated field dump")
    return header, SpectralField(grid, data.reshape(grid.shape))
