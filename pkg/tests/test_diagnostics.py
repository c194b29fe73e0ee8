"""Observables, reconstruction and the rate-fit harness."""
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import smooth_scenario, stationary_scenario
from spsemi.diagnostics import (
    SweepAborted,
    fit_rate,
    harness_horizon,
    modified_momentum_density,
    momentum_density,
    position_density,
    run_epsilon_sweep,
    run_h_sweep,
    wkb_momentum_density,
    wkb_reconstruct,
)
from spsemi.eikonal import QuadraticPotentialSpec, solve_linear_eikonal
from spsemi.schrodinger import solve_schrodinger
from spsemi.spectral import Grid, SpectralField, norm_l2, vector_norm_l2
from spsemi.wkb import solve_wkb

G2 = Grid(2, 16)


def band_limited(grid, seed, band=3):
    rng = np.random.default_rng(seed)
    m = np.rint(grid.wavenumbers / grid.fundamental)
    mask = np.all(np.abs(m) <= band, axis=0)
    c = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)) * mask
    return SpectralField(grid, coeffs=c * 0.1)


class TestObservables:
    def test_plane_wave(self):
        eps = 0.1
        alpha = np.array([0.2, -0.3])  # alpha / eps is a grid wavenumber
        u = SpectralField(G2, 1.5 * np.exp(1j * np.tensordot(alpha, G2.mesh, axes=1) / eps))
        assert np.allclose(position_density(u).values, 2.25)
        mom = momentum_density(u, eps)
        for i in range(2):
            assert np.max(np.abs(mom[i].values - 2.25 * alpha[i])) < 1e-12

    def test_real_wave_carries_no_momentum(self):
        u = band_limited(G2, 1).real
        assert vector_norm_l2(momentum_density(u, 0.1)) < 1e-14

    def test_amplitude_phase_expansion(self):
        g = Grid(1, 64)
        x = g.mesh[0]
        eps = 0.1
        u = SpectralField(g, (1 + 0.5 * np.cos(x)) * np.exp(1j * np.sin(x) / eps))
        # exact for the sampled field only up to spectral truncation of exp(i sin x / eps)
        expect = (1 + 0.5 * np.cos(x)) ** 2 * np.cos(x)
        assert np.max(np.abs(momentum_density(u, eps)[0].values - expect)) < 1e-10

    def test_global_phase_invariance(self):
        u = band_limited(G2, 2) + 1.0
        a = momentum_density(u, 0.2)
        b = momentum_density(u * np.exp(0.7j), 0.2)
        assert vector_norm_l2(a - b) < 1e-13

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 10**6), m1=st.integers(-2, 2), m2=st.integers(-2, 2))
    def test_phase_multiplication_shifts_momentum(self, seed, m1, m2):
        eps = 0.25
        u = band_limited(G2, seed) + 1.0
        theta = eps * (m1 * G2.mesh[0] + m2 * G2.mesh[1])
        w = SpectralField(G2, u.values * np.exp(1j * theta / eps))
        assert norm_l2(position_density(w) - position_density(u)) < 1e-12
        mw, mu = momentum_density(w, eps), momentum_density(u, eps)
        rho = position_density(u).values.real
        for i, m in enumerate((m1, m2)):
            assert np.max(np.abs(mw[i].values - mu[i].values - rho * eps * m)) < 1e-9

    def test_modified_momentum_cases(self):
        eps = 0.1
        zero = solve_linear_eikonal(None, np.zeros(2), 0.0, 1.0, 0.1)
        u = band_limited(G2, 3) + 1.0
        assert vector_norm_l2(modified_momentum_density(u, eps, zero, 0.5) - momentum_density(u, eps)) < 1e-14
        alpha = np.array([0.3, 0.1])
        lin = solve_linear_eikonal(None, alpha, 0.4, 1.0, 0.1)
        plane = SpectralField(G2, np.exp(1j * (np.tensordot(alpha, G2.mesh, axes=1) + 0.4) / eps))
        assert vector_norm_l2(modified_momentum_density(plane, eps, lin, 0.0)) < 1e-12

    def test_wkb_momentum_identity(self):
        sc = smooth_scenario(dim=1, n=64, amp=0.1, phase=0.1)
        st_ = solve_wkb(sc, 0.1, T=0.1, dt=0.01).final
        eps = 0.1
        # phi is small, so e^{i phi / eps} is resolved on 64 points
        u = wkb_reconstruct(st_.a, st_.phi, solve_linear_eikonal(None, [0.0], 0.0, 1.0, 0.1), eps, st_.t)
        direct = momentum_density(u, eps)
        ident = wkb_momentum_density(st_, solve_linear_eikonal(None, [0.0], 0.0, 1.0, 0.1))
        assert vector_norm_l2(direct - ident) < 1e-9


class TestReconstruct:
    def test_constant_phase(self):
        ph = solve_linear_eikonal(None, np.zeros(2), 0.7, 1.0, 0.1)
        u = wkb_reconstruct(SpectralField.constant(G2, 1.0), SpectralField.zeros(G2), ph, 0.1, 0.5)
        assert np.allclose(u.values, np.exp(7j))

    def test_zero_corrector_is_identity(self):
        ph = solve_linear_eikonal(None, np.zeros(2), 0.0, 1.0, 0.1)
        a, p = band_limited(G2, 4) + 1.0, band_limited(G2, 5).real
        z = SpectralField.zeros(G2)
        u1 = wkb_reconstruct(a, p, ph, 0.1, 0.2)
        u2 = wkb_reconstruct(a, p, ph, 0.1, 0.2, corrector=(z, z))
        assert np.array_equal(u1.values, u2.values)

    def test_stationary_matches_schrodinger(self):
        sc = stationary_scenario(dim=2, n=8, beta0=0.3)
        eps = 0.1
        wave = solve_schrodinger(sc, eps, 0.5, 0.01, output_stride=10)
        lim = solve_wkb(sc, 0.0, T=0.5, dt=0.01, output_stride=10)
        for w, s in zip(wave.snapshots, lim.snapshots):
            rec = wkb_reconstruct(s.a, s.phi, lim.phase, eps, s.t)
            assert norm_l2(rec - w.u) <= 1e-9

    def test_incommensurate_slope_needs_gauge(self):
        ph = solve_linear_eikonal(None, [0.123, 0.0], 0.0, 1.0, 0.1)
        one = SpectralField.constant(G2, 1.0)
        with pytest.raises(ValueError, match="gauged"):
            wkb_reconstruct(one, SpectralField.zeros(G2), ph, 0.1, 0.5)
        u = wkb_reconstruct(one, SpectralField.zeros(G2), ph, 0.1, 0.5, gauged=True)
        assert np.allclose(np.abs(u.values), 1.0)


class TestRateFit:
    @settings(max_examples=25, deadline=None)
    @given(p=st.floats(0.2, 4.0), C=st.floats(1e-3, 1e3))
    def test_recovers_power_law(self, p, C):
        eps = np.array([0.4, 0.2, 0.1, 0.05])
        fit = fit_rate("eps", eps, {"e": C * eps**p}, "e")
        assert abs(fit.slope - p) < 1e-10
        assert fit.residual < 1e-10

    def test_zero_errors_are_dropped(self):
        fit = fit_rate("eps", [0.4, 0.2, 0.1], {"a": [1e-3, 5e-4, 0.0], "z": [0, 0, 0]}, "a")
        assert fit.dropped["a"] == [0.1]
        assert fit.status["a"] == "ok" and fit.slope == pytest.approx(1.0)
        assert fit.status["z"] == "all-zero" and math.isnan(fit.slopes["z"])
        assert fit.passes(0.9) and fit.passes(5.0, column="z")
        one = fit_rate("eps", [0.4, 0.2, 0.1], {"a": [1e-3, 0, 0]}, "a")
        assert one.status["a"] == "degenerate" and not one.passes(0.0)

    def test_serialization(self):
        fit = fit_rate("eps", [0.4, 0.2, 0.1], {"a": [4.0, 2.0, 1.0], "b": [1, 1, 1]}, "a")
        buf = io.StringIO()
        fit.write_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "eps,a,b"
        assert lines[-3].startswith("slope,")
        assert float(lines[-3].split(",")[1]) == pytest.approx(1.0)
        data = json.loads(fit.to_json())
        assert data["slopes"]["a"] == pytest.approx(1.0)
        assert not fit.passes_all(0.9)
        fit.reference = ("b",)
        assert fit.passes_all(0.9)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            fit_rate("eps", [0.4, 0.2], {"a": [1, 2, 3]}, "a")
        with pytest.raises(ValueError):
            fit_rate("eps", [0.4, 0.2], {"a": [1, 2]}, "b")


class TestSweeps:
    def test_stationary_sweep_is_all_zero(self):
        fit = run_epsilon_sweep(stationary_scenario(dim=2, n=8), [0.4, 0.2, 0.1], 0.2, 0.01)
        assert all(max(v) <= 1e-10 for v in fit.errors.values())
        assert fit.status["density_L2"] == "all-zero"

    def test_density_rate_1d(self):
        fit = run_epsilon_sweep(smooth_scenario(dim=1, n=16), [0.4, 0.2, 0.1, 0.05], 0.5, 0.01, threads=2)
        assert fit.slope >= 0.9
        assert fit.slopes["amplitude_Hs"] >= 0.9
        assert fit.info["T"] == 0.5

    def test_threads_do_not_change_results(self):
        sc = smooth_scenario(dim=1, n=16)
        a = run_epsilon_sweep(sc, [0.4, 0.2, 0.1], 0.2, 0.01, threads=1)
        b = run_epsilon_sweep(sc, [0.4, 0.2, 0.1], 0.2, 0.01, threads=3)
        assert a.summary() == b.summary()

    def test_eps_list_must_decrease(self):
        with pytest.raises(ValueError):
            run_epsilon_sweep(smooth_scenario(), [0.1, 0.2, 0.4], 0.2, 0.01)
        with pytest.raises(ValueError):
            run_epsilon_sweep(smooth_scenario(), [0.4, 0.2, 0.1], 0.2, 0.01, compare="vibes")

    def test_blowup_aborts_sweep(self):
        sc = smooth_scenario(dim=1, n=16, amp=0.3, phase=0.8, q=0.0, doping=0.0)
        with pytest.raises(SweepAborted) as info:
            run_epsilon_sweep(sc, [0.4, 0.2, 0.1], 3.0, 0.01, ceiling=100.0)
        assert info.value.parameter == "eps"
        assert info.value.time is not None
        assert harness_horizon(sc, [0.4, 0.2, 0.1], 3.0, 0.01, ceiling=100.0) < 3.0

    def test_h_sweep_large_h_degenerates(self):
        fit = run_h_sweep(smooth_scenario(n=16), 0.1, [0.125, 0.1, 0.08], 0.3, 0.01)
        assert max(fit.errors["rho"]) <= 1e-10
