"""Eikonal phase: closed forms, Riccati integration, characteristics and the HJ residual."""
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spsemi.eikonal import (
    QuadraticPotentialSpec,
    eval_phase,
    eval_phase_gradient,
    fundamental_matrix,
    ghost_trace_from_laplacian,
    hamilton_jacobi_residual,
    phase_csv_columns,
    probe_points,
    solve_linear_eikonal,
    solve_quadratic_eikonal,
    write_phase_csv,
)

I3 = np.eye(3)


@pytest.fixture(scope="module")
def harmonic():
    pot = QuadraticPotentialSpec.build(3, Q=0.5)
    return fundamental_matrix(solve_quadratic_eikonal(pot, np.zeros((3, 3)), np.zeros(3), 0.0, 1.0, False, 1.2, 1e-3))


class TestLinear:
    def test_constant_field(self):
        ph = solve_linear_eikonal([1.0, 0, 0], np.zeros(3), 0.0, 1.0, 0.01)
        t = ph.times
        assert np.max(np.abs(ph.alpha[:, 0] + t)) < 1e-12
        assert np.max(np.abs(ph.alpha[:, 1:])) == 0
        assert np.max(np.abs(ph.beta + t**3 / 6)) < 1e-12
        assert np.all(ph.M == 0) and np.all(ph.g == 0)

    def test_free_slope(self):
        ph = solve_linear_eikonal(None, [1.0, 0, 0], 0.0, 1.0, 0.01)
        assert np.allclose(ph.alpha, [1, 0, 0], atol=0)
        assert np.max(np.abs(ph.beta + ph.times / 2)) < 1e-12

    def test_constant_phase(self):
        ph = solve_linear_eikonal(None, np.zeros(3), 3.0, 1.0, 0.01)
        pts = probe_points(3)
        for t in (0.0, 0.37, 1.0):
            assert np.all(eval_phase(ph, t, pts) == 3.0)

    def test_time_dependent_field_matches_closed_form(self):
        E = lambda t: np.array([math.cos(t), 0.0, 0.0])
        ph = solve_linear_eikonal(E, [0.5, 0, 0], 0.0, 2.0, 0.05)
        t = ph.times
        a = 0.5 - np.sin(t)
        # beta = -1/2 int (0.5 - sin)^2
        beta = -0.5 * (0.25 * t + np.cos(t) - 1 + 0.5 * (t / 2 - np.sin(2 * t) / 4) * 2)
        assert np.max(np.abs(ph.alpha[:, 0] - a)) < 1e-12
        assert np.max(np.abs(ph.beta - beta)) < 1e-10

    def test_characteristics_are_shifts(self):
        ph = fundamental_matrix(solve_linear_eikonal([1.0, 0, 0], [0.2, 0, 0], 0.0, 1.0, 0.01))
        assert np.all(ph.Phi == I3)
        # shift = int alpha = 0.2 t - t^2 / 2
        t = ph.times
        assert np.max(np.abs(ph.shift[:, 0] - (0.2 * t - t**2 / 2))) < 1e-12


class TestQuadratic:
    def test_harmonic_tangent(self, harmonic):
        t = harmonic.times
        m = -0.5 * np.tan(t)
        assert np.max(np.abs(harmonic.M - m[:, None, None] * I3)) < 1e-8
        assert np.max(np.abs(harmonic.g - 1.5 * np.log(np.cos(t)))) < 1e-8

    def test_harmonic_fundamental_matrix(self, harmonic):
        c = np.cos(harmonic.times)
        assert np.max(np.abs(harmonic.Phi - c[:, None, None] * I3)) < 1e-8
        assert harmonic.focusing_time is None

    def test_harmonic_eval(self, harmonic):
        k = 600
        t = harmonic.times[k]
        e1 = np.array([1.0, 0, 0])
        assert eval_phase(harmonic, t, e1) == pytest.approx(-0.5 * math.tan(t) + harmonic.beta[k], abs=1e-8)

    def test_ghost_inert_without_curvature(self):
        ph = solve_quadratic_eikonal(QuadraticPotentialSpec.zero(3), np.zeros((3, 3)), [0.3, 0, 0.4], 1.0, 2.5, True, 1.0, 0.01)
        assert np.all(ph.M == 0) and np.all(ph.g == 0)
        assert np.allclose(ph.alpha, [0.3, 0, 0.4], atol=0)
        assert np.max(np.abs(ph.beta - (1.0 - 0.125 * ph.times))) < 1e-12

    def test_ghost_changes_trajectory(self):
        pot = QuadraticPotentialSpec.build(3, Q=0.5)
        on = solve_quadratic_eikonal(pot, np.zeros((3, 3)), np.zeros(3), 0.0, 1.0, True, 1.0, 1e-3)
        off = solve_quadratic_eikonal(pot, np.zeros((3, 3)), np.zeros(3), 0.0, 1.0, False, 1.0, 1e-3)
        assert np.linalg.norm(on.M[-1] - off.M[-1]) > 1e-3

    def test_ghost_residual(self):
        pot = QuadraticPotentialSpec.build(3, Q=0.5)
        ph = solve_quadratic_eikonal(pot, np.zeros((3, 3)), np.zeros(3), 0.0, 1.0, True, 1.0, 1e-3)
        assert ph.hj_residual <= 1e-6
        res = hamilton_jacobi_residual(ph, pot, probe_points(3))
        assert res.shape == (len(ph.times), 100)

    def test_reproduces_linear_solver(self):
        pot = QuadraticPotentialSpec.build(3, E=[0.3, -0.1, 0.2], gamma=0.4)
        quad = solve_quadratic_eikonal(pot, np.zeros((3, 3)), [0.1, 0, 0], 0.5, 1.0, False, 1.0, 1e-2)
        lin = solve_linear_eikonal([0.3, -0.1, 0.2], [0.1, 0, 0], 0.5, 1.0, 1e-2, gamma=0.4)
        assert np.max(np.abs(quad.alpha - lin.alpha)) < 1e-9
        assert np.max(np.abs(quad.beta - lin.beta)) < 1e-9

    def test_ghost_trace_two_ways(self, harmonic):
        assert np.max(np.abs(ghost_trace_from_laplacian(harmonic) - harmonic.g)) < 1e-10

    def test_fourth_order(self):
        pot = QuadraticPotentialSpec.build(2, Q=[[0.5, 0.1], [0.1, 0.3]], E=[0.2, 0.0])
        M0 = np.array([[0.1, 0.05], [0.05, -0.1]])
        runs = [solve_quadratic_eikonal(pot, M0, [0.1, 0.2], 0.0, 1.0, True, 1.0, dt, error_estimate=False) for dt in (0.1, 0.05, 0.025)]
        coarse, mid, fine = (r.M[-1] for r in runs)
        e1 = np.max(np.abs(coarse - mid))
        e2 = np.max(np.abs(mid - fine))
        assert e1 / e2 >= 8

    def test_blowup_is_flagged(self):
        pot = QuadraticPotentialSpec.build(1, Q=0.5)
        ph = solve_quadratic_eikonal(pot, np.zeros((1, 1)), [0.0], 0.0, 1.0, False, 2.0, 1e-3)
        assert ph.status == "blow-up before T"
        assert ph.is_partial
        assert abs(ph.last_valid_time - math.pi / 2) < 0.01

    def test_focusing_is_flagged(self):
        pot = QuadraticPotentialSpec.build(1, Q=0.5)
        ph = fundamental_matrix(solve_quadratic_eikonal(pot, np.zeros((1, 1)), [0.0], 0.0, 1.0, False, 1.6, 1e-3))
        assert ph.focusing_time is not None
        assert abs(ph.focusing_time - math.pi / 2) < 0.01

    def test_asymmetric_data_rejected(self):
        with pytest.raises(ValueError):
            solve_quadratic_eikonal(QuadraticPotentialSpec.zero(2), [[0, 1], [0, 0]], [0, 0], 0.0, 1.0, False, 1.0, 0.1)
        pot = QuadraticPotentialSpec.build(2, Q=[[0, 1], [0, 0]])
        with pytest.raises(ValueError):
            pot.Q_at(0.0)

    @settings(max_examples=15, deadline=None)
    @given(
        entries=st.lists(st.floats(-0.4, 0.4), min_size=6, max_size=6),
        ghost=st.booleans(),
    )
    def test_symmetry_preserved(self, entries, ghost):
        a, b, c, d, e, f = entries
        Q = np.array([[a, b, c], [b, d, e], [c, e, f]])
        M0 = 0.5 * np.array([[d, a, 0], [a, f, b], [0, b, c]])
        ph = solve_quadratic_eikonal(QuadraticPotentialSpec.build(3, Q=Q), M0, np.zeros(3), 0.0, 1.0, ghost, 0.5, 1e-2)
        assert np.max(np.abs(ph.M - np.swapaxes(ph.M, 1, 2))) <= 1e-10


class TestEvaluation:
    def test_linear_values(self):
        ph = solve_linear_eikonal(None, [1.0, 0, 0], 2.0, 1.0, 0.1)
        x = np.array([3.0, 1.0, 1.0])
        assert eval_phase(ph, 0.0, x) == pytest.approx(5.0)
        assert np.allclose(eval_phase_gradient(ph, 0.0, x), [1, 0, 0])

    def test_origin(self, harmonic):
        t = harmonic.times[300]
        assert eval_phase(harmonic, t, np.zeros(3)) == pytest.approx(harmonic.beta[300])
        assert np.allclose(eval_phase_gradient(harmonic, t, np.zeros(3)), harmonic.alpha[300])

    def test_outside_range(self, harmonic):
        with pytest.raises(ValueError):
            eval_phase(harmonic, 1.5, np.zeros(3))
        with pytest.raises(ValueError):
            eval_phase(harmonic, -0.1, np.zeros(3))


def test_csv_layout(harmonic):
    buf = io.StringIO()
    write_phase_csv(buf, harmonic)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == phase_csv_columns(3)
    assert len(lines) == len(harmonic.times) + 1
    row = [float(v) for v in lines[-1].split(",")]
    assert row[0] == harmonic.times[-1]
    assert row[1] == harmonic.M[-1, 0, 0]


def test_csv_without_characteristics():
    ph = solve_linear_eikonal(None, [0, 0], 0.0, 0.1, 0.05)
    buf = io.StringIO()
    write_phase_csv(buf, ph)
    assert "nan" in buf.getvalue().splitlines()[1]
