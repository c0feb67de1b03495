import numpy as np
import pytest
from hypothesis import given, strategies as st

from homwave.cell import (CoefficientField, EllipticityError, closed_form_cell_1d, eval_cell_at,
                          harmonic_mean_oracle_1d, solve_cell, two_phase)

LAMINATE = dict(breakpoints=[0.0, 0.5], values=[1.0, 4.0])


def test_constant_coefficient_has_zero_correctors():
    cs = solve_cell(CoefficientField(2, "constant", 2 * np.eye(2)), 32)
    assert np.array_equal(cs.a_h, 2 * np.eye(2))
    assert all(np.all(N.values == 0) for N in cs.N)


def test_two_phase_matches_harmonic_mean():
    c = two_phase(1.0, 4.0)
    cs = solve_cell(c, 1024)
    assert abs(cs.a_h[0, 0] - 1.6) < 1e-6
    assert abs(cs.a_h[0, 0] - harmonic_mean_oracle_1d(c)) < 1e-6


def test_laminate_2d():
    c = CoefficientField(2, "laminate_2d", axis=0, **LAMINATE)
    cs = solve_cell(c, 64)
    assert np.allclose(cs.a_h, np.diag([1.6, 2.5]), atol=1e-3)


def test_harmonic_oracle_constant():
    assert harmonic_mean_oracle_1d(CoefficientField(1, "constant", [[3.0]])) == pytest.approx(3.0, abs=1e-14)


def test_harmonic_oracle_two_phase():
    assert harmonic_mean_oracle_1d(two_phase()) == pytest.approx(1.6, abs=1e-13)


def test_harmonic_oracle_trigonometric():
    c = CoefficientField(1, "trigonometric", base=2.0, terms=[(1.0, (1,), 0.0)])
    assert abs(harmonic_mean_oracle_1d(c) - np.sqrt(3)) < 1e-8


def test_eval_cell_constant_is_zero():
    cs = solve_cell(CoefficientField(1, "constant", [[2.0]]), 16)
    assert np.all(eval_cell_at(cs, 0, np.linspace(0, 1, 17), 0.1) == 0)


def test_eval_cell_at_node_is_exact():
    cs = solve_cell(two_phase(), 64)
    x = cs.cell_grid.coords()
    assert np.array_equal(eval_cell_at(cs, 0, x, 1.0), cs.N[0].values)


def test_eval_cell_matches_closed_form():
    c = two_phase()
    cs = solve_cell(c, 1024)
    eps = 1 / 8
    assert abs(eval_cell_at(cs, 0, [eps / 4], eps)[0] - closed_form_cell_1d(c, 0.25)) < 1e-4


def test_snapping_is_recorded():
    c = CoefficientField(1, "piecewise_constant_1d", breakpoints=[0.0, 0.3], values=[1.0, 2.0])
    cs = solve_cell(c, 16)
    assert cs.snaps == [(0.3, 0.3125)]


def test_ellipticity_violation():
    with pytest.raises(EllipticityError):
        CoefficientField(1, "trigonometric", base=0.5, terms=[(1.0, (1,), 0.0)])
    with pytest.raises(EllipticityError):
        CoefficientField(1, "constant", [[2.0]], nu=0.9)


def test_coefficient_is_periodic(rng):
    c = CoefficientField(2, "trigonometric", base=2.0, terms=[(0.9, (1, 1), 0.3), (-0.5, (2, -1), 0.0)])
    y = rng.random((50, 2))
    for e in ([1, 0], [0, 1], [-3, 2]):
        assert np.allclose(c.evaluate(y + np.array(e)), c.evaluate(y))


def test_refinement_consistency():
    # odd breakpoints force snapping: the a_h error must shrink with n
    c = CoefficientField(1, "piecewise_constant_1d", breakpoints=[0.0, 0.3], values=[1.0, 3.0])
    exact = harmonic_mean_oracle_1d(c)
    errs = [abs(solve_cell(c, n).a_h[0, 0] - exact) for n in (20, 40, 80)]
    assert errs[1] <= errs[0] / 2 + 1e-14 and errs[2] <= errs[1] / 2 + 1e-14


coeffs = st.one_of(
    st.builds(lambda lo, hi: two_phase(lo, hi), st.floats(0.5, 3.0), st.floats(0.5, 5.0)),
    st.builds(lambda a, b, ph: CoefficientField(2, "trigonometric", base=2.0,
                                                terms=[(a, (1, 0), ph), (b, (1, 1), 0.0)]),
              st.floats(-0.9, 0.9), st.floats(-0.9, 0.9), st.floats(0, 6.28)),
    st.builds(lambda v0, v1, ax: CoefficientField(2, "laminate_2d", breakpoints=[0.0, 0.25], values=[v0, v1], axis=ax),
              st.floats(0.5, 4.0), st.floats(0.5, 4.0), st.integers(0, 1)),
)


@given(coeffs)
def test_cell_invariants(c):
    cs = solve_cell(c, 32 if c.dim == 2 else 128)
    for N in cs.N:
        assert abs(N.values.mean()) <= 1e-12
    assert np.abs(cs.a_h - cs.a_h.T).max() <= 1e-12
    lam = np.linalg.eigvalsh(cs.a_h)
    assert lam[0] >= c.nu * (1 - 1e-10) and lam[-1] <= (1 + 1e-10) / c.nu


@given(st.floats(0.3, 5.0), st.floats(0.3, 5.0), st.integers(1, 7))
def test_1d_discrete_a_h_is_exact_harmonic_mean(lo, hi, k):
    c = CoefficientField(1, "piecewise_constant_1d", breakpoints=[0.0, k / 8], values=[lo, hi])
    assert solve_cell(c, 64).a_h[0, 0] == pytest.approx(harmonic_mean_oracle_1d(c), rel=1e-9)
