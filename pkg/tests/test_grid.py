import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from homwave.cell import CoefficientField, two_phase
from homwave.elliptic import assemble, laplacian
from homwave.grid import (GridFunction, GridMismatchError, NormKind, SolverError, State, as_kind,
                          embed, gradient, make_grid, norm, solve_spd)


def sin_fn(grid, k=1.0):
    return GridFunction(grid, np.sin(k * np.pi * grid.coords()[:, 0]))


# ------------------------------------------------------------ construction

def test_dirichlet_grid_dofs():
    g = make_grid(1, 1.0, 8, "dirichlet")
    assert g.ndof == 7 and g.h == (0.125,)


def test_periodic_grid_dofs():
    g = make_grid(1, 1.0, 8, "periodic")
    assert g.ndof == 8 and g.h == (0.125,)


def test_neumann_2d_dofs():
    assert make_grid(2, (1, 1), 16, "neumann").ndof == 289


@pytest.mark.parametrize("n, ext", [(3, 1.0), (8, 0.0), (8, -1.0)])
def test_make_grid_rejects(n, ext):
    with pytest.raises(ValueError):
        make_grid(1, ext, n, "dirichlet")


def test_grid_function_length_and_finiteness():
    g = make_grid(1, 1.0, 8, "dirichlet")
    with pytest.raises(GridMismatchError):
        GridFunction(g, np.zeros(8))
    with pytest.raises(ValueError):
        GridFunction(g, np.full(7, np.nan))


def test_norm_kind_validation():
    with pytest.raises(ValueError):
        NormKind("Cbeta", 1.0)
    with pytest.raises(ValueError):
        NormKind("W2")
    assert as_kind("Cbeta(0.25)").beta == 0.25
    assert NormKind("E").on_pairs and not NormKind("L2").on_pairs


# ------------------------------------------------------------------- norms

@pytest.mark.parametrize("kind", ["L2", "H1", "Hminus1", "Cbeta(0.1)"])
def test_zero_function_norms(kind):
    g = make_grid(1, 1.0, 32, "dirichlet")
    assert norm(GridFunction(g, np.zeros(g.ndof)), kind, ref_op=laplacian(g)) == 0.0


@pytest.mark.parametrize("kind", ["E", "Eminus1", "E1", "E2"])
def test_zero_state_norms(kind):
    g = make_grid(1, 1.0, 32, "dirichlet")
    z = State.from_arrays(g, np.zeros(g.ndof), np.zeros(g.ndof))
    assert norm(z, kind, ref_op=laplacian(g)) == 0.0


def test_l2_of_sine():
    g = make_grid(1, 1.0, 256, "dirichlet")
    assert abs(norm(sin_fn(g), "L2") - 1 / np.sqrt(2)) < 1e-3


def test_h1_of_sine():
    g = make_grid(1, 1.0, 256, "dirichlet")
    assert abs(norm(sin_fn(g), "H1") - np.pi / np.sqrt(2)) < 1e-2


def test_hminus1_of_sine():
    # (phi, L^-1 phi) = 1/(2 pi^2) for phi = sin(pi x)
    g = make_grid(1, 1.0, 256, "dirichlet")
    assert abs(norm(sin_fn(g), "Hminus1", ref_op=laplacian(g)) - 1 / (np.sqrt(2) * np.pi)) < 1e-4


def test_cbeta_of_sine_beta0():
    # beta = 0: max|u| + max|u(x) - u(y)| = 1 + 1
    g = make_grid(1, 1.0, 64, "dirichlet")
    assert abs(norm(sin_fn(g), "Cbeta(0)") - 2.0) < 1e-12


def test_dual_norms_need_reference():
    g = make_grid(1, 1.0, 16, "dirichlet")
    with pytest.raises(ValueError):
        norm(sin_fn(g), "Hminus1")


def test_norms_reject_mismatched_grids():
    g1, g2 = make_grid(1, 1.0, 16, "dirichlet"), make_grid(1, 1.0, 32, "dirichlet")
    with pytest.raises(GridMismatchError):
        norm(sin_fn(g1), "Hminus1", ref_op=laplacian(g2))


@given(st.floats(-50, 50), st.integers(0, 2**31 - 1), st.sampled_from(["L2", "H1", "Hminus1", "Cbeta(0.25)"]))
def test_norm_homogeneity(c, seed, kind):
    g = make_grid(1, 1.0, 32, "dirichlet")
    ref = laplacian(g)
    u = GridFunction(g, np.random.default_rng(seed).standard_normal(g.ndof))
    assert np.isclose(norm(u * c, kind, ref), abs(c) * norm(u, kind, ref), rtol=1e-12, atol=1e-12)


@given(st.integers(0, 2**31 - 1), st.sampled_from(["dirichlet", "neumann", "periodic"]))
def test_l2_zero_iff_zero(seed, bc):
    g = make_grid(1, 1.0, 16, bc)
    v = np.random.default_rng(seed).standard_normal(g.ndof)
    v[np.random.default_rng(seed + 1).random(g.ndof) < 0.5] = 0.0
    assert (norm(GridFunction(g, v), "L2") == 0.0) == (not np.any(v))


@given(st.integers(0, 2**31 - 1), st.sampled_from(["E", "Eminus1", "E1", "E2", "H1", "L2", "Hminus1"]))
def test_embedding_is_isometric(seed, kind):
    g = make_grid(2, 1.0, 8, "neumann")
    ref = laplacian(g)
    rng = np.random.default_rng(seed)
    a = State.from_arrays(g, rng.standard_normal(g.ndof), rng.standard_normal(g.ndof))
    b = State.from_arrays(g, rng.standard_normal(g.ndof), rng.standard_normal(g.ndof))
    d = State.from_arrays(g, a.u.values - b.u.values, a.v.values - b.v.values)
    lhs = np.linalg.norm(embed(a, kind, ref) - embed(b, kind, ref))
    rhs = norm(d if NormKind(kind).on_pairs else d.u, kind, ref)
    assert np.isclose(lhs, rhs, rtol=1e-9)


def test_hminus1_equivalence_with_homogenised_operator(rng):
    # nu |phi|^2_L <= (phi, A0^-1 phi) <= |phi|^2_L / nu
    g = make_grid(1, 1.0, 128, "dirichlet")
    coeff = two_phase(1.0, 4.0)
    nu = coeff.nu
    A0 = assemble(np.array([[1.6]]), None, g)
    L = laplacian(g)
    for _ in range(20):
        phi = GridFunction(g, rng.standard_normal(g.ndof))
        q0 = norm(phi, "Hminus1", ref_op=A0) ** 2
        qL = norm(phi, "Hminus1", ref_op=L) ** 2
        assert nu * qL <= q0 * (1 + 1e-12) and q0 <= qL / nu * (1 + 1e-12)


def test_hminus1_equivalence_2d_anisotropic(rng):
    g = make_grid(2, 1.0, 16, "dirichlet")
    ah = np.array([[2.0, 0.5], [0.5, 1.0]])
    nu = CoefficientField(2, "constant", ah).nu
    A0, L = assemble(ah, None, g), laplacian(g)
    for _ in range(20):
        phi = GridFunction(g, rng.standard_normal(g.ndof))
        q0 = norm(phi, "Hminus1", ref_op=A0) ** 2
        qL = norm(phi, "Hminus1", ref_op=L) ** 2
        assert nu * qL <= q0 * (1 + 1e-12) and q0 <= qL / nu * (1 + 1e-12)


# ------------------------------------------------------------------ solver

def test_solve_identity(rng):
    b = rng.standard_normal(50)
    assert np.allclose(solve_spd(sp.identity(50, format="csr"), b), b, atol=1e-14)


def laplace_1d(n):
    h = 1.0 / n
    m = n - 1
    return sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1], format="csr") / h**2


def test_solve_laplacian_eigenpair():
    g = make_grid(1, 1.0, 128, "dirichlet")
    x = g.coords()[:, 0]
    u = solve_spd(laplace_1d(128), np.pi**2 * np.sin(np.pi * x), tol=1e-10)
    assert np.max(np.abs(u - np.sin(np.pi * x))) < 1e-3


def test_solve_rejects_zero_row():
    A = laplace_1d(16).tolil()
    A[3, :] = 0
    A[:, 3] = 0
    with pytest.raises(SolverError):
        solve_spd(A.tocsr(), np.ones(15))


def test_solve_reports_iterations_on_failure():
    with pytest.raises(SolverError) as exc:
        solve_spd(laplace_1d(512), np.ones(511), tol=1e-14, maxiter=3)
    assert exc.value.iterations == 3


@given(st.integers(0, 2**31 - 1), st.integers(8, 200))
def test_solve_residual_property(seed, n):
    A = laplace_1d(n)
    b = np.random.default_rng(seed).standard_normal(n - 1)
    tol = 1e-10
    x = solve_spd(A, b, tol=tol)
    assert np.linalg.norm(A @ x - b) <= 10 * tol * np.linalg.norm(b)


def test_solve_is_deterministic(rng):
    A, b = laplace_1d(300), rng.standard_normal(299)
    assert np.array_equal(solve_spd(A, b), solve_spd(A, b))


# ---------------------------------------------------------------- gradient

@pytest.mark.parametrize("bc", ["dirichlet", "neumann", "periodic"])
def test_gradient_of_constant(bc):
    g = make_grid(2, 1.0, 8, bc)
    c = 0.0 if bc == "dirichlet" else 3.0
    (gx, gy) = gradient(GridFunction(g, np.full(g.ndof, c)))
    assert np.allclose(gx.values, 0) and np.allclose(gy.values, 0)


def test_gradient_of_linear_on_dirichlet_interior():
    g = make_grid(1, 1.0, 64, "neumann")
    (d,) = gradient(GridFunction(g, g.coords()[:, 0]))
    assert np.allclose(d.values, 1.0, atol=1e-12)


def test_gradient_of_linear_on_periodic_wraps():
    # u(x) = x is discontinuous across the identified faces: the wrap
    # artefact is confined to the two nodes next to the seam
    g = make_grid(1, 1.0, 64, "periodic")
    (d,) = gradient(GridFunction(g, g.coords()[:, 0]))
    bad = np.flatnonzero(~np.isclose(d.values, 1.0))
    assert set(bad) == {0, 63}


def test_gradient_of_periodic_sine():
    g = make_grid(1, 1.0, 256, "periodic")
    x = g.coords()[:, 0]
    (d,) = gradient(GridFunction(g, np.sin(2 * np.pi * x)))
    assert np.max(np.abs(d.values - 2 * np.pi * np.cos(2 * np.pi * x))) < 1e-2
