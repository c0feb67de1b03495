"""Oscillating and homogenised elliptic operators, resolvents, the resolvent
gap, the first-order corrector and prepared initial data."""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cell import CellSolution, CoefficientField, eval_cell_at, solve_cell
from .grid import (Grid, GridFunction, GridMismatchError, SolverError, State, assemble_stiffness,
                   gradient, h1_sq, l2_sq, make_grid, mass_weights, norm, stiffness_factor, to_closure,
                   lift)

RESOLUTION = 16  # require h <= eps / RESOLUTION


class ResolutionError(ValueError):
    def __init__(self, msg, min_n=None):
        super().__init__(msg)
        self.min_n = min_n


def minimal_n(extent: float, eps: float) -> int:
    """Smallest interval count n with extent / n <= eps / 16."""
    return int(math.ceil(RESOLUTION * extent / eps - 1e-9))


class EllipticOperator:
    """Sparse SPD operator A (or A + 1 for neumann/periodic) on a grid.

    ``matrix`` is the stiffness K of -div(a grad .); ``shifted`` adds the
    lumped mass when shift = 1. Inverses use a cached sparse LU factorisation.
    """

    def __init__(self, grid: Grid, coef_cells: np.ndarray, source: dict):
        self.grid = grid
        self.bc = grid.bc
        self.shift = 0.0 if grid.bc == "dirichlet" else 1.0
        self.coef_cells = coef_cells
        self.source = source
        self.matrix = assemble_stiffness(grid, coef_cells)
        self.mass = mass_weights(grid)
        S = self.matrix + self.shift * sp.diags(self.mass)
        self.shifted = sp.csr_matrix(S)
        self.shifted.indices = self.shifted.indices.astype(np.int32)
        self.shifted.indptr = self.shifted.indptr.astype(np.int32)
        self._lu = None
        self._factor = None

    # ----------------------------------------------------------------- linear algebra
    @property
    def lu(self):
        if self._lu is None:
            self._lu = spla.splu(sp.csc_matrix(self.shifted), permc_spec="MMD_AT_PLUS_A")
        return self._lu

    def solve_matrix(self, b: np.ndarray, tol: float = 1e-10) -> np.ndarray:
        """x = S^-1 b with S the (shifted) stiffness.

        Accuracy is checked through the normwise backward error
        |b - S x| / (|S| |x| + |b|) (infinity norms); one refinement step is
        taken if it exceeds ``tol``.
        """
        b = np.asarray(b, float)
        if not np.any(b):
            return np.zeros_like(b)
        x = self.lu.solve(b)
        err = self._backward_error(x, b)
        if err > tol:
            x += self.lu.solve(b - self.shifted @ x)
            err = self._backward_error(x, b)
            if err > tol:
                raise SolverError(f"direct solve backward error {err:.3e} above {tol}")
        return x

    @property
    def norm_inf(self) -> float:
        if not hasattr(self, "_norm_inf"):
            self._norm_inf = float(abs(self.shifted).sum(axis=1).max())
        return self._norm_inf

    def _backward_error(self, x, b) -> float:
        r = b - self.shifted @ x
        return float(np.abs(r).max() / (self.norm_inf * np.abs(x).max() + np.abs(b).max()))

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Grid function A u (shift included): M^-1 S u."""
        return (self.shifted @ np.asarray(u, float)) / self.mass

    def inverse(self, f: np.ndarray) -> np.ndarray:
        """Grid function A^-1 f (shift included): S^-1 M f."""
        return self.solve_matrix(self.mass * np.asarray(f, float))

    @property
    def factor(self) -> sp.csr_matrix:
        if self._factor is None:
            self._factor = stiffness_factor(self.grid, self.coef_cells, self.shift > 0)
        return self._factor

    def half_inverse(self, b: np.ndarray) -> np.ndarray:
        """z with |z|^2 = b^T S^-1 b."""
        return self.factor @ self.solve_matrix(b)

    def __repr__(self):
        return f"EllipticOperator({self.grid}, {self.source})"


def _resolve_grid(grid: Grid, bc: Optional[str]) -> Grid:
    if bc is not None and bc != grid.bc:
        raise GridMismatchError(f"bc {bc!r} differs from grid bc {grid.bc!r}")
    return grid


def assemble(coeff_or_ah, eps: Optional[float], grid: Grid, bc: Optional[str] = None,
             strict: bool = True) -> EllipticOperator:
    """Assemble A_eps = -div(a(x/eps) grad) (CoefficientField with eps) or
    A_0 = -div(a_h grad) (matrix or scalar with eps None).

    Under-resolved eps (h > eps/16) is an error naming the minimal n.
    """
    grid = _resolve_grid(grid, bc)
    mids = grid.cell_midpoints()
    if isinstance(coeff_or_ah, CoefficientField):
        coeff = coeff_or_ah
        if coeff.dim != grid.dim:
            raise GridMismatchError("coefficient and grid dimensions differ")
        coeff.check_ellipticity()
        if eps is None:
            eps = 1.0
        if eps <= 0:
            raise ValueError("eps must be positive")
        for a in range(grid.dim):
            if grid.h[a] > eps / RESOLUTION * (1 + 1e-12):
                need = minimal_n(grid.extent[a], eps)
                raise ResolutionError(
                    f"eps = {eps:g} is under-resolved on axis {a}: h = {grid.h[a]:g} > eps/16; "
                    f"use n >= {need}", min_n=need)
            ratio = eps / grid.h[a]
            if strict and abs(ratio - round(ratio)) > 1e-9:
                warnings.warn(f"eps / h = {ratio:g} is not an integer; coefficient faces may "
                              "not align with the mesh", stacklevel=2)
        coef = coeff.evaluate(mids / eps)
        src = {"coeff": coeff.kind, "eps": float(eps)}
    else:
        ah = np.atleast_2d(np.asarray(coeff_or_ah, float))
        if ah.shape == (1, 1) and grid.dim == 2:
            ah = ah[0, 0] * np.eye(2)
        if ah.shape != (grid.dim, grid.dim):
            raise ValueError("homogenised matrix has wrong shape")
        ev = np.linalg.eigvalsh(0.5 * (ah + ah.T))
        if ev[0] <= 0:
            raise ValueError("homogenised matrix is not positive definite")
        coef = np.broadcast_to(ah, (grid.ncell, grid.dim, grid.dim)).copy()
        src = {"a_h": ah.tolist()}
    return EllipticOperator(grid, coef, src)


@functools.lru_cache(maxsize=32)
def laplacian(grid: Grid) -> EllipticOperator:
    """Identity-coefficient reference operator (shifted for neumann/periodic);
    defines the H^-1 norm."""
    return assemble(np.eye(grid.dim), None, grid)


def apply_inverse(op: EllipticOperator, g, tol: float = 1e-10) -> GridFunction:
    """u = A^-1 g (A + 1 for neumann/periodic) with relative residual <= tol."""
    vals = g.values if isinstance(g, GridFunction) else np.asarray(g, float)
    if isinstance(g, GridFunction) and g.grid != op.grid:
        raise GridMismatchError("right-hand side on a different grid")
    if vals.shape != (op.grid.ndof,):
        raise GridMismatchError("right-hand side has wrong length")
    return GridFunction(op.grid, op.solve_matrix(op.mass * vals, tol=tol))


def _same_space(a: EllipticOperator, b: EllipticOperator):
    if a.grid != b.grid:
        raise GridMismatchError("operators live on different grids")


def resolvent_difference(op_eps, op_0, phi):
    return op_eps.inverse(phi) - op_0.inverse(phi)


def resolvent_gap(op_eps: EllipticOperator, op_0: EllipticOperator, tol: float = 1e-12,
                  maxiter: int = 20000, seed: int = 0, return_info: bool = False):
    """Largest |eigenvalue| of D = A_eps^-1 - A_0^-1 (self-adjoint in the
    lumped-mass inner product), by power iteration.

    Iterates x <- D x / |D x|_M; stops when the estimate |D x|_M changes by at
    most ``tol`` relative.
    """
    _same_space(op_eps, op_0)
    m = op_eps.mass
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op_eps.grid.ndof)
    x /= np.sqrt(m @ (x * x))
    prev = None
    for it in range(1, maxiter + 1):
        y = resolvent_difference(op_eps, op_0, x)
        lam = float(np.sqrt(m @ (y * y)))
        if lam == 0.0:
            return (0.0, it) if return_info else 0.0
        if prev is not None and abs(lam - prev) <= tol * lam:
            return (lam, it) if return_info else lam
        prev = lam
        x = y / lam
    raise SolverError(f"power iteration stagnated after {maxiter} iterations", iterations=maxiter)


def dense_resolvent_gap(op_eps: EllipticOperator, op_0: EllipticOperator) -> float:
    """Oracle: spectral radius of M^1/2 D M^-1/2 from dense matrices."""
    _same_space(op_eps, op_0)
    m = op_eps.mass
    Se = op_eps.shifted.toarray()
    S0 = op_0.shifted.toarray()
    sm = np.sqrt(m)
    # M^1/2 (Se^-1 - S0^-1) M^1/2 is symmetric
    Dm = sm[:, None] * (np.linalg.inv(Se) - np.linalg.inv(S0)) * sm[None, :]
    Dm = 0.5 * (Dm + Dm.T)
    return float(np.abs(np.linalg.eigvalsh(Dm)).max())


# ---------------------------------------------------------------- corrector

@dataclass
class Corrector:
    cellsol: CellSolution
    eps: float

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @property
    def trivial(self) -> bool:
        return all(not np.any(Ni.values) for Ni in self.cellsol.N)


def corrector_apply(corr: Corrector, u0: GridFunction) -> GridFunction:
    """T_eps u0 = u0 + eps * sum_i N_i(x/eps) d_i u0, evaluated on every node
    of the closed domain (no boundary condition is imposed)."""
    g = u0.grid
    if g.dim != corr.cellsol.cell_grid.dim:
        raise GridMismatchError("corrector and function dimensions differ")
    base = to_closure(u0)
    if corr.trivial:
        return base
    grads = gradient(u0, closure=True)
    pts = base.grid.coords()
    out = base.values.copy()
    for i, gi in enumerate(grads):
        out += corr.eps * eval_cell_at(corr.cellsol, i, pts, corr.eps) * gi.values
    return GridFunction(base.grid, out)


def correct_state(corr: Corrector, st: State) -> State:
    """Pair corrector (T_eps u, v); both components on the closure grid."""
    cu = corrector_apply(corr, st.u)
    return State(cu, to_closure(st.v), st.t, st.tag)


# ------------------------------------------------------------ prepared data

def prepare_initial(op_eps: EllipticOperator, op_0: EllipticOperator, xi: State) -> State:
    """Pi_eps xi: componentwise S_0^-1 S_eps xi^i (S the shifted stiffness)."""
    _same_space(op_eps, op_0)
    if xi.grid != op_eps.grid:
        raise GridMismatchError("state not on the operator grid")
    u = op_0.solve_matrix(op_eps.shifted @ xi.u.values)
    v = op_0.solve_matrix(op_eps.shifted @ xi.v.values)
    return State.from_arrays(xi.grid, u, v, xi.t, tag="prepared")


def unprepare(op_eps: EllipticOperator, op_0: EllipticOperator, xi0: State) -> State:
    """Inverse of prepare_initial."""
    _same_space(op_eps, op_0)
    u = op_eps.solve_matrix(op_0.shifted @ xi0.u.values)
    v = op_eps.solve_matrix(op_0.shifted @ xi0.v.values)
    return State.from_arrays(xi0.grid, u, v, xi0.t)


def e2_norm(xi: State, op: EllipticOperator, g=None) -> float:
    return norm(xi, "E2", ref_op=op, g=g)


def discrete_h2(u: GridFunction) -> float:
    """||L u|| with L the identity-coefficient reference operator."""
    return float(np.sqrt(l2_sq(laplacian(u.grid).apply(u.values), u.grid)))


# ---------------------------------------------------------------- rate study

@dataclass
class RateReport:
    eps: np.ndarray
    columns: dict
    fits: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def column(self, name):
        return self.columns[name]


def force_values(g, grid: Grid) -> np.ndarray:
    if isinstance(g, GridFunction):
        return g.values
    if callable(g):
        return np.asarray(g(grid.coords()), float).reshape(grid.ndof)
    if np.ndim(g) > 0:
        return np.asarray(g, float).reshape(grid.ndof)
    return np.full(grid.ndof, float(g))


def elliptic_rate_study(coeff: CoefficientField, bc: str, eps_list: Sequence[float], g,
                        n: int, extent: float = 1.0, n_cell: Optional[int] = None,
                        compute_gap: bool = True, gap_tol: float = 1e-12) -> RateReport:
    """Per-eps L2 error |u_eps - u_0|, corrected H1 error |u_eps - T_eps u_0|
    (closure grid, full H1 norm) and resolvent gap, with log-log fits."""
    from .rates import fit_rate

    eps_list = [float(e) for e in eps_list]
    grid = make_grid(coeff.dim, extent, n, bc)
    for e in eps_list:
        for a in range(grid.dim):
            if grid.h[a] > e / RESOLUTION * (1 + 1e-12):
                raise ResolutionError(
                    f"eps = {e:g} under-resolved; use n >= {minimal_n(extent, e)}",
                    min_n=minimal_n(extent, e))
    if n_cell is None:
        n_cell = 1024 if coeff.dim == 1 else 128
    cs = solve_cell(coeff, n_cell)
    op0 = assemble(cs.a_h, None, grid)
    gv = force_values(g, grid)
    u0 = apply_inverse(op0, gv)
    cgrid = grid.closure()
    rows = {"err_L2": [], "err_H1corr": [], "err_H1": [], "gap": []}
    for e in eps_list:
        ope = assemble(coeff, e, grid)
        ue = apply_inverse(ope, gv)
        rows["err_L2"].append(np.sqrt(l2_sq(ue.values - u0.values, grid)))
        tu = corrector_apply(Corrector(cs, e), u0)
        ue_c = lift(ue.values, grid)
        rows["err_H1corr"].append(np.sqrt(h1_sq(ue_c - tu.values, cgrid)))
        rows["err_H1"].append(np.sqrt(h1_sq(ue_c - lift(u0.values, grid), cgrid)))
        rows["gap"].append(resolvent_gap(ope, op0, tol=gap_tol) if compute_gap else np.nan)
    eps_arr = np.asarray(eps_list)
    cols = {k: np.asarray(v, float) for k, v in rows.items()}
    fits, flags = {}, {}
    for k in ("err_L2", "err_H1corr", "err_H1", "gap"):
        y = cols[k]
        if np.all(np.isfinite(y)) and np.all(y > 0) and len(y) >= 3:
            fits[k] = fit_rate(list(zip(eps_arr, y)))
            if fits[k][2] < 0.9:
                flags[k] = f"inconclusive: R^2 = {fits[k][2]:.3f} < 0.9"
        else:
            flags[k] = "inconclusive: fewer than 3 positive points"
    meta = {"n": n, "extent": extent, "bc": bc, "n_cell": n_cell, "a_h": cs.a_h.tolist(),
            "gap_tol": gap_tol, "solve_tol": 1e-10, "flags": flags}
    return RateReport(eps_arr, cols, fits, meta)
