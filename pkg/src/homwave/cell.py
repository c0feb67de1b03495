"""Periodic coefficient fields, cell problems and the homogenised matrix."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .grid import Grid, GridFunction, assemble_stiffness, make_grid, solve_spd, _reference_gradients, _cell_nodes

KINDS = ("constant", "piecewise_constant_1d", "laminate_2d", "trigonometric")


class EllipticityError(ValueError):
    pass


@dataclass
class CoefficientField:
    """Symmetric 1-periodic matrix coefficient a(y).

    kinds
      constant               : ``matrix`` (d x d)
      piecewise_constant_1d  : scalar b(y) = values[k] on [breakpoints[k], breakpoints[k+1]),
                               a = b * I (dim 1)
      laminate_2d            : same profile along ``axis``, a = b(y_axis) * I (dim 2)
      trigonometric          : a = (base + sum amp * sin(2 pi k.y + phase)) * matrix
    """
    dim: int
    kind: str
    matrix: Optional[np.ndarray] = None
    breakpoints: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    axis: int = 0
    base: float = 1.0
    terms: list = field(default_factory=list)  # (amp, (k1[, k2]), phase)
    nu: Optional[float] = None
    symmetric: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown coefficient kind {self.kind!r}")
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.matrix is None:
            self.matrix = np.eye(self.dim)
        self.matrix = np.atleast_2d(np.asarray(self.matrix, float))
        if self.matrix.shape != (self.dim, self.dim):
            raise ValueError(f"matrix must be {self.dim}x{self.dim}")
        if not np.allclose(self.matrix, self.matrix.T, rtol=0, atol=0):
            raise ValueError("coefficient matrix must be symmetric")
        if self.kind in ("piecewise_constant_1d", "laminate_2d"):
            if self.kind == "piecewise_constant_1d" and self.dim != 1:
                raise ValueError("piecewise_constant_1d needs dim = 1")
            if self.kind == "laminate_2d" and self.dim != 2:
                raise ValueError("laminate_2d needs dim = 2")
            bp = np.asarray(self.breakpoints, float)
            vals = np.asarray(self.values, float)
            if bp.ndim != 1 or bp.shape != vals.shape or bp[0] != 0.0:
                raise ValueError("breakpoints must start at 0 and match values")
            if np.any(np.diff(bp) <= 0) or bp[-1] >= 1.0:
                raise ValueError("breakpoints must increase inside [0, 1)")
            self.breakpoints, self.values = bp, vals
        self.terms = [(float(a), tuple(float(x) for x in np.atleast_1d(k)), float(p))
                      for a, k, p in self.terms]
        for _, k, _ in self.terms:
            if len(k) != self.dim:
                raise ValueError("trigonometric wave vector has wrong length")
        if self.nu is None:
            self.nu = self.measured_nu()
        self.check_ellipticity()

    # -------------------------------------------------------------- values
    def scalar(self, y: np.ndarray) -> np.ndarray:
        """Scalar profile b(y) (a = b * matrix); y has shape (m, dim)."""
        y = np.mod(np.atleast_2d(np.asarray(y, float)), 1.0)
        if self.kind == "constant":
            return np.ones(y.shape[0])
        if self.kind in ("piecewise_constant_1d", "laminate_2d"):
            col = y[:, self.axis if self.kind == "laminate_2d" else 0]
            k = np.searchsorted(self.breakpoints, col, side="right") - 1
            return self.values[k]
        out = np.full(y.shape[0], float(self.base))
        for amp, kv, ph in self.terms:
            out += amp * np.sin(2 * np.pi * (y @ np.asarray(kv)) + ph)
        return out

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        """(m, dim, dim) coefficient values at points y (taken mod 1)."""
        return self.scalar(y)[:, None, None] * self.matrix[None]

    def measured_nu(self, m: int = 64) -> float:
        lam = self._eig_range(m)
        return float(min(lam[0], 1.0 / lam[1]))

    def _eig_range(self, m: int = 64):
        ax = (np.arange(m) + 0.5) / m
        pts = np.stack([g.ravel() for g in np.meshgrid(*([ax] * self.dim), indexing="ij")], 1)
        if self.kind in ("piecewise_constant_1d", "laminate_2d"):
            s = self.values
        else:
            s = self.scalar(pts)
        ev = np.linalg.eigvalsh(self.matrix)
        prods = np.outer([s.min(), s.max()], [ev[0], ev[-1]])
        return float(prods.min()), float(prods.max())

    def check_ellipticity(self, m: int = 64):
        lo, hi = self._eig_range(m)
        if not (self.nu > 0 and lo >= self.nu * (1 - 1e-12) and hi <= (1 + 1e-12) / self.nu):
            raise EllipticityError(
                f"coefficient eigenvalues in [{lo:.6g}, {hi:.6g}] violate nu = {self.nu}")

    def snapped(self, n: int) -> tuple:
        """Copy with breakpoints moved to the nearest multiple of 1/n, and the
        list of (original, snapped) moves that actually changed something."""
        if self.kind not in ("piecewise_constant_1d", "laminate_2d"):
            return self, []
        new = np.round(self.breakpoints * n) / n
        moves = [(float(a), float(b)) for a, b in zip(self.breakpoints, new) if a != b]
        if np.any(np.diff(new) <= 0) or new[-1] >= 1.0:
            raise ValueError(f"n = {n} too coarse to separate the coefficient breakpoints")
        if not moves:
            return self, []
        c = CoefficientField(self.dim, self.kind, self.matrix, new, self.values, self.axis,
                             self.base, list(self.terms), self.nu)
        return c, moves

    @property
    def is_constant(self) -> bool:
        if self.kind == "constant":
            return True
        if self.kind == "trigonometric":
            return all(a == 0 for a, _, _ in self.terms)
        return bool(np.all(self.values == self.values[0]))

    def describe(self) -> dict:
        d = {"dim": self.dim, "kind": self.kind, "nu": self.nu,
             "matrix": self.matrix.tolist()}
        if self.kind in ("piecewise_constant_1d", "laminate_2d"):
            d.update(breakpoints=self.breakpoints.tolist(), values=self.values.tolist(), axis=self.axis)
        if self.kind == "trigonometric":
            d.update(base=self.base, terms=[list(t) for t in self.terms])
        return d


def two_phase(lo=1.0, hi=4.0, nu=None) -> CoefficientField:
    """1D coefficient equal to ``lo`` on [0, 1/2) and ``hi`` on [1/2, 1)."""
    return CoefficientField(1, "piecewise_constant_1d", breakpoints=[0.0, 0.5], values=[lo, hi], nu=nu)


@dataclass
class CellSolution:
    cell_grid: Grid
    N: List[GridFunction]
    a_h: np.ndarray
    residual: List[float]
    coeff: CoefficientField
    snaps: list = field(default_factory=list)
    asymmetry: float = 0.0
    iterations: List[int] = field(default_factory=list)

    def as_table(self) -> np.ndarray:
        """Rows (y_1..y_d, N_1..N_d) on the cell grid nodes."""
        return np.column_stack([self.cell_grid.coords()] + [Ni.values for Ni in self.N])


def _cell_rhs_and_flux(grid: Grid, coef: np.ndarray):
    """Load vectors -(a e_i, grad phi) for every i, shape (dim, ndof)."""
    w, B = _reference_gradients(grid.dim, grid.h)
    nodes = _cell_nodes(grid)
    # contribution of cell c to node k: -sum_q w_q sum_j a_c[j, i] B_q[j, k]
    contrib = -np.einsum("q,cji,qjk->cik", w, coef, B)
    out = np.zeros((grid.dim, grid.ndof))
    for i in range(grid.dim):
        out[i] = np.bincount(nodes.ravel(), weights=contrib[:, i, :].ravel(), minlength=grid.ndof)
    return out


def solve_cell(coeff: CoefficientField, n_cell: int, tol: float = 1e-12) -> CellSolution:
    """Cell correctors N_i on the unit torus and the homogenised matrix a_h.

    Discontinuities are snapped to cell-grid nodes first; the coefficient is
    sampled at element midpoints exactly as in the stiffness assembly, so a_h
    uses the same quadrature.
    """
    if n_cell < 8:
        raise ValueError("n_cell must be >= 8")
    coeff.check_ellipticity()
    c, snaps = coeff.snapped(n_cell)
    grid = make_grid(coeff.dim, 1.0, n_cell, "periodic")
    coef = c.evaluate(grid.cell_midpoints())
    d = coeff.dim
    if c.is_constant:
        # right-hand sides vanish identically
        N = [GridFunction(grid, np.zeros(grid.ndof)) for _ in range(d)]
        a_h = np.array(c.evaluate(np.zeros((1, d)))[0])
        return CellSolution(grid, N, a_h, [0.0] * d, coeff, snaps, 0.0, [0] * d)
    K = assemble_stiffness(grid, coef)
    rhs = _cell_rhs_and_flux(grid, coef)
    N, res, its = [], [], []
    for i in range(d):
        b = rhs[i] - rhs[i].mean()
        x, it, _ = solve_spd(K, b, tol=tol, zero_mean=True, maxiter=50 * grid.ndof,
                             return_info=True)
        x -= x.mean()
        r = K @ x - b
        res.append(float(np.linalg.norm(r - r.mean()) / max(np.linalg.norm(b), 1e-300)))
        its.append(it)
        N.append(GridFunction(grid, x))
    # a_h[i, j] = int a_ij + (a grad N_j)_i, element quadrature
    w, B = _reference_gradients(d, grid.h)
    nodes = _cell_nodes(grid)
    vol = float(np.sum(w)) * grid.ncell
    a_h = np.einsum("cij->ij", coef) * (vol / grid.ncell)
    for j in range(d):
        loc = N[j].values[nodes]  # (ncell, nloc)
        grads = np.einsum("qjk,ck->cqj", B, loc)  # (ncell, q, dim)
        flux = np.einsum("q,cij,cqj->i", w, coef, grads)
        a_h[:, j] += flux
    asym = float(np.abs(a_h - a_h.T).max())
    a_h = 0.5 * (a_h + a_h.T)
    return CellSolution(grid, N, a_h, res, coeff, snaps, asym, its)


def harmonic_mean_oracle_1d(coeff: CoefficientField, panels: int = 10_000) -> float:
    """(int_0^1 a(y)^-1 dy)^-1 by composite 5-point Gauss-Legendre quadrature,
    with panel edges also placed at any coefficient breakpoints."""
    if coeff.dim != 1:
        raise ValueError("harmonic mean oracle is one-dimensional")
    edges = np.linspace(0.0, 1.0, panels + 1)
    if coeff.breakpoints is not None:
        edges = np.union1d(edges, coeff.breakpoints)
    x, w = np.polynomial.legendre.leggauss(5)
    a, b = edges[:-1], edges[1:]
    pts = (0.5 * (b - a)[:, None] * (x[None] + 1.0) + a[:, None]).ravel()
    wts = (0.5 * (b - a)[:, None] * w[None]).ravel()
    vals = coeff.scalar(pts[:, None]) * coeff.matrix[0, 0]
    return float(1.0 / np.sum(wts / vals))


def eval_cell_at(cellsol: CellSolution, i: int, x, eps: float) -> np.ndarray:
    """N_i(x / eps) by periodic multilinear interpolation on the cell grid."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = cellsol.cell_grid
    x = np.atleast_2d(np.asarray(x, float))
    if x.shape[1] != g.dim and g.dim == 1:
        x = x.reshape(-1, 1)
    y = np.mod(x / eps, 1.0)
    vals = cellsol.N[i].values.reshape(g.lattice_shape)
    n = g.n
    s = y * np.asarray(n)[None]
    i0 = np.floor(s).astype(np.int64)
    t = s - i0
    i0 = np.mod(i0, np.asarray(n)[None])
    i1 = np.mod(i0 + 1, np.asarray(n)[None])
    if g.dim == 1:
        v0, v1 = vals[i0[:, 0]], vals[i1[:, 0]]
        return (1 - t[:, 0]) * v0 + t[:, 0] * v1
    tx, ty = t[:, 0], t[:, 1]
    return ((1 - tx) * (1 - ty) * vals[i0[:, 0], i0[:, 1]] + tx * (1 - ty) * vals[i1[:, 0], i0[:, 1]]
            + (1 - tx) * ty * vals[i0[:, 0], i1[:, 1]] + tx * ty * vals[i1[:, 0], i1[:, 1]])


def closed_form_cell_1d(coeff: CoefficientField, y, a_h: Optional[float] = None) -> np.ndarray:
    """Zero-mean N with N' = a_h / a - 1 for piecewise-constant 1D coefficients."""
    if coeff.kind != "piecewise_constant_1d":
        raise ValueError("closed form needs a piecewise-constant 1D coefficient")
    bp = np.append(coeff.breakpoints, 1.0)
    vals = coeff.values * coeff.matrix[0, 0]
    if a_h is None:
        a_h = 1.0 / np.sum(np.diff(bp) / vals)
    slopes = a_h / vals - 1.0
    # N at breakpoints with N(0) = 0, then remove the mean
    nodes = np.concatenate([[0.0], np.cumsum(slopes * np.diff(bp))])
    mean = np.sum(np.diff(bp) * (nodes[:-1] + 0.5 * slopes * np.diff(bp)))
    y = np.mod(np.asarray(y, float), 1.0)
    k = np.searchsorted(coeff.breakpoints, y, side="right") - 1
    return nodes[k] + slopes[k] * (y - coeff.breakpoints[k]) - mean
