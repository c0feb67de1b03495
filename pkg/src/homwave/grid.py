"""Uniform grids on intervals, rectangles and tori; grid functions, discrete
norms, gradients and a conjugate-gradient SPD solver.

Conventions
-----------
``n`` counts intervals per axis, so ``h = extent / n`` for every boundary
condition. Degrees of freedom per axis: dirichlet ``n - 1`` (boundary nodes
excluded), neumann ``n + 1`` (all nodes), periodic ``n`` (opposite faces
identified). 2D dofs are stored row-major with axis 0 slowest.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from . import kernels

BCS = ("dirichlet", "neumann", "periodic")
DEFAULT_TOL = 1e-10


class SolverError(RuntimeError):
    """Linear solver failed to reach its tolerance."""

    def __init__(self, msg, iterations=None, residual=None):
        super().__init__(msg)
        self.iterations = iterations
        self.residual = residual


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    dim: int
    extent: tuple
    n: tuple
    bc: str

    @property
    def h(self) -> tuple:
        return tuple(l / k for l, k in zip(self.extent, self.n))

    @property
    def dof_shape(self) -> tuple:
        off = {"dirichlet": -1, "neumann": 1, "periodic": 0}[self.bc]
        return tuple(k + off for k in self.n)

    @property
    def ndof(self) -> int:
        return int(np.prod(self.dof_shape))

    @property
    def lattice_shape(self) -> tuple:
        """Node count per axis of the full node lattice (boundary included)."""
        return tuple(k if self.bc == "periodic" else k + 1 for k in self.n)

    @property
    def ncell(self) -> int:
        return int(np.prod(self.n))

    def axis_nodes(self, axis: int) -> np.ndarray:
        """Coordinates of the dof nodes along one axis."""
        h = self.h[axis]
        k = self.n[axis]
        if self.bc == "dirichlet":
            return h * np.arange(1, k)
        if self.bc == "neumann":
            return h * np.arange(0, k + 1)
        return h * np.arange(0, k)

    def coords(self) -> np.ndarray:
        """(ndof, dim) array of dof node positions."""
        axes = [self.axis_nodes(a) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def cell_midpoints(self) -> np.ndarray:
        """(ncell, dim) cell midpoints, row-major over cells."""
        axes = [self.h[a] * (np.arange(self.n[a]) + 0.5) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def closure(self) -> "Grid":
        """Grid carrying every node of the closed box (same n, neumann layout)."""
        if self.bc == "periodic":
            return self
        return Grid(self.dim, self.extent, self.n, "neumann")

    def __str__(self):
        return f"Grid(dim={self.dim}, extent={self.extent}, n={self.n}, bc={self.bc})"


def make_grid(dim: int, extent, n, bc: str) -> Grid:
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    extent = tuple(float(e) for e in np.broadcast_to(np.asarray(extent, float), (dim,)))
    n = tuple(int(k) for k in np.broadcast_to(np.asarray(n), (dim,)))
    if bc not in BCS:
        raise ValueError(f"bc must be one of {BCS}, got {bc!r}")
    if any(k < 4 for k in n):
        raise ValueError(f"need n >= 4 per axis, got {n}")
    if any(not (e > 0 and np.isfinite(e)) for e in extent):
        raise ValueError(f"extent must be positive, got {extent}")
    return Grid(dim, extent, n, bc)


@dataclass
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.ndof,):
            raise GridMismatchError(
                f"values have shape {self.values.shape}, grid needs ({self.grid.ndof},)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function has non-finite values")

    def __add__(self, other):
        return GridFunction(self.grid, self.values + _vals(other, self.grid))

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - _vals(other, self.grid))

    def __mul__(self, c):
        return GridFunction(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)


def _vals(x, grid=None):
    if isinstance(x, GridFunction):
        if grid is not None and x.grid != grid:
            raise GridMismatchError(f"{x.grid} vs {grid}")
        return x.values
    return np.asarray(x, dtype=float)


@dataclass
class State:
    """Energy-space pair (u, du/dt) at time t."""
    u: GridFunction
    v: GridFunction
    t: float = 0.0
    tag: Optional[str] = field(default=None, compare=False)

    def __post_init__(self):
        if self.u.grid != self.v.grid:
            raise GridMismatchError("u and v live on different grids")

    @property
    def grid(self) -> Grid:
        return self.u.grid

    @classmethod
    def from_arrays(cls, grid, u, v, t=0.0, tag=None):
        return cls(GridFunction(grid, u), GridFunction(grid, v), float(t), tag)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u.values, self.v.values])


@dataclass(frozen=True)
class NormKind:
    tag: str
    beta: Optional[float] = None

    TAGS = ("L2", "H1", "Hminus1", "Cbeta", "E", "Eminus1", "E1", "E2")

    def __post_init__(self):
        if self.tag not in self.TAGS:
            raise ValueError(f"unknown norm {self.tag!r}")
        if self.tag == "Cbeta":
            if self.beta is None or not (0.0 <= self.beta < 1.0):
                raise ValueError("Cbeta needs 0 <= beta < 1")

    @property
    def on_pairs(self) -> bool:
        return self.tag in ("E", "Eminus1", "E1", "E2")

    @property
    def needs_ref(self) -> bool:
        return self.tag in ("Hminus1", "Eminus1", "E1", "E2")


def as_kind(kind: Union[str, NormKind]) -> NormKind:
    if isinstance(kind, NormKind):
        return kind
    if kind.startswith("Cbeta"):
        return NormKind("Cbeta", float(kind[len("Cbeta"):].strip("()") or 0.0))
    return NormKind(kind)


# ---------------------------------------------------------------- assembly

@functools.lru_cache(maxsize=64)
def lattice_to_dof(grid: Grid) -> np.ndarray:
    """Map from full-lattice node index to dof index (-1 for removed nodes)."""
    shape = grid.lattice_shape
    idx = np.indices(shape).reshape(grid.dim, -1)
    if grid.bc == "dirichlet":
        inner = np.all([(idx[a] > 0) & (idx[a] < shape[a] - 1) for a in range(grid.dim)], axis=0)
        out = -np.ones(idx.shape[1], dtype=np.int64)
        out[inner] = np.arange(inner.sum())
        return out
    return np.arange(idx.shape[1], dtype=np.int64)


def _cell_nodes(grid: Grid) -> np.ndarray:
    """(ncell, 2**dim) full-lattice node indices of each cell's corners."""
    shape = grid.lattice_shape
    per = grid.bc == "periodic"
    if grid.dim == 1:
        i = np.arange(grid.n[0])
        j = (i + 1) % shape[0] if per else i + 1
        return np.stack([i, j], axis=1)
    i0, i1 = np.meshgrid(np.arange(grid.n[0]), np.arange(grid.n[1]), indexing="ij")
    i0, i1 = i0.ravel(), i1.ravel()
    j0 = (i0 + 1) % shape[0] if per else i0 + 1
    j1 = (i1 + 1) % shape[1] if per else i1 + 1
    s = shape[1]
    # local order: (0,0), (1,0), (0,1), (1,1)
    return np.stack([i0 * s + i1, j0 * s + i1, i0 * s + j1, j0 * s + j1], axis=1)


@functools.lru_cache(maxsize=8)
def _reference_gradients(dim: int, h: tuple):
    """Quadrature weights (q,) and shape-function gradients (q, dim, nloc)."""
    if dim == 1:
        return np.array([h[0]]), np.array([[[-1.0 / h[0], 1.0 / h[0]]]])
    g = 0.5 - 0.5 / np.sqrt(3.0)
    pts = [(g, g), (1 - g, g), (g, 1 - g), (1 - g, 1 - g)]
    corners = [(0, 0), (1, 0), (0, 1), (1, 1)]
    B = np.zeros((4, 2, 4))
    for q, (x, y) in enumerate(pts):
        for k, (a, b) in enumerate(corners):
            fy = y if b else 1 - y
            fx = x if a else 1 - x
            B[q, 0, k] = (2 * a - 1) / h[0] * fy
            B[q, 1, k] = (2 * b - 1) / h[1] * fx
    return np.full(4, h[0] * h[1] / 4.0), B


def _to_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    A.indices = A.indices.astype(np.int32)
    A.indptr = A.indptr.astype(np.int32)
    return A


def assemble_stiffness(grid: Grid, coef: np.ndarray) -> sp.csr_matrix:
    """Stiffness matrix for cellwise-constant coefficient ``coef``.

    ``coef`` has shape (ncell, dim, dim) (or (ncell,) for scalar multiples of
    the identity). Element matrices are integrated exactly.
    """
    coef = np.asarray(coef, float)
    if coef.ndim == 1:
        coef = coef[:, None, None] * np.eye(grid.dim)[None]
    w, B = _reference_gradients(grid.dim, grid.h)
    # Ke[c] = sum_q w_q B_q^T a_c B_q
    Kref = np.einsum("q,qik,qjl->ijkl", w, B, B)  # (dim, dim, nloc, nloc)
    Ke = np.einsum("cij,ijkl->ckl", coef, Kref)
    nodes = _cell_nodes(grid)
    rows = np.repeat(nodes, nodes.shape[1], axis=1).ravel()
    cols = np.tile(nodes, (1, nodes.shape[1])).ravel()
    m = grid.lattice_shape
    nl = int(np.prod(m))
    K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(nl, nl)).tocsr()
    dof = lattice_to_dof(grid)
    keep = np.flatnonzero(dof >= 0)
    K = K[keep][:, keep]
    K = 0.5 * (K + K.T)
    return _to_csr(K)


@functools.lru_cache(maxsize=64)
def mass_weights(grid: Grid) -> np.ndarray:
    """Lumped (trapezoid) mass per dof."""
    ws = []
    for a in range(grid.dim):
        h = grid.h[a]
        k = grid.dof_shape[a]
        w = np.full(k, h)
        if grid.bc == "neumann":
            w[0] = w[-1] = 0.5 * h
        ws.append(w)
    out = ws[0]
    for w in ws[1:]:
        out = np.outer(out, w).ravel()
    out.setflags(write=False)
    return out


@functools.lru_cache(maxsize=64)
def identity_stiffness(grid: Grid) -> sp.csr_matrix:
    return assemble_stiffness(grid, np.ones(grid.ncell))


def stiffness_factor(grid: Grid, coef: np.ndarray, with_mass: bool) -> sp.csr_matrix:
    """Sparse F with F^T F = K (+ M when ``with_mass``), K the stiffness of
    the cellwise coefficient ``coef`` (shape (ncell, dim, dim) or (ncell,)).
    Rows are coefficient-weighted gradients at the quadrature points."""
    coef = np.asarray(coef, float)
    if coef.ndim == 1:
        coef = coef[:, None, None] * np.eye(grid.dim)[None]
    Lc = np.linalg.cholesky(coef)  # a_c = L L^T
    w, B = _reference_gradients(grid.dim, grid.h)
    nodes = _cell_nodes(grid)
    nq, dim, nloc = B.shape
    ncell = nodes.shape[0]
    # row (cell, q, i): sqrt(w_q) sum_j L[j, i] B_q[j, k]
    vals = np.einsum("q,cji,qjk->cqik", np.sqrt(w), Lc, B)
    rows = np.arange(ncell * nq * dim).reshape(ncell, nq, dim)
    R = np.repeat(rows[..., None], nloc, axis=3)
    C = np.broadcast_to(nodes[:, None, None, :], R.shape)
    nl = int(np.prod(grid.lattice_shape))
    F = sp.coo_matrix((vals.ravel(), (R.ravel(), C.ravel())), shape=(ncell * nq * dim, nl)).tocsr()
    dof = lattice_to_dof(grid)
    F = F[:, np.flatnonzero(dof >= 0)]
    if with_mass:
        F = sp.vstack([F, sp.diags(np.sqrt(mass_weights(grid)))])
    return sp.csr_matrix(F)


@functools.lru_cache(maxsize=32)
def h1_factor(grid: Grid) -> sp.csr_matrix:
    """F with |F u|^2 = ||u||_H1^2 (seminorm on dirichlet grids, full norm
    otherwise)."""
    return stiffness_factor(grid, np.ones(grid.ncell), grid.bc != "dirichlet")


# ------------------------------------------------------------------ solver

def solve_spd(matrix, rhs, tol: float = DEFAULT_TOL, maxiter: Optional[int] = None,
              check: bool = True, zero_mean: bool = False, return_info: bool = False):
    """Conjugate gradients from a zero initial guess.

    Returns a GridFunction when ``rhs`` is one, else an ndarray (plus
    ``(iterations, relative residual)`` with ``return_info``). Raises
    SolverError (carrying the iteration count) on non-convergence.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = _to_csr(matrix)
    b = _vals(rhs).astype(float).copy()
    n = b.shape[0]
    if A.shape != (n, n):
        raise GridMismatchError(f"matrix {A.shape} vs rhs {n}")
    if check:
        d = A.diagonal()
        if np.any(d <= 0):
            raise SolverError("matrix is not positive definite (non-positive diagonal)")
        asym = abs(A - A.T).max() if A.nnz else 0.0
        if asym > 1e-12 * max(abs(A).max(), 1.0):
            raise SolverError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    if maxiter is None:
        maxiter = max(10 * n, 1000)
    x = np.zeros(n)
    if zero_mean:
        b -= b.mean()
    it, relres = kernels.cg_csr(A.indptr, A.indices, A.data, b, x, tol, int(maxiter), zero_mean)
    if it < 0:
        raise SolverError(
            f"CG did not converge in {maxiter} iterations (relative residual {relres:.3e})",
            iterations=maxiter, residual=relres)
    out = GridFunction(rhs.grid, x) if isinstance(rhs, GridFunction) else x
    if return_info:
        return out, int(it), float(relres)
    return out


# ------------------------------------------------------------------- lifts

def lift(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Values on the full node lattice (zeros at dirichlet boundary nodes)."""
    values = np.asarray(values, float)
    if grid.bc != "dirichlet":
        return values
    out = np.zeros(int(np.prod(grid.lattice_shape)))
    dof = lattice_to_dof(grid)
    out[dof >= 0] = values
    return out


def to_closure(x):
    """Lift a GridFunction or State from a dirichlet grid to its closure."""
    if isinstance(x, State):
        return State(to_closure(x.u), to_closure(x.v), x.t, x.tag)
    g = x.grid
    if g.bc != "dirichlet":
        return x
    return GridFunction(g.closure(), lift(x.values, g))


def gradient(u: GridFunction, closure: bool = False):
    """Per-axis derivative GridFunctions.

    Centred differences in the interior, one-sided at boundary nodes
    (dirichlet/neumann), wrapped for periodic grids. With ``closure=True`` a
    dirichlet input yields gradients on every node of the closed box.
    """
    g = u.grid
    full = lift(u.values, g).reshape(g.lattice_shape)
    out = []
    for a in range(g.dim):
        h = g.h[a]
        if g.bc == "periodic":
            d = (np.roll(full, -1, axis=a) - np.roll(full, 1, axis=a)) / (2 * h)
        else:
            d = np.gradient(full, h, axis=a, edge_order=1)
        d = d.ravel()
        if g.bc == "dirichlet" and not closure:
            d = d[lattice_to_dof(g) >= 0]
            out.append(GridFunction(g, d))
        else:
            out.append(GridFunction(g.closure(), d))
    return out


# ------------------------------------------------------------------- norms

def _check_ref(ref_op, grid):
    if ref_op is None:
        raise ValueError("this norm needs a reference operator")
    if ref_op.grid != grid:
        raise GridMismatchError(f"reference operator on {ref_op.grid}, data on {grid}")


def h1_sq(values, grid) -> float:
    K = identity_stiffness(grid)
    q = float(values @ (K @ values))
    if grid.bc != "dirichlet":
        q += float(mass_weights(grid) @ (values * values))
    return max(q, 0.0)


def l2_sq(values, grid) -> float:
    return float(mass_weights(grid) @ (values * values))


def hminus1_sq(values, grid, ref_op) -> float:
    _check_ref(ref_op, grid)
    mphi = mass_weights(grid) * values
    return max(float(mphi @ ref_op.solve_matrix(mphi)), 0.0)


def _apply_op(values, ref_op):
    return ref_op.apply(values)


_PAIR_CACHE = {}
CBETA_ALL_PAIRS_MAX = 512
CBETA_SAMPLE_PAIRS = 10_000
CBETA_SEED = 20240607


def cbeta_pairs(grid: Grid):
    """Node pairs used by the Cbeta seminorm (closure nodes for dirichlet)."""
    key = grid
    if key in _PAIR_CACHE:
        return _PAIR_CACHE[key]
    cg = grid.closure()
    m = cg.ndof
    if m <= CBETA_ALL_PAIRS_MAX:
        pi, pj = np.triu_indices(m, 1)
    else:
        rng = np.random.default_rng(CBETA_SEED)
        pi = rng.integers(0, m, CBETA_SAMPLE_PAIRS)
        pj = rng.integers(0, m, CBETA_SAMPLE_PAIRS)
        # nearest-neighbour pairs along each axis carry the steepest slopes
        idx = np.arange(m).reshape(cg.lattice_shape)
        extra_i, extra_j = [], []
        for a in range(cg.dim):
            sl0 = [slice(None)] * cg.dim
            sl1 = [slice(None)] * cg.dim
            sl0[a] = slice(0, -1)
            sl1[a] = slice(1, None)
            extra_i.append(idx[tuple(sl0)].ravel())
            extra_j.append(idx[tuple(sl1)].ravel())
        pi = np.concatenate([pi] + extra_i)
        pj = np.concatenate([pj] + extra_j)
    pts = np.ascontiguousarray(cg.coords())
    out = (np.ascontiguousarray(pi, dtype=np.int64), np.ascontiguousarray(pj, dtype=np.int64), pts)
    _PAIR_CACHE[key] = out
    return out


def cbeta_value(values, grid, beta) -> float:
    full = np.ascontiguousarray(lift(values, grid))
    pi, pj, pts = cbeta_pairs(grid)
    semi = kernels.holder_seminorm(full, pts, pi, pj, float(beta)) if len(pi) else 0.0
    return float(np.abs(full).max() + semi)


def norm(x, kind, ref_op=None, g=None) -> float:
    """Discrete norm of a GridFunction or State.

    ``ref_op`` supplies the inverse for Hminus1/Eminus1 (a Laplacian-type
    reference) and the operator A for E1/E2. ``g`` is the force entering E2
    (taken as zero when omitted, the right choice for differences).
    """
    kind = as_kind(kind)
    if kind.on_pairs:
        if not isinstance(x, State):
            raise TypeError(f"{kind.tag} applies to States")
        grid = x.grid
        u, v = x.u.values, x.v.values
        if kind.tag == "E":
            return float(np.sqrt(h1_sq(u, grid) + l2_sq(v, grid)))
        if kind.tag == "Eminus1":
            return float(np.sqrt(l2_sq(u, grid) + hminus1_sq(v, grid, ref_op)))
        _check_ref(ref_op, grid)
        Au = _apply_op(u, ref_op)
        Av = _apply_op(v, ref_op)
        if kind.tag == "E1":
            return float(np.sqrt(l2_sq(Au, grid) + h1_sq(v, grid)))
        gv = np.zeros_like(u) if g is None else _vals(g, grid)
        return float(np.sqrt(h1_sq(Au - gv, grid) + l2_sq(Au, grid) + l2_sq(Av, grid)))
    if isinstance(x, State):
        if kind.tag == "Cbeta":
            return float(np.hypot(norm(x.u, kind), norm(x.v, kind)))
        raise TypeError(f"{kind.tag} applies to GridFunctions")
    grid = x.grid
    vals = x.values
    if kind.tag == "L2":
        return float(np.sqrt(l2_sq(vals, grid)))
    if kind.tag == "H1":
        return float(np.sqrt(h1_sq(vals, grid)))
    if kind.tag == "Hminus1":
        return float(np.sqrt(hminus1_sq(vals, grid, ref_op)))
    return cbeta_value(vals, grid, kind.beta)


def embed(x: State, kind, ref_op=None) -> np.ndarray:
    """Euclidean embedding: |embed(a) - embed(b)| equals norm(a - b, kind).

    Available for L2/H1/Hminus1 on the first component and E/Eminus1/E1/E2
    (E2 without force: distances only) on States.
    """
    kind = as_kind(kind)
    grid = x.grid
    u, v = x.u.values, x.v.values
    sm = np.sqrt(mass_weights(grid))
    F = h1_factor(grid)

    def hm1(phi):
        _check_ref(ref_op, grid)
        mphi = mass_weights(grid) * phi
        return ref_op.half_inverse(mphi)

    if kind.tag == "L2":
        return sm * u
    if kind.tag == "H1":
        return F @ u
    if kind.tag == "Hminus1":
        return hm1(u)
    if kind.tag == "E":
        return np.concatenate([F @ u, sm * v])
    if kind.tag == "Eminus1":
        return np.concatenate([sm * u, hm1(v)])
    _check_ref(ref_op, grid)
    Au, Av = _apply_op(u, ref_op), _apply_op(v, ref_op)
    if kind.tag == "E1":
        return np.concatenate([sm * Au, F @ v])
    if kind.tag == "E2":
        return np.concatenate([F @ Au, sm * Au, sm * Av])
    raise ValueError(f"no Euclidean embedding for {kind.tag}")
