"""Damped semilinear wave semigroups: linearly implicit Crank-Nicolson
stepping, energy diagnostics, smooth initial data and trajectory gaps.

Equation (shift s = 0 for dirichlet, 1 for neumann/periodic):

    u_tt + gamma u_t + (A + s) u + f(u) = g

Step (trapezoid on the linear part, f at the current state), with S the
shifted stiffness and M the lumped mass:

    [(1 + gamma dt/2) M + dt^2/4 S] v' = M[(1 - gamma dt/2) v + dt (g - f(u))]
                                         - S (dt u + dt^2/4 v)
    u' = u + dt/2 (v + v')
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels
from .elliptic import (Corrector, EllipticOperator, corrector_apply, laplacian, prepare_initial)
from .grid import (GridFunction, GridMismatchError, SolverError, State, h1_sq, hminus1_sq,
                   identity_stiffness, l2_sq, lift, mass_weights, norm)

BLOWUP = 1e10


class BlowUpError(RuntimeError):
    def __init__(self, msg, t=None, steps=None):
        super().__init__(msg)
        self.t = t
        self.steps = steps


@dataclass(frozen=True)
class Nonlinearity:
    """f(s) = s^3 - lam * s (tag cubic_minus_linear), s^3 (cubic) or 0 (zero)."""
    tag: str = "cubic"
    lam: float = 0.0

    def __post_init__(self):
        if self.tag not in ("zero", "cubic", "cubic_minus_linear"):
            raise ValueError(f"unknown nonlinearity {self.tag!r}")
        if self.tag != "cubic_minus_linear" and self.lam != 0.0:
            raise ValueError("lam only applies to cubic_minus_linear")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")

    @property
    def c3(self) -> float:
        return 0.0 if self.tag == "zero" else 1.0

    @property
    def c1(self) -> float:
        return -self.lam

    def f(self, s):
        s = np.asarray(s, float)
        return (self.c3 * s * s + self.c1) * s

    def fprime(self, s):
        s = np.asarray(s, float)
        return 3.0 * self.c3 * s * s + self.c1

    def fsecond(self, s):
        return 6.0 * self.c3 * np.asarray(s, float)

    def F(self, s):
        s = np.asarray(s, float)
        return 0.25 * self.c3 * s ** 4 + 0.5 * self.c1 * s * s

    # documented bounds
    @property
    def K1(self):  # f(s) s >= -K1
        return self.lam ** 2 / 4.0 if self.c3 else 0.0

    @property
    def K2(self):  # f'(s) >= -K2
        return self.lam

    @property
    def K3(self):  # |f''(s)| <= K3 (1 + |s|)
        return 6.0 * self.c3

    @property
    def K4(self):  # |f'(s)| <= K4 (1 + s^2)
        return max(3.0 * self.c3, self.lam)

    @property
    def K5(self):  # |f(s)| <= K5 (1 + |s|^3)
        return self.c3 + self.lam

    def K_mu(self, mu: float) -> float:
        """Smallest K with F(s) >= -K - mu s^2 for all s."""
        if self.c3 == 0:
            return 0.0
        c = max(self.lam / 2.0 - mu, 0.0)
        return c * c

    def check(self, lo=-100.0, hi=100.0, m=20001, mus=(0.01, 0.1, 1.0)) -> dict:
        s = np.linspace(lo, hi, m)
        tol = 1e-9 * (1 + np.abs(s) ** 4)
        out = {
            "f0": float(self.f(0.0)) == 0.0,
            "K1": bool(np.all(self.f(s) * s >= -self.K1 - tol)),
            "K2": bool(np.all(self.fprime(s) >= -self.K2 - tol)),
            "K3": bool(np.all(np.abs(self.fsecond(s)) <= self.K3 * (1 + np.abs(s)) + tol)),
            "K4": bool(np.all(np.abs(self.fprime(s)) <= self.K4 * (1 + s * s) + tol)),
            "K5": bool(np.all(np.abs(self.f(s)) <= self.K5 * (1 + np.abs(s) ** 3) + tol)),
        }
        for mu in mus:
            out[f"F_mu{mu:g}"] = bool(np.all(self.F(s) >= -self.K_mu(mu) - mu * s * s - tol))
        return out


def _csr32(A):
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    A.indices = A.indices.astype(np.int32)
    A.indptr = A.indptr.astype(np.int32)
    return A


class WaveSystem:
    """Discrete damped wave system on the grid of ``op``."""

    def __init__(self, op: EllipticOperator, gamma: float, f: Nonlinearity, g, dt: float,
                 tol: float = 1e-10, maxiter: int = 5000, check_every: int = 16):
        self.op = op
        self.grid = op.grid
        if gamma < 0:
            raise ValueError("gamma must be >= 0")
        if gamma == 0:
            warnings.warn("gamma = 0: undamped system (diagnostics only)", stacklevel=2)
        self.gamma = float(gamma)
        self.f = f
        gv = g.values if isinstance(g, GridFunction) else np.broadcast_to(np.asarray(g, float), (op.grid.ndof,))
        self.g = np.ascontiguousarray(gv, dtype=float)
        if dt <= 0 or dt > min(self.grid.h) * (1 + 1e-12):
            raise ValueError(f"dt = {dt:g} must lie in (0, h]")
        self.dt = float(dt)
        self.tol = float(tol)
        self.maxiter = int(maxiter)
        self.check_every = int(check_every)
        M = mass_weights(self.grid)
        self.mass = np.ascontiguousarray(M)
        self.K = _csr32(op.shifted)
        self.S = _csr32((1 + 0.5 * self.gamma * self.dt) * sp.diags(M) + 0.25 * self.dt ** 2 * op.shifted)
        E = identity_stiffness(self.grid)
        if self.grid.bc != "dirichlet":
            E = E + sp.diags(M)
        self.E = _csr32(E)
        self.cg_iterations = 0
        self.worst_residual = 0.0

    def describe(self) -> dict:
        return {"gamma": self.gamma, "f": self.f.tag, "lam": self.f.lam, "dt": self.dt,
                "solver_tol": self.tol, "maxiter": self.maxiter, "op": self.op.source,
                "blowup": BLOWUP}

    def advance(self, u: np.ndarray, v: np.ndarray, nsteps: int, t0: float = 0.0):
        """In-place advance of contiguous arrays by nsteps steps."""
        if nsteps <= 0:
            return
        K, S, E = self.K, self.S, self.E
        status, done, its, worst = kernels.wave_advance(
            K.indptr, K.indices, K.data, S.indptr, S.indices, S.data, E.indptr, E.indices, E.data,
            self.mass, u, v, self.g, self.f.c1, self.f.c3, self.gamma, self.dt, int(nsteps),
            self.tol, self.maxiter, BLOWUP, self.check_every)
        self.cg_iterations += its
        self.worst_residual = max(self.worst_residual, worst)
        t = t0 + done * self.dt
        if status == 1:
            raise SolverError(f"step solve failed at t = {t:g} (residual {worst:.3e})")
        if status == 2 or not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise BlowUpError(f"energy norm exceeded {BLOWUP:g} at t = {t:g} after {done} steps",
                              t=t, steps=done)

    def acceleration(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """u_tt from the equation: g - f(u) - gamma v - (A + s) u."""
        return self.g - self.f.f(u) - self.gamma * v - self.op.apply(u)


def _check_state(sys: WaveSystem, st: State):
    if st.grid != sys.grid:
        raise GridMismatchError(f"state on {st.grid}, system on {sys.grid}")


def step(sys: WaveSystem, state: State) -> State:
    _check_state(sys, state)
    u = np.array(state.u.values, dtype=float, order="C")
    v = np.array(state.v.values, dtype=float, order="C")
    sys.advance(u, v, 1, state.t)
    return State.from_arrays(sys.grid, u, v, state.t + sys.dt, state.tag)


class Trajectory(list):
    """List of sampled States."""

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self])

    @property
    def last(self) -> State:
        return self[-1]


def _nsteps(T: float, dt: float, what: str) -> int:
    k = int(round(T / dt))
    if abs(k * dt - T) > 1e-9 * max(1.0, abs(T)):
        raise ValueError(f"{what} = {T:g} is not a multiple of dt = {dt:g}")
    return k


def evolve(sys: WaveSystem, xi: State, T: float, sample_every: Optional[float] = None) -> Trajectory:
    """Samples of S(t) xi at t = 0, sample_every, ..., T (default: only 0 and T)."""
    if T < 0:
        raise ValueError("T must be non-negative")
    _check_state(sys, xi)
    total = _nsteps(T, sys.dt, "T")
    every = total if sample_every is None else _nsteps(sample_every, sys.dt, "sample_every")
    if every <= 0:
        every = max(total, 1)
    u = np.array(xi.u.values, dtype=float, order="C")
    v = np.array(xi.v.values, dtype=float, order="C")
    out = Trajectory([State.from_arrays(sys.grid, u.copy(), v.copy(), xi.t, xi.tag)])
    done = 0
    while done < total:
        k = min(every, total - done)
        sys.advance(u, v, k, xi.t + done * sys.dt)
        done += k
        out.append(State.from_arrays(sys.grid, u.copy(), v.copy(), xi.t + done * sys.dt, xi.tag))
    return out


def energy(sys: WaveSystem, state: State) -> float:
    """1/2 |v|^2 + 1/2 (S u, u) + (F(u), 1) - (g, u), lumped quadrature."""
    _check_state(sys, state)
    u, v = state.u.values, state.v.values
    M = sys.mass
    return float(0.5 * M @ (v * v) + 0.5 * u @ (sys.K @ u) + M @ sys.f.F(u) - M @ (sys.g * u))


def energy_norm(state: State) -> float:
    return norm(state, "E")


# ---------------------------------------------------------- initial data

def smooth_field(grid, rng: np.random.Generator, n_modes: int = 6, decay: float = 2.0) -> np.ndarray:
    """Random smooth field with unit L2 norm, built from the boundary-compatible
    Fourier basis (sines for dirichlet, cosines for neumann, both for periodic)."""
    x = grid.coords()
    ext = np.asarray(grid.extent)
    out = np.zeros(grid.ndof)
    ks = np.arange(1, n_modes + 1) if grid.bc == "dirichlet" else np.arange(0, n_modes + 1)

    def basis(k, xa, l, which):
        if grid.bc == "dirichlet":
            return np.sin(k * np.pi * xa / l)
        if grid.bc == "neumann":
            return np.cos(k * np.pi * xa / l)
        return np.cos(2 * np.pi * k * xa / l) if which == 0 else np.sin(2 * np.pi * k * xa / l)

    kinds = (0,) if grid.bc != "periodic" else (0, 1)
    if grid.dim == 1:
        for k in ks:
            for w in kinds:
                if grid.bc == "periodic" and k == 0 and w == 1:
                    continue
                out += rng.standard_normal() / (1 + k) ** decay * basis(k, x[:, 0], ext[0], w)
    else:
        for k1 in ks:
            for k2 in ks:
                for w1 in kinds:
                    for w2 in kinds:
                        c = rng.standard_normal() / (1 + k1 + k2) ** decay
                        out += c * basis(k1, x[:, 0], ext[0], w1) * basis(k2, x[:, 1], ext[1], w2)
    nrm = np.sqrt(l2_sq(out, grid))
    return out / nrm if nrm > 0 else out


def smooth_initial_data(op: EllipticOperator, g, rng: np.random.Generator, amp_p: float = 1.0,
                        amp_q: float = 1.0, n_modes: int = 6) -> State:
    """xi = (A^-1 (p + g), A^-1 q) for smooth random p, q: a point of the
    discrete E^2 space of ``op``."""
    grid = op.grid
    gv = g.values if isinstance(g, GridFunction) else np.broadcast_to(np.asarray(g, float), (grid.ndof,))
    p = amp_p * smooth_field(grid, rng, n_modes)
    q = amp_q * smooth_field(grid, rng, n_modes)
    u = op.inverse(p + gv)
    v = op.inverse(q)
    return State.from_arrays(grid, u, v, 0.0, tag="E2")


def force_field(grid, kind: str = "constant", amplitude: float = 1.0) -> np.ndarray:
    """Deterministic forces: constant, the lowest boundary-compatible mode, or
    constant+mode = amplitude * (1 + mode)."""
    x = grid.coords()
    if kind == "constant+mode":
        return amplitude + force_field(grid, "mode", amplitude)
    if kind == "constant":
        return np.full(grid.ndof, float(amplitude))
    if kind == "zero":
        return np.zeros(grid.ndof)
    if kind == "mode":
        out = np.ones(grid.ndof)
        for a in range(grid.dim):
            l = grid.extent[a]
            if grid.bc == "dirichlet":
                out *= np.sin(np.pi * x[:, a] / l)
            elif grid.bc == "neumann":
                out *= np.cos(np.pi * x[:, a] / l)
            else:
                out *= np.sin(2 * np.pi * x[:, a] / l)
        return amplitude * out
    raise ValueError(f"unknown force kind {kind!r}")


# ---------------------------------------------------------- trajectory gaps

@dataclass
class GapSeries:
    t: np.ndarray
    gap_Eminus1: np.ndarray
    gap_dt: np.ndarray
    gap_H1corr: np.ndarray
    gap_H1: np.ndarray
    mode: str

    def at(self, t: float) -> dict:
        k = int(np.argmin(np.abs(self.t - t)))
        return {"t": self.t[k], "gap_Eminus1": self.gap_Eminus1[k], "gap_dt": self.gap_dt[k],
                "gap_H1corr": self.gap_H1corr[k], "gap_H1": self.gap_H1[k]}

    def table(self) -> np.ndarray:
        return np.column_stack([self.t, self.gap_Eminus1, self.gap_dt, self.gap_H1corr])


def _eminus1_diff(a: State, b: State, ref) -> float:
    du = a.u.values - b.u.values
    dv = a.v.values - b.v.values
    return float(np.sqrt(l2_sq(du, a.grid) + hminus1_sq(dv, a.grid, ref)))


def trajectory_gap(sys_eps: WaveSystem, sys_0: WaveSystem, xi: State, T: float,
                   mode: str = "raw", sample_every: Optional[float] = None,
                   corrector: Optional[Corrector] = None,
                   eps_trajectory: Optional[Trajectory] = None) -> GapSeries:
    """Gap between S_eps(t) xi and the homogenised trajectory.

    raw       : S_0(t) xi; E^-1 gap
    prepared  : S_0(t) Pi_eps xi; E^-1 gap and the time-derivative gap
                |(r_t, r_tt)|_{E^-1}
    corrected : as prepared, plus |u_eps - T_eps u_0|_H1 and |u_eps - u_0|_H1
                on the closed domain

    ``eps_trajectory`` reuses an already computed S_eps(t) xi with the same
    sampling.
    """
    if mode not in ("raw", "prepared", "corrected"):
        raise ValueError(f"unknown mode {mode!r}")
    if sys_eps.grid != sys_0.grid:
        raise GridMismatchError("systems on different grids")
    if sys_eps.dt != sys_0.dt:
        raise ValueError("systems must share dt")
    if xi.tag not in ("E2", "prepared"):
        warnings.warn("initial data not generated as smooth E^2 data; estimates may not apply",
                      stacklevel=2)
    if mode == "corrected" and corrector is None:
        raise ValueError("corrected mode needs a Corrector")
    ref = laplacian(sys_eps.grid)
    tr_e = evolve(sys_eps, xi, T, sample_every) if eps_trajectory is None else eps_trajectory
    xi0 = xi if mode == "raw" else prepare_initial(sys_eps.op, sys_0.op, xi)
    tr_0 = evolve(sys_0, xi0, T, sample_every)
    m = len(tr_e)
    out = {k: np.full(m, np.nan) for k in ("e", "dt", "h1c", "h1")}
    grid = sys_eps.grid
    cgrid = grid.closure()
    for k, (se, s0) in enumerate(zip(tr_e, tr_0)):
        out["e"][k] = _eminus1_diff(se, s0, ref)
        if mode == "raw":
            continue
        ae = sys_eps.acceleration(se.u.values, se.v.values)
        a0 = sys_0.acceleration(s0.u.values, s0.v.values)
        dv = se.v.values - s0.v.values
        out["dt"][k] = np.sqrt(l2_sq(dv, grid) + hminus1_sq(ae - a0, grid, ref))
        if mode == "corrected":
            tu = corrector_apply(corrector, s0.u)
            ue = lift(se.u.values, grid)
            out["h1c"][k] = np.sqrt(h1_sq(ue - tu.values, cgrid))
            out["h1"][k] = np.sqrt(h1_sq(ue - lift(s0.u.values, grid), cgrid))
    return GapSeries(tr_e.times, out["e"], out["dt"], out["h1c"], out["h1"], mode)


# ---------------------------------------------------------------- rate study

def trajectory_rate_study(coeff, bc: str, eps_list: Sequence[float], n: int, gamma: float,
                          f: Nonlinearity, seeds: Sequence[int], T: float = 4.0,
                          times: Sequence[float] = (1.0, 2.0, 4.0), force: str = "constant",
                          force_amp: float = 1.0, dt_factor: float = 0.5, amp: float = 2.0,
                          extent: float = 1.0, n_cell: Optional[int] = None, tol: float = 1e-10,
                          log=None):
    """Sup over data seeds of the trajectory gaps at fixed times across eps.

    Columns per time t: E^-1 gap (raw data), time-derivative gap (prepared
    data), corrected and uncorrected H1 errors. Fits: E^-1 and dt gaps
    against the resolvent gap, H1 errors against eps.
    """
    from .attractor import R2_MIN
    from .cell import solve_cell
    from .elliptic import RateReport, assemble, resolvent_gap
    from .grid import make_grid
    from .rates import fit_rate

    if not seeds:
        raise ValueError("explicit data seeds required")
    say = log or (lambda *a: None)
    grid = make_grid(coeff.dim, extent, n, bc)
    dt = dt_factor * min(grid.h)
    every = float(np.gcd.reduce([int(round(t / dt)) for t in times])) * dt
    n_cell = n_cell or (1024 if coeff.dim == 1 else 128)
    cs = solve_cell(coeff, n_cell)
    g = force_field(grid, force, force_amp)
    op0 = assemble(cs.a_h, None, grid)
    sys0 = WaveSystem(op0, gamma, f, g, dt, tol=tol)
    names = ("Eminus1", "dt", "H1corr", "H1")
    cols = {"gap": []}
    for t in times:
        for nm in names:
            cols[f"{nm}@{t:g}"] = []
    for e in eps_list:
        ope = assemble(coeff, e, grid)
        syse = WaveSystem(ope, gamma, f, g, dt, tol=tol)
        cols["gap"].append(resolvent_gap(ope, op0))
        best = {k: 0.0 for k in cols if k != "gap"}
        for sd in seeds:
            xi = smooth_initial_data(ope, g, np.random.default_rng(int(sd)), amp, amp)
            tr = evolve(syse, xi, T, every)
            raw = trajectory_gap(syse, sys0, xi, T, "raw", every, eps_trajectory=tr)
            cor = trajectory_gap(syse, sys0, xi, T, "corrected", every, Corrector(cs, e),
                                 eps_trajectory=tr)
            for t in times:
                best[f"Eminus1@{t:g}"] = max(best[f"Eminus1@{t:g}"], raw.at(t)["gap_Eminus1"])
                c = cor.at(t)
                gdt, ghc, gh1 = c["gap_dt"], c["gap_H1corr"], c["gap_H1"]
                best[f"dt@{t:g}"] = max(best[f"dt@{t:g}"], gdt)
                best[f"H1corr@{t:g}"] = max(best[f"H1corr@{t:g}"], ghc)
                best[f"H1@{t:g}"] = max(best[f"H1@{t:g}"], gh1)
        for k, v in best.items():
            cols[k].append(v)
        say(f"eps = {e:g}: gap = {cols['gap'][-1]:.4e}")
    eps_arr = np.asarray(eps_list, float)
    cols = {k: np.asarray(v, float) for k, v in cols.items()}
    fits, flags = {}, {}
    for t in times:
        for nm, x in (("Eminus1", cols["gap"]), ("dt", cols["gap"]), ("H1corr", eps_arr)):
            key = f"{nm}@{t:g}"
            s = fit_rate(list(zip(x, cols[key])))
            fits[key] = s
            if s[2] < R2_MIN:
                flags[key] = f"inconclusive: R^2 = {s[2]:.3f} < {R2_MIN}"
    meta = {"n": n, "bc": bc, "gamma": gamma, "f": f.tag, "lambda": f.lam, "dt": dt, "T": T,
            "times": list(times), "seeds": [int(s) for s in seeds], "amp": amp, "tol": tol,
            "n_cell": n_cell, "force": force, "force_amp": force_amp, "a_h": cs.a_h.tolist(),
            "flags": flags}
    return RateReport(eps_arr, cols, fits, meta)
