"""Discrete exponential-attractor construction for pluggable maps.

Points are flat float vectors. A DiscreteSystem carries the map, the
Euclidean embeddings realising the strong (E), weak (E^-1) and smoothing
(E^1) norms, and the constants L (weak Lipschitz) and K (splitting).
Two operating modes share the same construction: exact toys in dimension
<= 4 with lattice covers, and coarse wave systems with greedy nets.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .grid import State, h1_factor, mass_weights, norm
from .rates import fit_linear, fit_rate

Q = 0.75
LN43 = math.log(4.0 / 3.0)
DEFAULT_CAP = 100_000


class CardinalityError(RuntimeError):
    def __init__(self, msg, reachable_k):
        super().__init__(msg)
        self.reachable_k = reachable_k


def _identity(X):
    return X


@dataclass
class DiscreteSystem:
    map: Callable[[np.ndarray], np.ndarray]  # (m, d) -> (m, d)
    dim: int
    L: float
    K: float
    ball_center: np.ndarray
    ball_radius: float
    embed_strong: Callable = _identity
    embed_weak: Callable = _identity
    embed_smooth: Callable = _identity
    sampler: Optional[Callable] = None  # (n, rng) -> (n, d) points of B
    name: str = "system"

    def apply(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        return np.asarray(self.map(X), float).reshape(X.shape)

    def iterate(self, X, k: int) -> np.ndarray:
        for _ in range(k):
            X = self.apply(X)
        return X

    def sample_ball(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.sampler is not None:
            return np.atleast_2d(self.sampler(n, rng))
        return _ball_uniform(n, self.dim, rng) * self.ball_radius + np.asarray(self.ball_center, float)

    def into_defect(self, X) -> float:
        """max(|S x - center|_E - radius, 0) over the samples X."""
        Y = self.embed_strong(self.apply(X) - np.asarray(self.ball_center, float))
        return float(max(np.sqrt((Y ** 2).sum(1)).max() - self.ball_radius, 0.0))


def _ball_uniform(n, d, rng):
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random((n, 1)) ** (1.0 / d)


# --------------------------------------------------------------- distances

def directed(A, B) -> float:
    """sup_a inf_b |a - b| for embedded (Euclidean) point arrays."""
    A = np.ascontiguousarray(np.atleast_2d(A), float)
    B = np.ascontiguousarray(np.atleast_2d(B), float)
    if not len(A) or not len(B):
        raise ValueError("empty point set")
    if A.shape[1] <= 16 and len(A) * len(B) > 1 << 20:
        d, _ = cKDTree(B).query(A, k=1)
        return float(d.max())
    return float(kernels.directed_hausdorff(A, B))


def sym(A, B) -> float:
    return max(directed(A, B), directed(B, A))


# ------------------------------------------------------------------ covers

@dataclass
class CoverSet:
    centers: np.ndarray  # (N, d)
    mu: float
    r: float
    delta_r: float
    mode: str
    declared_N: int
    achieved_radius: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.centers)

    def validate(self, sample_points, embed=_identity) -> float:
        """Covering radius achieved on host-ball sample points."""
        r = directed(embed(np.atleast_2d(sample_points)), embed(self.centers))
        self.achieved_radius = r
        return r


def lattice_cover(center, r: float, mu: float) -> CoverSet:
    """Cubic lattice with covering radius mu whose cells meet the ball."""
    if mu <= 0 or r <= 0:
        raise ValueError("need mu > 0 and r > 0")
    c = np.atleast_1d(np.asarray(center, float))
    d = len(c)
    if mu >= r:
        pts = c[None, :].copy()
    else:
        s = 2.0 * mu / math.sqrt(d)
        m = int(math.ceil(r / s)) + 1
        ax = np.arange(-m, m + 1) * s
        P = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), -1).reshape(-1, d)
        # distance from the ball centre to each lattice cell
        gap = np.maximum(np.abs(P) - s / 2, 0.0)
        keep = np.sqrt((gap ** 2).sum(1)) <= r * (1 + 1e-12)
        pts = P[keep] + c
    dr = float(np.sqrt(((pts - c) ** 2).sum(1)).max()) if len(pts) > 1 else 0.0
    return CoverSet(pts, mu, r, max(dr, r), "lattice", len(pts), mu)


def greedy_net(points, mu: float, embed=_identity, max_centers: Optional[int] = None,
               holdout=None, r: float = float("nan")) -> CoverSet:
    """Farthest-point insertion until every sample is within mu (or the cap);
    achieved radius measured on held-out points when given."""
    P = np.atleast_2d(np.asarray(points, float))
    X = np.ascontiguousarray(embed(P))
    cap = len(P) if max_centers is None else min(max_centers, len(P))
    idx = [0]
    dist = np.sqrt(((X - X[0]) ** 2).sum(1))
    while len(idx) < cap and dist.max() > mu:
        j = int(np.argmax(dist))
        idx.append(j)
        dist = np.minimum(dist, np.sqrt(((X - X[j]) ** 2).sum(1)))
    C = P[idx]
    ach = float(dist.max())
    if holdout is not None:
        ach = directed(embed(np.atleast_2d(holdout)), embed(C))
    if ach > mu:
        warnings.warn(f"greedy net reached covering radius {ach:.3e} > mu = {mu:.3e} "
                      f"with {len(idx)} centers", stacklevel=2)
    dr = float(np.sqrt((embed(C) ** 2).sum(1)).max())
    return CoverSet(C, mu, r, dr, "greedy-net", len(C), ach, {"indices": idx})


def build_cover(center, r: float, mu: float, mode: str = "lattice", points=None, **kw) -> CoverSet:
    if mode == "lattice":
        return lattice_cover(center, r, mu)
    if mode == "greedy-net":
        if points is None:
            raise ValueError("greedy-net needs sample points")
        return greedy_net(points, mu, r=r, **kw)
    raise ValueError(f"unknown cover mode {mode!r}")


# ------------------------------------------------------------ construction

def kappa_formula(omega: float, L: float) -> float:
    """omega ln(4/3) / (omega ln(4/3) + ln L); L below 1 is replaced by 1
    (every L' >= L is also a Lipschitz constant)."""
    a = omega * LN43
    return a / (a + math.log(max(L, 1.0)))


def dimension_bound(N: int, omega: float) -> float:
    return math.log(N) / (omega * LN43)


@dataclass
class ExpAttractor:
    V: List[np.ndarray]
    E: List[np.ndarray]  # E[0] is E_1
    N0: int
    N: int
    K: float
    L: float
    omega: float
    k_max: int
    start: CoverSet
    model: CoverSet
    meta: dict = field(default_factory=dict)

    @property
    def M(self) -> np.ndarray:
        return np.concatenate(self.E, axis=0)

    @property
    def D(self) -> float:
        return dimension_bound(self.N, self.omega)

    @property
    def kappa(self) -> float:
        return kappa_formula(self.omega, self.L)

    def level(self, k: int) -> np.ndarray:
        return self.E[k - 1]

    def check_bookkeeping(self, sys: Optional[DiscreteSystem] = None) -> bool:
        for k, Vk in enumerate(self.V):
            if len(Vk) != self.N0 * self.N ** k:
                raise AssertionError(f"card V_{k} = {len(Vk)} != {self.N0 * self.N ** k}")
        if sys is not None:
            for k in range(1, self.k_max):
                SE = sys.apply(self.E[k - 1])
                tail = self.E[k][len(self.V[k + 1]):]
                if SE.shape != tail.shape or not np.array_equal(SE, tail):
                    raise AssertionError(f"S E_{k} not contained in E_{k + 1}")
        return True


def reachable_k(N0: int, N: int, cap: int) -> int:
    """Largest k with card E_k = sum_{j<=k} N0 N^j within the cap."""
    k, total = 0, 0
    while True:
        nxt = total + N0 * N ** (k + 1)
        if nxt > cap:
            return k
        total, k = nxt, k + 1
        if N == 1 and k > 10_000:
            return k


def construct(sys: DiscreteSystem, U_start: CoverSet, U_model: CoverSet,
              k_max: Optional[int] = None, cap: int = DEFAULT_CAP,
              omega: float = 1.0, strict: bool = True) -> ExpAttractor:
    """V_{k+1} = S V_k + (3/4)^k U, E_1 = V_1, E_{k+1} = V_{k+1} u S E_k."""
    tol = 1e-12
    if strict:
        if U_start.mu > 1.0 / sys.K * (1 + tol):
            raise ValueError(f"start cover radius {U_start.mu} exceeds 1/K = {1 / sys.K}")
        if U_model.mu > 1.0 / (4 * sys.K) * (1 + tol) or U_model.r < 1 - tol:
            raise ValueError("model cover must cover the unit ball with radius 1/(4K)")
    if not 0 < omega <= 1:
        raise ValueError("omega must lie in (0, 1]")
    N0, N = len(U_start), len(U_model)
    kr = reachable_k(N0, N, cap)
    if kr < 1:
        raise CardinalityError(f"card E_1 = {N0 * N} already exceeds cap {cap}", 0)
    if k_max is None:
        k_max = kr
    elif k_max > kr:
        raise CardinalityError(f"k_max = {k_max} exceeds the cap {cap}; reachable k = {kr}", kr)
    U = U_model.centers
    V = [np.array(U_start.centers, float)]
    SV = []
    for k in range(k_max):
        s = sys.apply(V[k])
        SV.append(s)
        V.append((s[:, None, :] + Q ** k * U[None, :, :]).reshape(-1, s.shape[1]))
    E = [V[1]]
    for k in range(1, k_max):
        prev = E[-1]
        # S E_k = [S V_k, S (S E_{k-1})]; the first block is already known
        nv = len(V[k])
        SE = SV[k] if nv == len(prev) else np.concatenate([SV[k], sys.apply(prev[nv:])])
        E.append(np.concatenate([V[k + 1], SE]))
    meta = {"system": sys.name, "cap": cap, "reachable_k": kr, "omega_source": "configured"}
    return ExpAttractor(V, E, N0, N, sys.K, sys.L, omega, k_max, U_start, U_model, meta)


# ------------------------------------------------------------ diagnostics

@dataclass
class DecaySeries:
    k: np.ndarray
    dist: np.ndarray
    base: float
    R2: float
    envelope: np.ndarray


def verify_attraction(ea: ExpAttractor, sys: DiscreteSystem, n_steps: Optional[int] = None,
                      n_probes: int = 64, seed: int = 0, floor: float = 1e-13) -> DecaySeries:
    """dist_E(S^k probes, M) for k = 0..n_steps and the fitted decay base."""
    n_steps = ea.k_max if n_steps is None else n_steps
    X = sys.sample_ball(n_probes, np.random.default_rng(seed))
    M = sys.embed_strong(ea.M)
    ds = []
    for k in range(n_steps + 1):
        ds.append(directed(sys.embed_strong(X), M))
        X = sys.apply(X)
    ds = np.asarray(ds)
    ks = np.arange(n_steps + 1)
    scale = max(ds.max(), 1e-300)
    ok = (ks >= 1) & (ds > floor * scale)
    if ok.sum() >= 2:
        a, _, r2 = fit_linear(ks[ok], np.log(ds[ok]))
        base = float(np.exp(a))
    else:
        base, r2 = 0.0, 1.0
    return DecaySeries(ks, ds, base, r2, Q ** ks / ea.K)


def invariance_defect(ea: ExpAttractor, sys: DiscreteSystem, n_samples: int = 256, seed: int = 0) -> float:
    """dist_E(S(sample of M), M)."""
    M = ea.M
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(M), size=min(n_samples, len(M)), replace=False)
    return directed(sys.embed_strong(sys.apply(M[pick])), sys.embed_strong(M))


def fit_omega(ea: ExpAttractor, sys: DiscreteSystem, n_probes: int = 256, seed: int = 0) -> float:
    """Empirical omega from dist_E(E_k, S^k probes) ~ (3/4)^(omega k),
    clipped to [0.05, 1]."""
    X = sys.sample_ball(n_probes, np.random.default_rng(seed))
    ds, ks = [], []
    for k in range(1, ea.k_max + 1):
        X = sys.apply(X)
        ds.append(directed(sys.embed_strong(ea.level(k)), sys.embed_strong(X)))
        ks.append(k)
    ds, ks = np.asarray(ds), np.asarray(ks, float)
    ok = ds > 1e-13
    if ok.sum() < 2:
        return 1.0
    a, _, _ = fit_linear(ks[ok], np.log(ds[ok]))
    return float(np.clip(a / math.log(Q), 0.05, 1.0))


@dataclass
class DimensionEstimate:
    dim: float
    radii: np.ndarray
    counts: np.ndarray
    R2: float
    method: str


def box_counts(X, radii) -> np.ndarray:
    """Occupied boxes of side r on a lattice anchored at the origin."""
    return np.array([len(np.unique(np.floor(X / r).astype(np.int64), axis=0)) for r in radii])


def net_counts(X, radii) -> np.ndarray:
    """Size of the greedy r-separated subset taken in input order."""
    out = []
    for r in radii:
        centers = [X[0]]
        C = X[:1]
        for x in X[1:]:
            if np.sqrt(((C - x) ** 2).sum(1)).min() > r:
                centers.append(x)
                C = np.asarray(centers)
        out.append(len(centers))
    return np.asarray(out)


def fractal_dimension(points, radii: Optional[Sequence[float]] = None, method: str = "auto",
                      embed=_identity) -> DimensionEstimate:
    """Slope of log N_r against log(1/r)."""
    if isinstance(points, ExpAttractor):
        points = points.M
    elif hasattr(points, "states"):
        points = np.stack([s.vector() for s in points.states])
    X = np.ascontiguousarray(embed(np.atleast_2d(np.asarray(points, float))))
    if radii is None:
        diam = float(np.ptp(X, axis=0).max()) if len(X) > 1 else 0.0
        radii = [diam * 2.0 ** -j for j in (2, 3, 4, 5)] if diam > 0 else [1.0, 0.5, 0.25, 0.125]
    radii = np.asarray(sorted(radii, reverse=True), float)
    if len(radii) < 4 or radii[0] / radii[-1] < 4 * (1 - 1e-12):
        raise ValueError("need >= 4 radii spanning >= 2 octaves")
    if method == "auto":
        method = "box" if X.shape[1] <= 4 else "net"
    if len(np.unique(X, axis=0)) == 1:
        return DimensionEstimate(0.0, radii, np.ones(len(radii), int), 1.0, method)
    counts = box_counts(X, radii) if method == "box" else net_counts(X, radii)
    slope, _, r2 = fit_rate(list(zip(1.0 / radii, counts.astype(float))))
    return DimensionEstimate(max(slope, 0.0), radii, counts, r2, method)


# ----------------------------------------------------------- pair studies

def map_gap(sys_e: DiscreteSystem, sys_0: DiscreteSystem, X) -> float:
    """sup over samples of |S_eps x - S_0 x| in the weak norm."""
    D = sys_e.apply(X) - sys_0.apply(X)
    return float(np.sqrt((sys_e.embed_weak(D) ** 2).sum(1)).max())


def enlarged_sample(sys: DiscreteSystem, model: CoverSet, n: int, rng, delta1=None) -> np.ndarray:
    """Samples of O(B) = B + [0, delta_1] U."""
    delta1 = model.delta_r if delta1 is None else delta1
    X = sys.sample_ball(n, rng)
    j = rng.integers(0, len(model), n)
    return X + rng.random((n, 1)) * delta1 * model.centers[j]


@dataclass
class LevelRecursion:
    k: np.ndarray
    d: np.ndarray
    shape: np.ndarray
    Delta: float
    M_k1: float
    M_fit: float

    @property
    def holds(self) -> bool:
        return bool(self.M_fit <= 1.0 + 1e-9)


def recursion_shape(L: float, k) -> np.ndarray:
    """(L^(k+1) - 1)/(L - 1) = sum_{j<=k} L^j."""
    k = np.asarray(k)
    return np.array([sum(L ** j for j in range(int(m) + 1)) for m in np.atleast_1d(k)])


def level_recursion(levels_e: Sequence[np.ndarray], levels_0: Sequence[np.ndarray], L: float,
                    s0: float, d0: float, dhat0: float, embed=_identity) -> LevelRecursion:
    """dist^s(E_k(eps), E_k(0)) against the shape (L^(k+1)-1)/(L-1) times
    Delta = s0 + d0 + dhat0. M_fit is the single constant over all k; the
    recursion proves M = 1 suffices."""
    ks = np.arange(1, len(levels_e) + 1)
    d = np.array([sym(embed(a), embed(b)) for a, b in zip(levels_e, levels_0)])
    sh = recursion_shape(L, ks)
    Delta = s0 + d0 + dhat0
    if Delta <= 0:
        return LevelRecursion(ks, d, sh, Delta, 0.0, 0.0 if d.max() == 0 else np.inf)
    ratio = d / (sh * Delta)
    return LevelRecursion(ks, d, sh, Delta, float(ratio[0]), float(ratio.max()))


def pair_driver(sys_e, sys_0, ea_e: ExpAttractor, ea_0: ExpAttractor, n_samples=2048, seed=0):
    """(s0, dhat0, d0): map gap over O(B) samples and the cover gaps (weak norm)."""
    if (ea_e.model.mu, ea_e.model.r) != (ea_0.model.mu, ea_0.model.r):
        raise ValueError("model covers must share (mu, r)")
    if (ea_e.start.mu, ea_e.start.r) != (ea_0.start.mu, ea_0.start.r):
        raise ValueError("start covers must share (mu, r)")
    if ea_e.k_max != ea_0.k_max:
        raise ValueError("constructions must share k_max")
    rng = np.random.default_rng(seed)
    X = enlarged_sample(sys_0, ea_0.model, n_samples, rng)
    X = np.concatenate([X, ea_0.M[rng.choice(len(ea_0.M), min(n_samples, len(ea_0.M)), replace=False)]])
    s0 = map_gap(sys_e, sys_0, X)
    w = sys_0.embed_weak
    dhat0 = sym(w(ea_e.model.centers), w(ea_0.model.centers))
    d0 = sym(w(ea_e.start.centers), w(ea_0.start.centers))
    return s0, dhat0, d0


def symmetric_distance_study(ea_e: ExpAttractor, ea_0: ExpAttractor, sys_e: DiscreteSystem,
                             sys_0: DiscreteSystem, corrector: Optional[Callable] = None,
                             n_samples: int = 2048, seed: int = 0) -> dict:
    """dist^s_weak(M_eps, M_0) against the driver (s0 + dhat0 + d0)^kappa;
    with a corrector T (a map on point arrays) also dist^s_E(M_eps, T M_0)."""
    s0, dhat0, d0 = pair_driver(sys_e, sys_0, ea_e, ea_0, n_samples, seed)
    w = sys_0.embed_weak
    dist = sym(w(ea_e.M), w(ea_0.M))
    driver = s0 + dhat0 + d0
    kap = kappa_formula(ea_0.omega, ea_0.L)
    out = {"dist_weak": dist, "s0": s0, "dhat0": dhat0, "d0": d0, "driver": driver,
           "kappa": kap, "omega": ea_0.omega, "L": ea_0.L,
           "C": dist / driver ** kap if driver > 0 else (0.0 if dist == 0 else np.inf)}
    if corrector is not None:
        s = sys_0.embed_strong
        out["dist_strong_corrected"] = sym(s(ea_e.M), s(corrector(ea_0.M)))
        out["dist_strong_raw"] = sym(s(ea_e.M), s(ea_0.M))
    return out


def correction_recursion(ea_e: ExpAttractor, ea_0: ExpAttractor, sys_e: DiscreteSystem,
                         sys_0: DiscreteSystem, T: Callable, Pi_inv: Callable, L: float,
                         n_samples: int = 2048, seed: int = 0) -> LevelRecursion:
    """Level recursion in the strong norm with T applied to the reference
    levels; s0 carries the sup |S_eps Pi^-1 x - T S_0 x| + L sup |Pi^-1 x - T x|
    term over samples of O(B_0)."""
    rng = np.random.default_rng(seed)
    X = enlarged_sample(sys_0, ea_0.model, n_samples, rng)
    s = sys_0.embed_strong
    nrm = lambda D: float(np.sqrt((s(D) ** 2).sum(1)).max())
    m_eps = nrm(Pi_inv(X) - T(X))
    s0 = nrm(sys_e.apply(Pi_inv(X)) - T(sys_0.apply(X))) + L * m_eps
    dhat0 = sym(s(ea_e.model.centers), s(T(ea_0.model.centers)))
    d0 = sym(s(ea_e.start.centers), s(T(ea_0.start.centers)))
    return level_recursion(ea_e.E, [T(E) for E in ea_0.E], L, s0, d0, dhat0, embed=s)


# -------------------------------------------------------------------- toys

def affine_toy(c=(0.5, 0.25), shift=0.0, direction=(1.0, 0.0), radius: float = 2.0) -> DiscreteSystem:
    """S(x) = x/2 + c + shift*direction; fixed point 2(c + shift*direction)."""
    c = np.asarray(c, float)
    e = np.asarray(direction, float)
    e = e / np.linalg.norm(e)
    b = c + shift * e
    return DiscreteSystem(lambda X: 0.5 * X + b, len(c), 0.5, 0.5, 2 * c, radius,
                          name=f"affine(shift={shift:g})")


def rotation_toy(theta: float = 1.0, c=(0.3, 0.2), shift=0.0, direction=(1.0, 0.0),
                 rho: float = 0.9, radius: float = 1.0) -> DiscreteSystem:
    """S(x) = p + clip_rho(P R(theta) (x - p)) + shift*direction, P the
    projection on the first axis and clip_rho the radial projection onto the
    rho-ball. Composition of 1-Lipschitz maps with L = 1 attained; maps
    everything into B(p, rho + |shift|)."""
    R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    A = np.diag([1.0, 0.0]) @ R
    p = np.asarray(c, float)
    e = np.asarray(direction, float)
    b = shift * e / np.linalg.norm(e)

    def f(X):
        Y = (X - p) @ A.T
        r = np.sqrt((Y ** 2).sum(1, keepdims=True))
        return p + Y * np.minimum(1.0, rho / np.maximum(r, 1e-300)) + b

    return DiscreteSystem(f, 2, 1.0, 1.0, p, radius, name=f"rotation(theta={theta:g}, shift={shift:g})")


def expanding_toy(shift=0.0, direction=(1.0, 0.0), radius: float = 1.0) -> DiscreteSystem:
    """S(x) = 1.5 x / (1 + |x|^2) + shift*direction: Lipschitz 1.5 at the
    repelling origin, attractor near the circle |x|^2 = 1/2."""
    e = np.asarray(direction, float)
    b = shift * e / np.linalg.norm(e)

    def f(X):
        return 1.5 * X / (1.0 + (X ** 2).sum(1, keepdims=True)) + b

    return DiscreteSystem(f, 2, 1.5, 1.5, np.zeros(2), radius, name=f"expanding(shift={shift:g})")


TOYS = {"affine": affine_toy, "rotation": rotation_toy, "expanding": expanding_toy}


def toy_covers(sys: DiscreteSystem):
    start = lattice_cover(sys.ball_center, sys.ball_radius, 1.0 / sys.K)
    model = lattice_cover(np.zeros(sys.dim), 1.0, 1.0 / (4 * sys.K))
    return start, model


def toy_pair_study(toy: str, shifts: Sequence[float], k_max: Optional[int] = None,
                   cap: int = DEFAULT_CAP, omega: float = 1.0, seed: int = 0, **toy_kw) -> dict:
    """Symmetric distance exponent over hand-set map gaps plus the level
    recursion for every gap."""
    make = TOYS[toy]
    s0y = make(shift=0.0, **toy_kw)
    start, model = toy_covers(s0y)
    ea0 = construct(s0y, start, model, k_max, cap, omega)
    rows, recs = [], []
    for sh in shifts:
        se = make(shift=sh, **toy_kw)
        eae = construct(se, start, model, ea0.k_max, cap, omega)
        r = symmetric_distance_study(eae, ea0, se, s0y, seed=seed)
        rec = level_recursion(eae.E, ea0.E, s0y.L, r["s0"], r["d0"], r["dhat0"])
        r["M_fit"], r["M_k1"] = rec.M_fit, rec.M_k1
        rows.append(r)
        recs.append(rec)
    drivers = np.array([r["driver"] for r in rows])
    dists = np.array([r["dist_weak"] for r in rows])
    slope, icpt, r2 = fit_rate(list(zip(drivers, dists)))
    Cs = np.array([r["C"] for r in rows])
    return {"toy": toy, "shifts": list(shifts), "rows": rows, "recursions": recs,
            "exponent": slope, "intercept": icpt, "R2": r2, "kappa": ea0.kappa,
            "C_spread": float(Cs.max() / Cs.min()), "M_fit": max(r.M_fit for r in recs),
            "k_max": ea0.k_max, "N0": ea0.N0, "N": ea0.N, "D": ea0.D}


# ------------------------------------------------------------- wave case

def wave_embeddings(grid, ref_weak):
    """(strong, weak, unpack) for flat (u, v) vectors on ``grid``."""
    n = grid.ndof
    F = h1_factor(grid)
    sm = np.sqrt(mass_weights(grid))

    def strong(X):
        X = np.atleast_2d(X)
        return np.hstack([(F @ X[:, :n].T).T, X[:, n:] * sm])

    def weak(X):
        X = np.atleast_2d(X)
        mv = X[:, n:] * mass_weights(grid)
        return np.hstack([X[:, :n] * sm, np.stack([ref_weak.half_inverse(r) for r in mv])])

    def unpack(x):
        return State.from_arrays(grid, x[:n], x[n:])

    return strong, weak, unpack


def wave_discrete_system(sys, T: float, B_points, K: float, L: float, name="wave") -> DiscreteSystem:
    """S = S(T) for a WaveSystem, acting on flat (u, v) vectors."""
    from .elliptic import laplacian
    from .wave import evolve

    grid = sys.grid
    strong, weak, unpack = wave_embeddings(grid, laplacian(grid))
    B = np.atleast_2d(B_points)
    center = B.mean(0)
    radius = float(np.sqrt((strong(B - center) ** 2).sum(1)).max())

    def f(X):
        return np.stack([evolve(sys, unpack(x), T).last.vector() for x in X])

    def sampler(n, rng):
        return B[rng.integers(0, len(B), n)]

    return DiscreteSystem(f, B.shape[1], L, K, center, radius, strong, weak, strong, sampler, name)


def fit_splitting_constant(sys, T: float, pairs) -> tuple:
    """K from the v/w split of S(T) xi_1 - S(T) xi_2: v evolves the difference
    under the damped linear equation, w = rest. Returns (K, max |v|_E/|dxi|_E)."""
    from .wave import Nonlinearity, WaveSystem, evolve

    lin = WaveSystem(sys.op, sys.gamma, Nonlinearity("zero"), np.zeros(sys.grid.ndof), sys.dt,
                     tol=sys.tol)
    strong, _, unpack = wave_embeddings(sys.grid, None)
    Ks, vs = [], []
    for a, b in pairs:
        d0 = float(np.linalg.norm(strong(a - b)))
        if d0 == 0:
            continue
        diff = evolve(sys, unpack(a), T).last.vector() - evolve(sys, unpack(b), T).last.vector()
        v = evolve(lin, unpack(a - b), T).last.vector()
        w = diff - v
        Ks.append(norm(unpack(w), "E1", ref_op=sys.op) / d0)
        vs.append(float(np.linalg.norm(strong(v))) / d0)
    return float(max(Ks)), float(max(vs))


def wave_model_covers(op_e, op_0, g, mu: float, r: float, n_sample: int, max_centers: int,
                      seed: int, gap: float, nu: float = 1.0):
    """Centers (A^-1(p_i + g), q_i) for the eps and homogenised operators
    built from one shared sample; q_eps truncates q_0 in the A_eps
    eigenbasis so |q_eps - q_0| <= min(mu_hat, gap). Returns (cover_eps,
    cover_0, truncation errors)."""
    import scipy.linalg as sla
    from .wave import smooth_field

    grid = op_0.grid
    n = grid.ndof
    rng = np.random.default_rng(seed)
    m = mass_weights(grid)
    zeta = np.stack([smooth_field(grid, rng) * r * rng.random() for _ in range(n_sample)])
    q0 = []
    F = h1_factor(grid)
    for _ in range(n_sample):
        q = smooth_field(grid, rng)
        q0.append(q * r * rng.random() / max(np.linalg.norm(F @ q), 1e-300))
    q0 = np.stack(q0)
    u0 = np.stack([op_0.solve_matrix(m * z) for z in zeta])
    strong, _, _ = wave_embeddings(grid, None)
    P0 = np.hstack([u0, q0])
    net = greedy_net(P0, mu, strong, max_centers=max_centers, r=r)
    idx = net.meta["indices"]
    mu_hat = mu / (2 * max(1.0, 1.0 / nu))
    lam, Phi = sla.eigh(op_e.shifted.toarray(), np.diag(m))
    target = min(mu_hat, gap)
    Ce, C0, errs = [], [], []
    for i in idx:
        c = Phi.T @ (m * q0[i])
        tail = np.sqrt(np.maximum(np.cumsum((c ** 2)[::-1])[::-1], 0.0))  # tail[j] = |sum_{>=j}|
        keep = next((j for j in range(n + 1) if (tail[j] if j < n else 0.0) <= target), n)
        qe = Phi[:, :keep] @ c[:keep]
        errs.append(float(np.sqrt(m @ (qe - q0[i]) ** 2)))
        ue = op_e.solve_matrix(m * zeta[i])
        Ce.append(np.concatenate([ue, qe]))
        C0.append(P0[i])
    Ce, C0 = np.stack(Ce), np.stack(C0)
    dr = lambda C: float(np.sqrt((strong(C) ** 2).sum(1)).max())
    cov_e = CoverSet(Ce, mu, r, dr(Ce), "greedy-net", len(Ce), net.achieved_radius, {"indices": idx})
    cov_0 = CoverSet(C0, mu, r, dr(C0), "greedy-net", len(C0), net.achieved_radius, {"indices": idx})
    return cov_e, cov_0, np.asarray(errs)


def continuous_attractor(sys, points, T: float, n_tau: int = 16) -> np.ndarray:
    """Union over tau_j = j T / n_tau, j < n_tau, of S(tau_j) applied to the
    discrete attractor points."""
    from .wave import evolve

    strong, _, unpack = wave_embeddings(sys.grid, None)
    out = []
    for x in np.atleast_2d(points):
        tr = evolve(sys, unpack(x), T * (n_tau - 1) / n_tau, T / n_tau)
        out.extend(s.vector() for s in tr)
    return np.stack(out)


def fit_weak_lipschitz(sys: DiscreteSystem, X) -> float:
    """max |S a - S b|_weak / |a - b|_weak over consecutive sample pairs."""
    X = np.atleast_2d(X)
    SX = sys.apply(X)
    w = sys.embed_weak
    num = np.linalg.norm(w(SX[1:] - SX[:-1]), axis=1)
    den = np.linalg.norm(w(X[1:] - X[:-1]), axis=1)
    ok = den > 0
    return float((num[ok] / den[ok]).max())


def wave_exp_attractor_study(coeff, bc: str, eps_list: Sequence[float], n: int, gamma: float,
                             f, seed: int, T: float = 4.0, force: str = "constant",
                             force_amp: float = 1.0, dt_factor: float = 0.5, n_B: int = 16,
                             n_start: int = 2, n_model: int = 3, k_max: int = 3,
                             omega: float = 1.0, n_probes: int = 8, n_gap_samples: int = 8,
                             extent: float = 1.0, n_cell: Optional[int] = None,
                             K_floor: float = 1.0) -> dict:
    """Empirical-mode construction for the homogenised and eps wave maps
    S = S(T) on a coarse grid: fitted K and L, greedy-net covers, attraction
    decay of M_0 and dist^s_{E^-1}(M_eps, M_0) per eps."""
    from .cell import solve_cell
    from .elliptic import assemble, resolvent_gap
    from .grid import make_grid
    from .wave import WaveSystem, evolve, force_field, smooth_initial_data

    grid = make_grid(coeff.dim, extent, n, bc)
    dt = dt_factor * min(grid.h)
    cs = solve_cell(coeff, n_cell or (1024 if coeff.dim == 1 else 128))
    g = force_field(grid, force, force_amp)
    op0 = assemble(cs.a_h, None, grid)
    sys0 = WaveSystem(op0, gamma, f, g, dt)
    rng = np.random.default_rng(int(seed))
    seeds = np.random.SeedSequence(int(seed)).spawn(n_B + n_probes)
    # absorbed states: smooth data pushed forward by S_0(T)
    B = np.stack([evolve(sys0, smooth_initial_data(op0, g, np.random.default_rng(s)), T).last.vector()
                  for s in seeds[:n_B]])
    pairs = [(B[i], B[i + 1]) for i in range(len(B) - 1)]
    K_fit, vmax = fit_splitting_constant(sys0, T, pairs)
    # any K above the fitted one satisfies the splitting; the floor keeps the
    # model cover from collapsing to one center
    K = max(K_fit, K_floor)
    ds0 = wave_discrete_system(sys0, T, B, K, 1.0, name="wave eps=0")
    L = fit_weak_lipschitz(ds0, B)
    ds0.L = L
    start = greedy_net(B, 1.0 / K, ds0.embed_strong, max_centers=n_start, r=ds0.ball_radius)
    model_seed = int(rng.integers(2 ** 31))  # one shared sample: cov_0 identical for every eps
    nu = coeff.measured_nu()
    rows = []
    ea0 = None
    for e in eps_list:
        ope = assemble(coeff, e, grid)
        gap = resolvent_gap(ope, op0)
        cov_e, cov_0, qerr = wave_model_covers(ope, op0, g, 1.0 / (4 * K), 1.0, 4 * n_model, n_model,
                                               model_seed, gap, nu)
        syse = WaveSystem(ope, gamma, f, g, dt)
        dse = wave_discrete_system(syse, T, B, K, L, name=f"wave eps={e:g}")
        if ea0 is None:
            ea0 = construct(ds0, start, cov_0, k_max, omega=omega, strict=False)
        eae = construct(dse, start, cov_e, k_max, omega=omega, strict=False)
        r = symmetric_distance_study(eae, ea0, dse, ds0, n_samples=n_gap_samples, seed=int(seed))
        r.update(eps=e, gap=gap, q_trunc_max=float(qerr.max()),
                 q_bound=float(min(1.0 / (4 * K) / (2 * max(1.0, 1.0 / nu)), gap)))
        rows.append(r)
    probes = np.stack([evolve(sys0, smooth_initial_data(op0, g, np.random.default_rng(s)), T).last.vector()
                       for s in seeds[n_B:]])
    ds0.sampler = lambda m, r_: probes[:m]
    dec = verify_attraction(ea0, ds0, k_max, n_probes=len(probes))
    return {"K": K, "K_fit": K_fit, "v_ratio": vmax, "L": L, "rows": rows, "decay": dec, "N0": ea0.N0, "N": ea0.N,
            "k_max": ea0.k_max, "D": ea0.D, "kappa": ea0.kappa, "omega": omega, "dt": dt, "n": n,
            "a_h": cs.a_h.tolist(), "seed": int(seed), "T": T}
