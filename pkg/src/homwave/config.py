"""Study configuration: flat ``key = value`` text with dotted section
prefixes. Unknown keys are rejected and validation reports every violated
rule at once.

Example::

    study = elliptic-rate
    coeff.kind = two_phase
    grid.n = 16384
    grid.bc = dirichlet
    eps = 1/8, 1/16, 1/32, 1/64
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional

import numpy as np

STUDIES = ("cell", "elliptic-rate", "trajectory-rate", "attractor-dist", "exp-attractor")
RATE_STUDIES = ("elliptic-rate", "trajectory-rate", "attractor-dist")
COEFF_KINDS = ("constant", "two_phase", "piecewise_constant_1d", "laminate_2d", "trigonometric")
BCS = ("dirichlet", "neumann", "periodic")
F_TAGS = ("zero", "cubic", "cubic_minus_linear")
FORCES = ("constant", "zero", "mode", "constant+mode")


class ConfigError(ValueError):
    def __init__(self, problems: List[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(problems))
        self.problems = problems


def _num(s: str) -> float:
    s = s.strip()
    try:
        return float(Fraction(s)) if "/" in s else float(s)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"not a number: {s!r}")


def _int(s: str) -> int:
    v = _num(s)
    if v != int(v):
        raise ValueError(f"not an integer: {s!r}")
    return int(v)


def _floats(s: str) -> List[float]:
    return [_num(x) for x in s.split(",") if x.strip()]


def _ints(s: str) -> List[int]:
    return [_int(x) for x in s.split(",") if x.strip()]


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _matrix(s: str):
    rows = [r for r in s.split(";") if r.strip()]
    m = np.array([_floats(r) for r in rows], float)
    if m.size == 1:
        return float(m.ravel()[0])
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"not a square matrix: {s!r}")
    return m.tolist()


def _terms(s: str):
    """'amp:k1,k2:phase; ...'"""
    out = []
    for t in s.split(";"):
        if not t.strip():
            continue
        parts = t.split(":")
        if len(parts) != 3:
            raise ValueError(f"term {t!r} is not amp:kvec:phase")
        out.append((_num(parts[0]), tuple(_ints(parts[1])), _num(parts[2])))
    return out


def _choice(options):
    def parse(s):
        s = s.strip()
        if s not in options:
            raise ValueError(f"{s!r} not one of {', '.join(options)}")
        return s
    return parse


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    doc: str


REQUIRED = object()

SCHEMA: Dict[str, Key] = {
    "study": Key(_choice(STUDIES), REQUIRED, "study name"),
    "output.dir": Key(str.strip, "out", "output directory"),
    "threads": Key(_int, 1, "worker threads (HOMWAVE_THREADS overrides)"),
    "coeff.kind": Key(_choice(COEFF_KINDS), None, "coefficient family (not used by toy exp-attractor)"),
    "coeff.dim": Key(_int, 1, "space dimension"),
    "coeff.matrix": Key(_matrix, 1.0, "constant SPD matrix 'a,b;c,d' or scalar"),
    "coeff.breakpoints": Key(_floats, None, "piecewise breakpoints in [0,1)"),
    "coeff.values": Key(_floats, None, "piecewise values"),
    "coeff.axis": Key(_int, 0, "laminate axis"),
    "coeff.base": Key(_num, 1.0, "trigonometric base"),
    "coeff.terms": Key(_terms, None, "trigonometric terms 'amp:k1,k2:phase; ...'"),
    "coeff.lo": Key(_num, 1.0, "two_phase low value"),
    "coeff.hi": Key(_num, 4.0, "two_phase high value"),
    "cell.n": Key(_int, None, "cell-problem resolution (1024 in 1D, 128 in 2D)"),
    "cell.tol": Key(_num, 1e-12, "cell-problem CG tolerance"),
    "grid.n": Key(_int, None, "intervals per axis"),
    "grid.extent": Key(_num, 1.0, "domain side length"),
    "grid.bc": Key(_choice(BCS), "dirichlet", "boundary condition"),
    "eps": Key(_floats, None, "eps ladder"),
    "force.kind": Key(_choice(FORCES), "constant", "force g"),
    "force.amplitude": Key(_num, 1.0, "force amplitude"),
    "elliptic.gap": Key(_bool, True, "compute the resolvent gap"),
    "elliptic.gap_tol": Key(_num, 1e-12, "power-iteration tolerance"),
    "wave.gamma": Key(_num, 0.5, "damping"),
    "wave.f": Key(_choice(F_TAGS), "cubic", "nonlinearity"),
    "wave.lambda": Key(_num, 0.0, "linear coefficient of cubic_minus_linear"),
    "wave.dt_factor": Key(_num, 0.5, "dt = dt_factor * h"),
    "wave.tol": Key(_num, 1e-10, "step CG tolerance"),
    "wave.amp": Key(_num, 2.0, "initial-data amplitude"),
    "trajectory.T": Key(_num, 4.0, "final time"),
    "trajectory.times": Key(_floats, [1.0, 2.0, 4.0], "evaluation times"),
    "trajectory.seeds": Key(_ints, None, "initial-data seeds"),
    "ensemble.n_traj": Key(_int, 8, "trajectories per cloud"),
    "ensemble.T_burn": Key(_num, 40.0, "burn-in time"),
    "ensemble.n_samples": Key(_int, 8, "states kept per trajectory"),
    "ensemble.delta": Key(_num, 1.0, "sampling spacing"),
    "ensemble.seeds": Key(_ints, None, "three seeds: cloud A, cloud B, probes"),
    "ensemble.betas": Key(_floats, [0.0, 0.1, 0.25], "Hoelder exponents"),
    "ensemble.T_fit": Key(_num, 24.0, "sigma-fit window"),
    "ensemble.fit_every": Key(_num, 1.0, "fit sampling"),
    "ensemble.n_probes": Key(_int, 4, "held-out probes"),
    "ensemble.T_K": Key(_num, 4.0, "K-fit window"),
    "expattract.mode": Key(_choice(("toy", "wave")), "toy", "exact toy or coarse wave"),
    "expattract.toy": Key(_choice(("affine", "rotation", "expanding")), "affine", "toy map"),
    "expattract.shifts": Key(_floats, [0.1, 0.01, 0.001], "hand-set map gaps"),
    "expattract.k_max": Key(_int, None, "levels (default: largest under the cap)"),
    "expattract.cap": Key(_int, 100_000, "cardinality cap on E_k"),
    "expattract.omega": Key(_num, 1.0, "omega used for D and kappa"),
    "expattract.n_probes": Key(_int, 64, "attraction probes"),
    "expattract.seed": Key(_int, None, "sampling seed"),
    "expattract.T": Key(_num, 4.0, "wave map time S = S(T)"),
    "expattract.n_start": Key(_int, 2, "wave start-cover centers"),
    "expattract.n_model": Key(_int, 3, "wave model-cover centers"),
}

SEEDED = {"trajectory-rate": "trajectory.seeds", "attractor-dist": "ensemble.seeds",
          "exp-attractor": "expattract.seed"}


@dataclass
class StudyConfig:
    values: Dict[str, Any]
    explicit: Dict[str, str] = field(default_factory=dict)
    source: Optional[str] = None

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    @property
    def study(self) -> str:
        return self.values["study"]

    def resolved(self) -> Dict[str, Any]:
        """Every schema key with its effective value (manifest form)."""
        out = {}
        for k in sorted(self.values):
            v = self.values[k]
            out[k] = list(v) if isinstance(v, tuple) else v
        return out


def parse_text(text: str) -> Dict[str, str]:
    raw: Dict[str, str] = {}
    problems = []
    for no, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            problems.append(f"line {no}: expected 'key = value'")
            continue
        k, v = (x.strip() for x in s.split("=", 1))
        if k in raw:
            problems.append(f"line {no}: duplicate key {k!r}")
        raw[k] = v
    if problems:
        raise ConfigError(problems)
    return raw


def minimal_n(extent: float, eps: float) -> int:
    return int(math.ceil(16 * extent / eps - 1e-9))


def validate(raw: Dict[str, str]) -> StudyConfig:
    problems = []
    vals: Dict[str, Any] = {}
    for k in raw:
        if k not in SCHEMA:
            problems.append(f"unknown key {k!r}")
    for k, key in SCHEMA.items():
        if k in raw:
            try:
                vals[k] = key.parse(raw[k])
            except ValueError as exc:
                problems.append(f"{k}: {exc}")
                vals[k] = None
        elif key.default is REQUIRED:
            problems.append(f"missing required key {k!r}")
            vals[k] = None
        else:
            vals[k] = key.default
    study = vals.get("study")
    toy = study == "exp-attractor" and vals.get("expattract.mode") == "toy"
    if study is not None and not toy and "coeff.kind" not in raw:
        problems.append("missing required key 'coeff.kind'")
    if study == "exp-attractor" and not toy and not vals.get("eps"):
        problems.append("missing required key 'eps'")
    if study in RATE_STUDIES or study == "exp-attractor" and vals.get("expattract.mode") == "wave":
        if vals.get("grid.n") is None:
            problems.append("missing required key 'grid.n'")
    if study in RATE_STUDIES:
        eps = vals.get("eps")
        if not eps:
            problems.append("missing required key 'eps'")
        elif len(eps) < 3:
            problems.append("eps ladder needs at least 3 values for a rate fit")
    seed_key = SEEDED.get(study)
    if seed_key and vals.get(seed_key) is None:
        problems.append(f"missing required key {seed_key!r}: seeds must be explicit")
    if study == "attractor-dist" and vals.get("ensemble.seeds") is not None and len(vals["ensemble.seeds"]) < 3:
        problems.append("ensemble.seeds needs three seeds (cloud A, cloud B, probes)")
    # resolution rule
    n, ext, eps = vals.get("grid.n"), vals.get("grid.extent"), vals.get("eps")
    if n is not None and ext is not None and eps:
        for e in eps:
            if e <= 0:
                problems.append(f"eps = {e:g} must be positive")
            elif ext / n > e / 16 * (1 + 1e-12):
                problems.append(f"eps = {e:g} violates h <= eps/16 with grid.n = {n}; "
                                f"minimal n is {minimal_n(ext, e)}")
    for k in ("grid.n", "cell.n", "ensemble.n_traj", "threads", "expattract.cap"):
        if vals.get(k) is not None and vals[k] < 1:
            problems.append(f"{k} must be >= 1")
    if study == "attractor-dist" and vals.get("ensemble.n_traj") is not None and vals["ensemble.n_traj"] < 8:
        problems.append("ensemble.n_traj must be >= 8")
    g, tb = vals.get("wave.gamma"), vals.get("ensemble.T_burn")
    if study == "attractor-dist" and g is not None and tb is not None and g > 0 and tb < 10 / g:
        problems.append(f"ensemble.T_burn must be >= 10/gamma = {10 / g:g}")
    if vals.get("wave.dt_factor") is not None and not 0 < vals["wave.dt_factor"] <= 1:
        problems.append("wave.dt_factor must lie in (0, 1]")
    om = vals.get("expattract.omega")
    if om is not None and not 0 < om <= 1:
        problems.append("expattract.omega must lie in (0, 1]")
    kind, dim = vals.get("coeff.kind"), vals.get("coeff.dim")
    if kind == "piecewise_constant_1d" and (vals.get("coeff.breakpoints") is None or vals.get("coeff.values") is None):
        problems.append("piecewise_constant_1d needs coeff.breakpoints and coeff.values")
    if kind == "laminate_2d" and (vals.get("coeff.breakpoints") is None or vals.get("coeff.values") is None):
        problems.append("laminate_2d needs coeff.breakpoints and coeff.values")
    if kind == "trigonometric" and vals.get("coeff.terms") is None:
        problems.append("trigonometric needs coeff.terms")
    if kind in ("two_phase", "piecewise_constant_1d") and dim not in (None, 1):
        problems.append(f"{kind} is one-dimensional; set coeff.dim = 1")
    if kind == "laminate_2d" and dim != 2:
        problems.append("laminate_2d needs coeff.dim = 2")
    if problems:
        raise ConfigError(problems)
    return StudyConfig(vals, dict(raw))


def load(path: str) -> StudyConfig:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = validate(parse_text(fh.read()))
    cfg.source = path
    return cfg


def coefficient(cfg: StudyConfig):
    from .cell import CoefficientField, two_phase

    kind, dim = cfg["coeff.kind"], cfg["coeff.dim"]
    if kind == "two_phase":
        return two_phase(cfg["coeff.lo"], cfg["coeff.hi"])
    mat = cfg["coeff.matrix"]
    m = np.eye(dim) * mat if np.isscalar(mat) else np.asarray(mat, float)
    if kind == "constant":
        return CoefficientField(dim, "constant", matrix=m)
    if kind == "piecewise_constant_1d":
        return CoefficientField(1, kind, breakpoints=cfg["coeff.breakpoints"], values=cfg["coeff.values"])
    if kind == "laminate_2d":
        return CoefficientField(2, kind, breakpoints=cfg["coeff.breakpoints"], values=cfg["coeff.values"],
                                axis=cfg["coeff.axis"])
    return CoefficientField(dim, kind, matrix=m, base=cfg["coeff.base"], terms=cfg["coeff.terms"])
