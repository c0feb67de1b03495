"""Experiment runner.

    homwave run <config> [--out DIR] [--threads N]
    homwave validate <config>

Exit codes: 0 success, 1 validation failure, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback
from typing import List, Optional

import numpy as np

from . import io
from .config import ConfigError, StudyConfig, coefficient, load

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _threads(cfg: StudyConfig, flag: Optional[int]) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("HOMWAVE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return cfg["threads"]


def _fit_lines(fits: dict, flags: dict) -> List[str]:
    out = []
    for k in sorted(fits):
        s, b, r2 = fits[k]
        note = f"  [{flags[k]}]" if k in flags else ""
        out.append(f"slope {k}: {s:.6f}  intercept {b:.6f}  R^2 {r2:.6f}{note}")
    for k in sorted(set(flags) - set(fits)):
        out.append(f"{k}: {flags[k]}")
    return out


def _nonlinearity(cfg):
    from .wave import Nonlinearity

    return Nonlinearity(cfg["wave.f"], cfg["wave.lambda"])


def _report_csv(path, report, order=None):
    names = order or list(report.columns)
    rows = [[report.eps[i]] + [report.columns[k][i] for k in names] for i in range(len(report.eps))]
    io.write_csv(path, ["eps"] + names, rows)


# ------------------------------------------------------------------ studies

def study_cell(cfg, out, threads):
    from .cell import solve_cell

    coeff = coefficient(cfg)
    n_cell = cfg.get("cell.n", 1024 if coeff.dim == 1 else 128)
    cs = solve_cell(coeff, n_cell, cfg["cell.tol"])
    d = coeff.dim
    io.write_csv(os.path.join(out, "correctors.csv"), [f"y{i + 1}" for i in range(d)] +
                 [f"N{i + 1}" for i in range(d)], cs.as_table())
    io.write_csv(os.path.join(out, "a_h.csv"), [f"col{j + 1}" for j in range(d)], cs.a_h)
    maxN = max(float(np.abs(Ni.values).max()) for Ni in cs.N)
    lines = ["study: cell", f"coefficient: {coeff.kind} (dim {d})", f"n_cell: {n_cell}",
             "a_h = " + "; ".join(", ".join(f"{x:.12g}" for x in row) for row in cs.a_h),
             f"max|N| = {maxN:.3e}", f"residuals: {', '.join(f'{r:.3e}' for r in cs.residual)}",
             f"raw asymmetry: {cs.asymmetry:.3e}", f"snapped breakpoints: {len(cs.snaps)}"]
    meta = {"n_cell": n_cell, "tol": cfg["cell.tol"], "a_h": cs.a_h, "max_abs_N": maxN,
            "residual": cs.residual, "iterations": cs.iterations, "snaps": cs.snaps,
            "asymmetry": cs.asymmetry, "coefficient": coeff.describe()}
    return lines, meta


def study_elliptic(cfg, out, threads):
    from .elliptic import elliptic_rate_study
    from .grid import make_grid
    from .wave import force_field

    coeff = coefficient(cfg)
    grid = make_grid(coeff.dim, cfg["grid.extent"], cfg["grid.n"], cfg["grid.bc"])
    g = force_field(grid, cfg["force.kind"], cfg["force.amplitude"])
    rep = elliptic_rate_study(coeff, cfg["grid.bc"], cfg["eps"], g, cfg["grid.n"], cfg["grid.extent"],
                              cfg["cell.n"], cfg["elliptic.gap"], cfg["elliptic.gap_tol"])
    _report_csv(os.path.join(out, "rates.csv"), rep, ["err_L2", "err_H1corr", "err_H1", "gap"])
    flags = rep.meta["flags"]
    lines = ["study: elliptic-rate", f"coefficient: {coeff.kind}, bc {cfg['grid.bc']}, n {cfg['grid.n']}"]
    lines += _fit_lines(rep.fits, flags)
    if "err_L2" in rep.fits:
        lines.append(f"L2 slope: {rep.fits['err_L2'][0]:.4f}")
    if "err_H1corr" in rep.fits:
        lines.append(f"H1-corr slope: {rep.fits['err_H1corr'][0]:.4f}")
    return lines, {**rep.meta, "fits": rep.fits}


def study_trajectory(cfg, out, threads):
    from .wave import trajectory_rate_study

    coeff = coefficient(cfg)
    rep = trajectory_rate_study(coeff, cfg["grid.bc"], cfg["eps"], cfg["grid.n"], cfg["wave.gamma"],
                                _nonlinearity(cfg), cfg["trajectory.seeds"], cfg["trajectory.T"],
                                cfg["trajectory.times"], cfg["force.kind"], cfg["force.amplitude"],
                                cfg["wave.dt_factor"], cfg["wave.amp"], cfg["grid.extent"],
                                cfg["cell.n"], cfg["wave.tol"])
    _report_csv(os.path.join(out, "rates.csv"), rep)
    lines = ["study: trajectory-rate", f"coefficient: {coeff.kind}, bc {cfg['grid.bc']}, "
             f"n {cfg['grid.n']}, dt {rep.meta['dt']:.6g}"]
    lines += _fit_lines(rep.fits, rep.meta["flags"])
    return lines, {**rep.meta, "fits": rep.fits}


def study_attractor(cfg, out, threads):
    from .attractor import WaveParams, attractor_rate_study

    coeff = coefficient(cfg)
    P = WaveParams(n=cfg["grid.n"], extent=cfg["grid.extent"], gamma=cfg["wave.gamma"],
                   f=_nonlinearity(cfg), force=cfg["force.kind"], force_amp=cfg["force.amplitude"],
                   dt_factor=cfg["wave.dt_factor"], n_traj=cfg["ensemble.n_traj"],
                   T_burn=cfg["ensemble.T_burn"], n_samples=cfg["ensemble.n_samples"],
                   delta=cfg["ensemble.delta"], amp=cfg["wave.amp"], betas=tuple(cfg["ensemble.betas"]),
                   n_cell=cfg.get("cell.n", 1024 if coeff.dim == 1 else 128), T_fit=cfg["ensemble.T_fit"],
                   fit_every=cfg["ensemble.fit_every"], n_probes=cfg["ensemble.n_probes"],
                   T_K=cfg["ensemble.T_K"], solver_tol=cfg["wave.tol"])
    rep = attractor_rate_study(coeff, cfg["grid.bc"], cfg["eps"], P, cfg["ensemble.seeds"], threads)
    _report_csv(os.path.join(out, "distances.csv"), rep)
    m = rep.meta
    io.write_csv(os.path.join(out, "sigma_fit.csv"), ["t", "dist_E"],
                 list(zip(m["sigma_fit_t"], m["sigma_fit_d"])))
    lines = ["study: attractor-dist", f"coefficient: {coeff.kind}, bc {cfg['grid.bc']}, n {cfg['grid.n']}"]
    lines += _fit_lines(rep.fits, m["flags"])
    lines += [f"sigma (attraction fit): {m['sigma']:.6f}  R^2 {m['sigma_R2']:.6f}",
              f"K (gap growth): {m['K']:.6f}  R^2 {m['K_R2']:.6f}  M {m['M']:.6f}",
              f"kappa predicted sigma/(K+sigma): {m['kappa_predicted']:.6f}",
              f"kappa measured: {m['kappa_measured']:.6f}  discrepancy {m['kappa_discrepancy']:.6f}",
              f"noise floor (E^-1): {m['noise_floor_Eminus1']:.3e}",
              f"seed stability (max rel diff): {m['seed_stability_max_rel_diff']:.3e}",
              f"monotone E^-1 distances: {m['monotone_Eminus1']}",
              f"corrected E below uncorrected: {m['corrected_below_raw']}"]
    meta = {k: v for k, v in m.items() if k not in ("sigma_fit_t", "sigma_fit_d")}
    meta["params"] = {k: (v.tag if k == "f" else v) for k, v in vars(P).items()}
    meta["lambda"] = P.f.lam
    return lines, {**meta, "fits": rep.fits}


def study_expattract(cfg, out, threads):
    from . import expattract as X

    seed = cfg["expattract.seed"]
    if cfg["expattract.mode"] == "toy":
        toy = cfg["expattract.toy"]
        sys0 = X.TOYS[toy](shift=0.0)
        start, model = X.toy_covers(sys0)
        ea = X.construct(sys0, start, model, cfg["expattract.k_max"], cfg["expattract.cap"],
                         cfg["expattract.omega"])
        ea.check_bookkeeping(sys0)
        dec = X.verify_attraction(ea, sys0, None, cfg["expattract.n_probes"], seed)
        dim = X.fractal_dimension(ea)
        pair = X.toy_pair_study(toy, cfg["expattract.shifts"], ea.k_max, cfg["expattract.cap"],
                                cfg["expattract.omega"], seed)
        io.write_csv(os.path.join(out, "levels.csv"), ["k", "card_V", "card_E"],
                     [[k, len(ea.V[k]), len(ea.E[k - 1]) if k >= 1 else 0] for k in range(ea.k_max + 1)])
        io.write_csv(os.path.join(out, "decay.csv"), ["k", "dist_E", "envelope"],
                     list(zip(dec.k, dec.dist, dec.envelope)))
        io.write_csv(os.path.join(out, "dimension.csv"), ["r", "count"], list(zip(dim.radii, dim.counts)))
        io.write_csv(os.path.join(out, "pairs.csv"), ["shift", "driver", "dist_sym", "C", "M_fit", "M_k1"],
                     [[s, r["driver"], r["dist_weak"], r["C"], r["M_fit"], r["M_k1"]]
                      for s, r in zip(pair["shifts"], pair["rows"])])
        rec_rows = []
        for s, rec in zip(pair["shifts"], pair["recursions"]):
            rec_rows += [[s, int(k), d, sh * rec.Delta] for k, d, sh in zip(rec.k, rec.d, rec.shape)]
        io.write_csv(os.path.join(out, "recursion.csv"), ["shift", "k", "dist_sym", "bound"], rec_rows)
        lines = ["study: exp-attractor (toy)", f"toy: {toy}  L {sys0.L:g}  K {sys0.K:g}",
                 f"N0 {ea.N0}  N {ea.N}  k_max {ea.k_max}  card M {len(ea.M)}",
                 f"card V_k = N0 N^k: verified",
                 f"attraction decay base: {dec.base:.6f}  R^2 {dec.R2:.6f}",
                 f"omega (configured): {ea.omega:g}",
                 f"box-count dimension: {dim.dim:.6f}  bound D = {ea.D:.6f}",
                 f"symmetric-distance exponent: {pair['exponent']:.6f}  R^2 {pair['R2']:.6f}  "
                 f"kappa {pair['kappa']:.6f}",
                 f"C spread over shifts: {pair['C_spread']:.6f}",
                 f"level recursion single M: {pair['M_fit']:.6f} (holds if <= 1)"]
        meta = {"toy": toy, "N0": ea.N0, "N": ea.N, "k_max": ea.k_max, "D": ea.D, "omega": ea.omega,
                "kappa": ea.kappa, "decay_base": dec.base, "decay_R2": dec.R2, "dimension": dim.dim,
                "exponent": pair["exponent"], "M_fit": pair["M_fit"], "cap": cfg["expattract.cap"],
                "seed": seed, "C_spread": pair["C_spread"]}
        return lines, meta
    coeff = coefficient(cfg)
    r = X.wave_exp_attractor_study(coeff, cfg["grid.bc"], cfg["eps"] or [], cfg["grid.n"], cfg["wave.gamma"],
                                   _nonlinearity(cfg), seed, cfg["expattract.T"], cfg["force.kind"],
                                   cfg["force.amplitude"], cfg["wave.dt_factor"],
                                   n_start=cfg["expattract.n_start"], n_model=cfg["expattract.n_model"],
                                   k_max=cfg.get("expattract.k_max", 3), omega=cfg["expattract.omega"],
                                   extent=cfg["grid.extent"], n_cell=cfg["cell.n"])
    io.write_csv(os.path.join(out, "pairs.csv"), ["eps", "gap", "driver", "dist_sym_Eminus1", "q_trunc"],
                 [[x["eps"], x["gap"], x["driver"], x["dist_weak"], x["q_trunc_max"]] for x in r["rows"]])
    dec = r["decay"]
    io.write_csv(os.path.join(out, "decay.csv"), ["k", "dist_E"], list(zip(dec.k, dec.dist)))
    lines = ["study: exp-attractor (wave)", f"K fitted {r['K_fit']:.6g} used {r['K']:.6g}  L {r['L']:.6g}",
             f"N0 {r['N0']}  N {r['N']}  k_max {r['k_max']}  D {r['D']:.6f}",
             f"attraction decay base: {dec.base:.6f}  R^2 {dec.R2:.6f}" +
             ("" if dec.R2 >= 0.9 else "  [inconclusive: R^2 < 0.9]")]
    lines += [f"eps {x['eps']:g}: dist^s_E-1 {x['dist_weak']:.6e}  driver {x['driver']:.6e}" for x in r["rows"]]
    meta = {k: v for k, v in r.items() if k not in ("rows", "decay")}
    meta.update(decay_base=dec.base, decay_R2=dec.R2,
                rows=[{k: v for k, v in x.items()} for x in r["rows"]])
    return lines, meta


STUDY_RUNNERS = {"cell": study_cell, "elliptic-rate": study_elliptic, "trajectory-rate": study_trajectory,
                 "attractor-dist": study_attractor, "exp-attractor": study_expattract}


def run(cfg: StudyConfig, out: Optional[str] = None, threads: Optional[int] = None) -> int:
    out = io.ensure_dir(out or cfg["output.dir"])
    nthreads = _threads(cfg, threads)
    manifest = {"config": cfg.resolved(), "config_explicit": cfg.explicit, "versions": io.versions(),
                "threads": nthreads, "status": "running"}
    try:
        lines, meta = STUDY_RUNNERS[cfg.study](cfg, out, nthreads)
    except Exception as exc:  # numerical failures: record, keep partial outputs
        manifest.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                        traceback=traceback.format_exc().splitlines()[-6:])
        io.write_manifest(os.path.join(out, "manifest.json"), manifest)
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    manifest.update(status="ok", results=meta)
    io.write_summary(os.path.join(out, "summary.txt"), lines)
    io.write_manifest(os.path.join(out, "manifest.json"), manifest)
    print("\n".join(lines))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="homwave", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a study")
    r.add_argument("config")
    r.add_argument("--out", default=None)
    r.add_argument("--threads", type=int, default=None)
    v = sub.add_parser("validate", help="validate a config")
    v.add_argument("config")
    args = ap.parse_args(argv)
    try:
        cfg = load(args.config)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.study})")
        return EXIT_OK
    return run(cfg, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
