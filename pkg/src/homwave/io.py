"""CSV, summary and manifest writers. Output is a pure function of the
inputs: no timestamps, fixed float formatting, sorted JSON keys."""

from __future__ import annotations

import json
import os
import platform
from typing import Iterable, Sequence

import numpy as np

FLOAT_FMT = "%.16e"  # 17 significant digits: exact float64 round trip


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return FLOAT_FMT % float(x)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            if len(r) != len(header):
                raise ValueError("row length does not match header")
            fh.write(",".join(fmt(x) for x in r) + "\n")
    return path


def read_csv(path: str):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, data


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if np.isfinite(v) else repr(v)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def versions() -> dict:
    import scipy

    from . import __version__, kernels

    return {"homwave": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "backend": kernels.BACKEND}


def write_manifest(path: str, payload: dict) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_summary(path: str, lines: Sequence[str]) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
