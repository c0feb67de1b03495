import json
import os
import subprocess
import sys

import numpy as np
import pytest

from homwave.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from homwave.io import read_csv

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")


def write(tmp_path, text, name="study.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def manifest(out):
    with open(os.path.join(out, "manifest.json")) as fh:
        return json.load(fh)


def summary_value(out, prefix):
    with open(os.path.join(out, "summary.txt")) as fh:
        for line in fh:
            if line.startswith(prefix):
                return line[len(prefix):].strip()
    raise KeyError(prefix)


def test_validate_ok(capsys):
    assert main(["validate", os.path.join(CONFIGS, "cell_constant.cfg")]) == EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_malformed_eps_exit_1(tmp_path, capsys):
    out = str(tmp_path / "o")
    assert main(["run", os.path.join(CONFIGS, "malformed_eps.cfg"), "--out", out]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "minimal n is 128" in err
    assert not os.path.exists(out)


def test_missing_file_exit_1(tmp_path):
    assert main(["validate", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG


def test_cell_constant_summary(tmp_path):
    out = str(tmp_path / "o")
    assert main(["run", os.path.join(CONFIGS, "cell_constant.cfg"), "--out", out]) == EXIT_OK
    ah = [float(x) for x in summary_value(out, "a_h =").replace(";", ",").split(",")]
    assert ah == pytest.approx([2.0, 0.5, 0.5, 1.0], abs=1e-12)
    assert float(summary_value(out, "max|N| =")) <= 1e-12
    _, A = read_csv(os.path.join(out, "a_h.csv"))
    np.testing.assert_allclose(A, [[2.0, 0.5], [0.5, 1.0]], atol=1e-12)
    m = manifest(out)
    assert m["status"] == "ok" and m["config"]["cell.n"] == 64


def test_elliptic_1d_l2_rate(tmp_path):
    out = str(tmp_path / "o")
    assert main(["run", os.path.join(CONFIGS, "elliptic_1d.cfg"), "--out", out]) == EXIT_OK
    assert abs(float(summary_value(out, "L2 slope:")) - 1.0) <= 0.2
    header, data = read_csv(os.path.join(out, "rates.csv"))
    assert header == ["eps", "err_L2", "err_H1corr", "err_H1", "gap"]
    assert data.shape == (4, 5)


def test_elliptic_2d_corrected_h1_rate(tmp_path):
    out = str(tmp_path / "o")
    assert main(["run", os.path.join(CONFIGS, "elliptic_2d.cfg"), "--out", out]) == EXIT_OK
    assert abs(float(summary_value(out, "H1-corr slope:")) - 0.5) <= 0.15


def test_outputs_byte_identical(tmp_path):
    cfgp = os.path.join(CONFIGS, "exp_toy.cfg")
    outs = [str(tmp_path / "a"), str(tmp_path / "b")]
    for o in outs:
        assert main(["run", cfgp, "--out", o]) == EXIT_OK
    names = sorted(os.listdir(outs[0]))
    assert names == sorted(os.listdir(outs[1]))
    assert {"levels.csv", "decay.csv", "pairs.csv", "summary.txt", "manifest.json"} <= set(names)
    for n in names:
        with open(os.path.join(outs[0], n), "rb") as a, open(os.path.join(outs[1], n), "rb") as b:
            assert a.read() == b.read(), n


def test_numerical_failure_exit_2(tmp_path, capsys):
    # valid config, but the coefficient loses ellipticity: a(y) = 0.5 + sin(2 pi y)
    p = write(tmp_path, "study = cell\ncoeff.kind = trigonometric\ncoeff.base = 0.5\ncoeff.terms = 1:1:0\n"
                        "cell.n = 64\n")
    out = str(tmp_path / "o")
    assert main(["run", p, "--out", out]) == EXIT_NUMERIC
    m = manifest(out)
    assert m["status"] == "failed"
    assert "Ellipticity" in m["error"] or "ellipticity" in m["error"]
    assert "numerical failure" in capsys.readouterr().err


def test_thread_resolution(tmp_path, monkeypatch):
    p = write(tmp_path, "study = cell\ncoeff.kind = two_phase\ncell.n = 64\nthreads = 3\n")
    out = str(tmp_path / "o")
    monkeypatch.delenv("HOMWAVE_THREADS", raising=False)
    main(["run", p, "--out", out])
    assert manifest(out)["threads"] == 3
    monkeypatch.setenv("HOMWAVE_THREADS", "2")
    main(["run", p, "--out", out])
    assert manifest(out)["threads"] == 2
    main(["run", p, "--out", out, "--threads", "1"])
    assert manifest(out)["threads"] == 1


def test_manifest_records_seeds_tolerances_grid(tmp_path):
    out = str(tmp_path / "o")
    assert main(["run", os.path.join(CONFIGS, "exp_toy.cfg"), "--out", out]) == EXIT_OK
    m = manifest(out)
    cfg = m["config"]
    for key in ("expattract.seed", "expattract.cap", "grid.n", "grid.bc", "wave.tol", "cell.tol", "eps"):
        assert key in cfg
    assert cfg["expattract.seed"] == 0
    assert set(m["versions"]) >= {"homwave", "numpy", "scipy", "python", "backend"}
    assert m["results"]["seed"] == 0
    assert m["config_explicit"]["expattract.toy"] == "affine"


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "homwave.cli", "validate", os.path.join(CONFIGS, "exp_toy.cfg")],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "ok" in r.stdout
