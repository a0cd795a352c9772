"""Command-line front end: configs, outputs, exit codes, determinism."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from besovtransfer.cli import EXIT_ASSUMPTION, EXIT_CONFIG, EXIT_OK, main

PHI = (1 + math.sqrt(5)) / 2


def write_config(path: Path, **overrides) -> Path:
    data = {
        "schema_version": 1,
        "grid": {"arity": 2, "max_level": 8},
        "params": {"s": 0.4, "p": 2.0, "q": 2.0, "beta": 0.45,
                   "eps": 0.1, "delta": 0.05, "gamma": 0.5},
        "map": {"map": "doubling", "potential": "jacobian"},
        "analyses": ["density"],
        "seed": 0,
    }
    data.update(overrides)
    cfg = path / "config.json"
    cfg.write_text(json.dumps(data))
    return cfg


def test_density_run_doubling(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    rc = main(["density", "--config", str(cfg), "--out", str(out)])
    assert rc == EXIT_OK
    rows = (out / "density.csv").read_text().strip().splitlines()[1:]
    vals = np.asarray([float(r.split(",")[1]) for r in rows])
    assert np.max(np.abs(vals - 1.0)) <= 1e-12


def test_ledger_run(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["ledger", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    header = (out / "ledger.csv").read_text().splitlines()[0]
    assert header == "r,a_r,c_DC1,c_DC2,c_DGD1,c_DGD2,c_RP,theta"


def test_spectrum_golden_leading_eigenvalue(tmp_path):
    cfg = write_config(tmp_path, map={"map": "beta", "beta": PHI},
                       grid={"arity": 2, "max_level": 8})
    out = tmp_path / "out"
    assert main(["spectrum", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    rows = (out / "spectrum.csv").read_text().strip().splitlines()[1:]
    lam1 = complex(float(rows[0].split(",")[0]), float(rows[0].split(",")[1]))
    assert abs(lam1 - 1.0) <= 1e-9
    meta = json.loads((out / "spectral.json").read_text())
    assert meta["transitive"] is True


def test_config_rejects_exponent_box(tmp_path):
    cfg = write_config(tmp_path, params={"s": 0.45, "p": 2.0, "q": 2.0,
                                         "beta": 0.47, "eps": 0.1,
                                         "delta": 0.05, "gamma": 0.5})
    out = tmp_path / "out"
    rc = main(["density", "--config", str(cfg), "--out", str(out)])
    assert rc == EXIT_ASSUMPTION


def test_config_error_paths(tmp_path):
    missing = tmp_path / "nope.json"
    assert main(["density", "--config", str(missing), "--out", str(tmp_path)]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["density", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    cfg = write_config(tmp_path, analyses=["nonsense"])
    assert main(["density", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_nonexpanding_map_rejected(tmp_path):
    cfg = write_config(tmp_path, map={"map": "pw_linear",
                                      "breakpoints": [0.0, 0.5, 1.0],
                                      "slopes": [2.0, 0.9]})
    rc = main(["ledger", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert rc == EXIT_CONFIG


def test_determinism_byte_identical(tmp_path):
    cfg = write_config(tmp_path, analyses=["density"],
                       map={"map": "beta", "beta": PHI},
                       grid={"arity": 2, "max_level": 8})
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["ly", "--config", str(cfg), "--out", str(out),
                     "--seed", "7"]) == EXIT_OK
        assert main(["density", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
        outs.append(out)
    for fname in ("ly.json", "density.csv", "density_info.json"):
        a = (outs[0] / fname).read_bytes()
        b = (outs[1] / fname).read_bytes()
        assert a == b, f"{fname} differs between identical runs"


def test_explain_t0(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["explain", "t0", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == EXIT_OK
    text = capsys.readouterr().out
    assert "p/(1 - s*p + delta*p)" in text
    assert "6.6667" in text


def test_explain_c_d_and_theta(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["explain", "C_D", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "2/(1 - lambda_RS2**gamma)" in out
    assert main(["explain", "theta", "--config", str(cfg),
                 "--out", str(tmp_path / "o")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "c_DC1**eps * c_RP" in out
    assert out.count("\n") >= 3   # per-branch table


def test_explain_unknown_name(tmp_path):
    cfg = write_config(tmp_path)
    rc = main(["explain", "t0", "--config", str(cfg), "--out", str(tmp_path)])
    assert rc == EXIT_OK
    with pytest.raises(SystemExit):
        main(["explain", "bogus", "--config", str(cfg), "--out", str(tmp_path)])


def test_bounds_and_clt_outputs(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["bounds", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    bounds = json.loads((out / "bounds.json").read_text())
    assert "formulas" in bounds and "essential_bound" in bounds
    assert bounds["formulas"]["C_D"] == "2/(1 - lambda_RS2**gamma)"
    assert main(["clt", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    clt = json.loads((out / "clt.json").read_text())
    assert clt["sigma2"] == pytest.approx(0.5, abs=1e-3)


def test_matrix_and_decay_outputs(tmp_path):
    cfg = write_config(tmp_path, grid={"arity": 2, "max_level": 6})
    out = tmp_path / "out"
    assert main(["matrix", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    triplets = (out / "matrix.csv").read_text().splitlines()
    assert triplets[0] == "row,col,value"
    assert len(triplets) > 64
    bounds = json.loads((out / "bounds.json").read_text())
    assert "provenance" in bounds
    assert main(["decay", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    decay = json.loads((out / "decay.json").read_text())
    # doubling first-level differences die after one step: the fit degenerates
    assert decay["degenerate"] is True
    assert main(["validate", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert json.loads((out / "axioms.json").read_text())["all_pass"] is True


def test_max_cells_flag(tmp_path):
    cfg = write_config(tmp_path, grid={"arity": 2, "max_level": 10})
    rc = main(["matrix", "--config", str(cfg), "--out", str(tmp_path / "o"),
               "--max-cells", "100"])
    assert rc == EXIT_CONFIG
