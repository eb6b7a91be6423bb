import copy
import json
import math
import os
import pathlib
import subprocess

import numpy as np
import pytest

import mqclab

ROOT = pathlib.Path(__file__).resolve().parents[2]
CONFIGS = ROOT / "configs"
CLI = os.environ.get("MQC_CLI", str(ROOT / "build" / "tools" / "mqc_cli"))


def load(name):
    return json.loads((CONFIGS / name).read_text())


def test_csv_header():
    assert mqclab.csv_columns() == [
        "t", "mass", "energy", "C1", "C2", "S_pure", "S_uhlmann", "renyi_alpha",
        "purity", "lambda_min", "lambda_max", "poincare", "antiherm_resid",
    ]


def test_matrix_helpers():
    assert mqclab.von_neumann_entropy(np.eye(2) / 2) == pytest.approx(math.log(2.0), rel=1e-14)
    psi = np.array([1.0, 1.0j]) / math.sqrt(2.0)
    assert mqclab.purity(np.outer(psi, psi.conj())) == pytest.approx(1.0, rel=1e-14)
    with pytest.raises(mqclab.Error):
        mqclab.von_neumann_entropy(np.zeros((2, 3)))


def test_zero_hamiltonian_keeps_every_diagnostic(tmp_path):
    r = mqclab.simulate(CONFIGS / "zero_hamiltonian.json", out_dir=tmp_path)
    assert r["exit_code"] == 0 and not r["aborted"]
    assert r["steps_taken"] == 20
    d = r["diagnostics"]
    assert d["t"] == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])
    for name in ("mass", "energy", "C1", "purity"):
        assert max(d[name]) - min(d[name]) <= 1e-14 * max(1.0, abs(d[name][0]))
    # the density representation has no split, so split-based entropies stay empty
    assert all(v is None for v in d["S_pure"] + d["S_uhlmann"])
    assert r["final_density"].shape == (32, 32)
    assert sorted(pathlib.Path(f).name for f in r["files"]) == [
        "diagnostics.csv", "final.snap", "initial.snap", "run.json"]
    snap = mqclab.read_snapshot_density(tmp_path / "final.snap")
    np.testing.assert_array_equal(snap, r["final_density"])


def test_missing_key_names_its_path():
    cfg = load("nanowire.json")
    del cfg["hamiltonian"]["kind"]
    with pytest.raises(mqclab.ConfigError, match="hamiltonian.kind"):
        mqclab.simulate(cfg)


def test_dephasing_equilibrium_from_a_dict():
    cfg = load("dephasing_equilibrium.json")
    cfg["grid"].update({"Nq": 32, "Np": 32})
    cfg["equilibrium"]["t_check"] = 0.5
    cfg["equilibrium"]["probes"] = 5
    r = mqclab.equilibrium(cfg)
    assert r["mu"] == 2.0 and r["branch"] == 1
    assert r["stationarity"]["marina_residual"] < 1e-12
    assert r["maximality"]["violations"] == 0
    assert r["density"].sum() * (2 * math.pi / 32) ** 2 == pytest.approx(1.0, rel=1e-12)


def run_cli(*args):
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, timeout=120)


def write(tmp_path, cfg):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_cli_success(tmp_path):
    r = run_cli("simulate", "--config", CONFIGS / "zero_hamiltonian.json", "--out", tmp_path / "out", "--quiet")
    assert r.returncode == 0, r.stderr
    lines = (tmp_path / "out" / "diagnostics.csv").read_text().splitlines()
    assert lines[0] == ",".join(mqclab.csv_columns())
    assert len(lines) == 6


def test_cli_missing_key_exits_1(tmp_path):
    cfg = load("nanowire.json")
    del cfg["grid"]["Np"]
    r = run_cli("simulate", "--config", write(tmp_path, cfg), "--out", tmp_path / "out")
    assert r.returncode == 1
    assert "grid.Np" in r.stderr


def test_cli_numerical_abort_exits_2(tmp_path):
    cfg = copy.deepcopy(load("nanowire.json"))
    cfg["time"] = {"dt": 2.0, "steps": 10}
    r = run_cli("simulate", "--config", write(tmp_path, cfg), "--out", tmp_path / "out")
    assert r.returncode == 2
    assert "numerical abort" in r.stderr
    assert (tmp_path / "out" / "abort.snap").exists()
    meta = json.loads((tmp_path / "out" / "run.json").read_text())
    assert meta["aborted"] is True
