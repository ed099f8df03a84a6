import csv
import json
import subprocess
import sys

import pytest

from cocasim import cli
from cocasim.errors import ConfigError

FAST = ["--set", "clients=2", "--set", "classes=12", "--set", "layers=4", "--set", "vector_dim=16",
        "--set", "rounds=2", "--set", "frames_per_round=60"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_outputs(tmp_path):
    assert cli.main(["run", "--out", str(tmp_path), *FAST]) == 0
    assert len(rows(tmp_path / "metrics.csv")) == 4
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["config"]["classes"] == 12 and summary["messages"]["UpdateUpload"] == 4


def test_run_from_config_files(tmp_path):
    (tmp_path / "s.cfg").write_text("# scenario\nclients = 1\nthresholds.theta = 0.016\nrounds=1\n"
                                    "frames_per_round = 30\nworkload.distribution = longtail\nrho = 90\n")
    assert cli.main(["run", "--config", str(tmp_path / "s.cfg"), "--out", str(tmp_path / "a")]) == 0
    assert json.loads((tmp_path / "a" / "summary.json").read_text())["config"]["theta"] == 0.016
    (tmp_path / "s.json").write_text(json.dumps({"clients": 1, "rounds": 1, "frames_per_round": 30,
                                                  "thresholds": {"theta": 0.008}}))
    assert cli.main(["run", "--config", str(tmp_path / "s.json"), "--out", str(tmp_path / "b")]) == 0
    assert json.loads((tmp_path / "b" / "summary.json").read_text())["config"]["theta"] == 0.008


def test_seed_flag_deterministic(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["run", "--out", str(tmp_path / name), "--seed", "7", *FAST]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_bad_config_exit_codes(tmp_path, capsys):
    assert cli.main(["run", "--out", str(tmp_path), "--set", "bogus=1", "--set", "clients=0"]) == 2
    err = capsys.readouterr().err
    assert "offending keys" in err and "bogus" in err
    assert cli.main(["run", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 1
    (tmp_path / "broken.cfg").write_text("just words\n")
    assert cli.main(["run", "--config", str(tmp_path / "broken.cfg"), "--out", str(tmp_path)]) == 2


def test_sweep(tmp_path):
    args = ["sweep", "--out", str(tmp_path), *FAST, "--sweep", "thresholds.theta=0.008,0.012,0.016",
            "--replicates", "2"]
    assert cli.main(args) == 0
    out = rows(tmp_path / "sweep.csv")
    assert len(out) == 6 and list(out[0])[:2] == ["thresholds.theta", "seed"]
    assert [r["seed"] for r in out[:2]] == ["0", "1"]
    meta = json.loads((tmp_path / "sweep.json").read_text())
    assert meta["cells"] == 3


def test_sweep_two_parameters(tmp_path):
    assert cli.main(["sweep", "--out", str(tmp_path), *FAST, "--sweep", "p=0,1,2,10",
                     "--sweep", "distribution=noniid,uniform"]) == 0
    assert len(rows(tmp_path / "sweep.csv")) == 8


def test_sweep_errors(tmp_path):
    base = ["sweep", "--out", str(tmp_path), *FAST]
    four = ["--sweep", "theta=0.01", "--sweep", "p=0", "--sweep", "rho=1", "--sweep", "capacity=5"]
    assert cli.main(base + four) == 2
    assert cli.main(base + ["--sweep", "theta="]) == 2
    assert cli.main(base + ["--sweep", "nonsense=1,2"]) == 2
    assert cli.main(base) == 2
    assert cli.main(base + ["--sweep", "theta=0.01", "--replicates", "0"]) == 2
    for dup in (["theta=1", "theta=2"], ["theta=1", "thresholds.theta=2"]):
        with pytest.raises(ConfigError):
            cli.parse_sweep(dup)


def test_compare(tmp_path):
    assert cli.main(["compare", "--out", str(tmp_path), *FAST, "--policies", "ACA,LRU,EdgeOnly"]) == 0
    out = rows(tmp_path / "compare.csv")
    assert len(out) == 3 * 2 * 2
    by_policy = {}
    for r in out:
        by_policy.setdefault(r["compared_policy"], []).append(r["label_digest"])
    assert by_policy["ACA"] == by_policy["LRU"] == by_policy["EdgeOnly"]
    edge = [r for r in out if r["compared_policy"] == "EdgeOnly"]
    assert all(float(r["average_latency_ms"]) == pytest.approx(100, rel=1e-12) for r in edge)
    summary = rows(tmp_path / "compare_summary.csv")
    assert [r["policy"] for r in summary] == ["ACA", "LRU", "EdgeOnly"]


def test_compare_unknown_policy(tmp_path, capsys):
    assert cli.main(["compare", "--out", str(tmp_path), *FAST, "--policies", "ACA,MRU"]) == 2
    assert "MRU" in capsys.readouterr().err


def test_environment_variables(tmp_path, monkeypatch):
    monkeypatch.setenv("COCASIM_OUT", str(tmp_path / "env"))
    monkeypatch.setenv("COCASIM_SEED", "3")
    assert cli.main(["run", *FAST]) == 0
    assert json.loads((tmp_path / "env" / "summary.json").read_text())["seed"] == 3
    monkeypatch.setenv("COCASIM_SWEEP", "theta=0.008,0.016;p=0,1")
    assert cli.main(["sweep", "--out", str(tmp_path / "sw"), *FAST]) == 0
    assert len(rows(tmp_path / "sw" / "sweep.csv")) == 4


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cocasim", "run", "--out", str(tmp_path), *FAST],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and (tmp_path / "metrics.csv").exists()
    proc = subprocess.run([sys.executable, "-m", "cocasim", "run", "--set", "theta=-1"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "theta" in proc.stderr
