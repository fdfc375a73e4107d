import csv
import json
import math
import shutil
import subprocess
import sys

import jsonschema
import numpy as np
import pytest
import yaml

from diffgof.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from diffgof.experiment import POWER_ROW_SCHEMA, load_config, run_single_test
from diffgof.simulate import RngStream, dump_path, simulate_path

from conftest import ACCEPT_TABLE_DIR

OU = {"label": "OU", "drift": {"family": "ou", "a": 1.0, "b": 0.0},
      "diffusion": {"family": "constant", "sigma": math.sqrt(2.0)}}


def _write(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


@pytest.fixture
def base_cfg(accept_tables):
    return {"seed": 11, "hypothesis": OU, "T": 100.0, "dt": 0.01, "replications": 4,
            "statistics": ["cvm_lte", "cvm_edf", "ks_lte", "nn"], "tables": {"dir": str(ACCEPT_TABLE_DIR)}}


def test_calibrate_is_deterministic(tmp_path, capsys):
    args = ["calibrate", "--functional", "int_01", "--n-paths", "100000", "--time-step", "1e-3", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    a, b = (tmp_path / d / "int_01_v1.json" for d in "ab")
    assert a.read_bytes() == b.read_bytes()
    assert str(a) in capsys.readouterr().out


def test_calibrate_too_few_paths_is_config_error(tmp_path, capsys):
    rc = main(["calibrate", "--functional", "int_01", "--n-paths", "10", "--out", str(tmp_path)])
    assert rc == EXIT_CONFIG and "error" in capsys.readouterr().err


def test_invalid_config_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, "bad.yaml", {"seed": 1, "hypothesis": OU, "T": -5})
    assert main(["experiment", "--config", str(cfg)]) == EXIT_CONFIG
    assert "T" in capsys.readouterr().err
    assert main(["experiment", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_missing_table_is_config_error(tmp_path, base_cfg, capsys):
    base_cfg["tables"] = {"dir": str(tmp_path / "empty")}
    cfg = _write(tmp_path, "c.yaml", base_cfg)
    assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "diffgof calibrate" in capsys.readouterr().err


def test_non_ergodic_hypothesis_exit_3(tmp_path, base_cfg, capsys):
    base_cfg["hypothesis"] = {"label": "anti", "drift": {"family": "ou", "a": -1.0, "b": 0.0},
                              "diffusion": {"family": "constant", "sigma": 1.0}}
    cfg = _write(tmp_path, "c.yaml", base_cfg)
    assert main(["test", "--config", str(cfg)]) == EXIT_NUMERIC
    err = capsys.readouterr().err
    assert "QuadratureDivergence" in err and "hint" in err


def test_experiment_report_is_deterministic(tmp_path, base_cfg):
    cfg = _write(tmp_path, "c.yaml", base_cfg)
    assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "r1")]) == EXIT_OK
    assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "r2"), "--threads", "2"]) == EXIT_OK
    for f in ("report.json", "replications.csv"):
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()
    report = json.loads((tmp_path / "r1" / "report.json").read_text())
    null = report["scenarios"][0]
    assert null["replications_completed"] == 4
    assert {r["statistic"] for r in null["results"]} == set(base_cfg["statistics"])


def test_seed_override_changes_results(tmp_path, base_cfg):
    cfg = _write(tmp_path, "c.yaml", base_cfg)
    main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "r1")])
    main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "r2"), "--seed", "12"])
    assert (tmp_path / "r1" / "replications.csv").read_bytes() != (tmp_path / "r2" / "replications.csv").read_bytes()


def test_zero_replications_gives_empty_report(tmp_path, base_cfg):
    base_cfg["replications"] = 0
    cfg = _write(tmp_path, "c.yaml", base_cfg)
    assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "r")]) == EXIT_OK
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    for r in report["scenarios"][0]["results"]:
        assert r["replications"] == 0 and r["rejection_rate"] is None
    with open(tmp_path / "r" / "replications.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 0


def test_test_command_prints_decisions(tmp_path, base_cfg, capsys):
    cfg = _write(tmp_path, "c.yaml", base_cfg)
    assert main(["test", "--config", str(cfg), "--out", str(tmp_path / "t")]) == EXIT_OK
    rows = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [r["statistic_name"] for r in rows] == base_cfg["statistics"]
    for r in rows:
        assert r["reject"] == (r["value"] > r["critical_value"])
    assert (tmp_path / "t" / "test_results.csv").exists()


def test_path_file_roundtrip_gives_same_decisions(tmp_path, base_cfg, ou, ou_law):
    p = simulate_path(ou, ou_law, 100.0, 0.01, RngStream(base_cfg["seed"], 0))
    dump_path(p, tmp_path / "p.bin")
    sim = run_single_test(load_config(_write(tmp_path, "a.yaml", base_cfg)))
    from_file = run_single_test(load_config(_write(tmp_path, "b.yaml", {**base_cfg, "path": {"file": str(tmp_path / "p.bin")}})))
    assert [(r.statistic_name, r.value, r.reject) for r in sim] == [(r.statistic_name, r.value, r.reject) for r in from_file]


def test_report_outputs(tmp_path, base_cfg):
    base_cfg.update(oscillation={"alpha": 0.3, "n": [1, 4]}, include_null=True, epsilons=[0.05, 0.1])
    cfg = _write(tmp_path, "c.yaml", base_cfg)
    res = tmp_path / "r"
    assert main(["experiment", "--config", str(cfg), "--out", str(res)]) == EXIT_OK
    assert main(["report", str(res)]) == EXIT_OK
    plots = res / "plots"
    hist = np.genfromtxt(plots / "hist_null_cvm_lte.csv", delimiter=",", names=True, dtype=None, encoding=None)
    assert hist["count"].sum() == base_cfg["replications"]
    with open(plots / "power_curve.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 2 * len(base_cfg["statistics"])
    for r in rows:
        jsonschema.validate({k: (r[k] if k == "statistic" else float(r[k]) if k != "replications" else int(r[k]))
                             for k in r}, POWER_ROW_SCHEMA)
    assert (plots / "curves_null.csv").exists() and (plots / "rejection_rates.csv").exists()


def test_report_missing_inputs(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == EXIT_CONFIG
    assert "missing" in capsys.readouterr().err


@pytest.mark.skipif(shutil.which("diffgof") is None, reason="console script not installed")
def test_console_script_help():
    out = subprocess.run(["diffgof", "--help"], capture_output=True, text=True, check=True).stdout
    for cmd in ("calibrate", "test", "experiment", "report"):
        assert cmd in out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "diffgof.cli", "calibrate", "--help"], capture_output=True,
                         text=True, check=True).stdout
    assert "--functional" in out
