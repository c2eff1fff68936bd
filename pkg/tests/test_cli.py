import datetime as dt
import json
import math

import numpy as np
import pytest

from pdvgas import cli, kernel
from pdvgas.model import ModelParams, StorageParams, simulate_ensemble
from pdvgas.timeseries import DailySeries, WeeklySeries, write_csv

START = dt.date(2019, 1, 4)


def run(tmp_path, command, cfg, *extra, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return cli.main([command, "--config", str(path), *extra])


@pytest.fixture
def data_dir(tmp_path):
    """Synthetic daily prices and weekly raw storage produced by the model itself."""
    n = 140
    per = 0.5 + 0.1 * np.cos(2 * np.pi * np.arange(n + 1) / 365)
    p = ModelParams(0.8734, 2.2244, 4.8764, 0.7193, 0.0341, 0.1893)
    ens = simulate_ensemble(p, StorageParams.constant(0.104, -0.3616), per, math.log(2.0), 0.0, n, 1, seed=7)
    write_csv(DailySeries(START, np.exp(ens.log_prices[0]), "price"), tmp_path / "prices.csv")
    weeks = np.arange(30)
    raw = 1000.0 * (0.55 + 0.2 * np.cos(2 * np.pi * weeks / 52.142857142857146) + 0.01 * np.sin(weeks))
    write_csv(WeeklySeries(START, raw, "raw"), tmp_path / "storage.csv")
    return tmp_path


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


SIM = {
    "seed": 3,
    "model": {"alpha": 0.8734, "r": 2.2244, "lam": 4.8764, "v0": 0.7193, "v1": 0.0341, "v2": 0.1893},
    "storage": {"gamma1": 0.104, "gamma2": -0.3616},
    "simulate": {"n_steps": 20, "n_paths": 1500, "s0": 2.0, "periodic": {"constant": 0.55}},
}


def test_ingest_writes_log_prices_and_manifest(data_dir):
    out = data_dir / "o"
    assert run(data_dir, "ingest", {"data": {"prices": "prices.csv", "storage": "storage.csv"}}, "--out", str(out)) == 0
    m = manifest(out)
    assert m["command"] == "ingest" and set(m["outputs"]) == {"log_prices.csv", "ingest_summary.json"}
    assert {"pdvgas", "numpy", "scipy", "python"} <= set(m["versions"]) and len(m["config_sha256"]) == 64
    summary = json.loads((out / "ingest_summary.json").read_text())
    assert summary["prices"]["days"] == 141 and summary["storage"]["weeks"] == 30


def test_missing_file_exit_2_names_path(data_dir, capsys):
    code = run(data_dir, "deseasonalize", {"data": {"storage": "nope.csv"}}, "--out", str(data_dir / "o"))
    assert code == 2 and "nope.csv" in capsys.readouterr().err


def test_missing_config_and_bad_json(tmp_path, capsys):
    assert cli.main(["ingest", "--config", str(tmp_path / "absent.json"), "--out", str(tmp_path)]) == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert cli.main(["ingest", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path)]) == 2


def test_malformed_csv_reports_line(tmp_path, capsys):
    (tmp_path / "s.csv").write_text("date,value\n2019-01-04,1.0\n2019-01-11,abc\n")
    assert run(tmp_path, "deseasonalize", {"data": {"storage": "s.csv"}}, "--out", str(tmp_path / "o")) == 2
    assert "s.csv:3" in capsys.readouterr().err


def test_deseasonalize_pure_sinusoid_has_zero_residual(tmp_path):
    weeks = np.arange(156)
    raw = 800.0 + 200.0 * np.cos(2 * np.pi * weeks / (365 / 7)) + 50.0 * np.sin(4 * np.pi * weeks / (365 / 7))
    write_csv(WeeklySeries(START, raw, "raw"), tmp_path / "s.csv")
    out = tmp_path / "o"
    assert run(tmp_path, "deseasonalize", {"data": {"storage": "s.csv"}}, "--out", str(out)) == 0
    resid = np.loadtxt(out / "residual.csv", delimiter=",", skiprows=1, usecols=1)
    assert resid.size == 156 and np.max(np.abs(resid)) < 1e-6
    assert set(manifest(out)["outputs"]) == {"normalized.csv", "periodic.csv", "residual.csv", "decomposition.json"}


def test_output_dir_from_environment(data_dir, monkeypatch):
    target = data_dir / "env_out"
    monkeypatch.setenv(cli.OUTPUT_ENV, str(target))
    assert run(data_dir, "ingest", {"data": {"prices": "prices.csv"}}) == 0
    assert (target / "manifest.json").exists()


def test_simulate_bit_identical_across_workers(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(tmp_path, "simulate", SIM, "--out", str(a), "--workers", "1") == 0
    assert run(tmp_path, "simulate", SIM, "--out", str(b), "--workers", "3") == 0
    assert manifest(a)["outputs"] == manifest(b)["outputs"]
    assert manifest(a)["config_sha256"] == manifest(b)["config_sha256"]
    c = tmp_path / "c"
    assert run(tmp_path, "simulate", SIM, "--out", str(c), "--seed", "4") == 0
    assert manifest(c)["outputs"]["log_prices.csv"] != manifest(a)["outputs"]["log_prices.csv"]


def test_simulate_requires_seed_and_positive_price(tmp_path):
    cfg = {k: v for k, v in SIM.items() if k != "seed"}
    assert run(tmp_path, "simulate", cfg, "--out", str(tmp_path / "o")) == 2
    bad = json.loads(json.dumps(SIM))
    bad["simulate"]["s0"] = -1.0
    assert run(tmp_path, "simulate", bad, "--out", str(tmp_path / "o")) == 2


def test_simulation_divergence_exit_1(tmp_path, capsys):
    cfg = json.loads(json.dumps(SIM))
    cfg["model"] = {"alpha": 1.4561, "r": 5.2536, "lam": 4.2638, "v0": 2.1268, "v1": 0.1361, "v2": 4.0786}
    cfg["simulate"].update(n_steps=1400, n_paths=50)
    assert run(tmp_path, "simulate", cfg, "--out", str(tmp_path / "o")) == 1
    assert "numerical failure" in capsys.readouterr().err


def test_calibrate_price_small_budget(data_dir):
    cfg = {
        "seed": 1,
        "data": {"prices": "prices.csv", "storage": "storage.csv"},
        "cbo_price": {"n_particles": 20, "n_steps": 20, "bounds": [[0.6, 1.2], [0, 5], [0, 10], [0.3, 1.2], [0, 0.2], [0, 0.5]]},
    }
    out = data_dir / "o"
    assert run(data_dir, "calibrate-price", cfg, "--out", str(out)) == 0
    rep = json.loads((out / "calibration_price.json").read_text())
    assert 0.6 <= rep["price"]["parameters"]["alpha"] <= 1.2 and math.isfinite(rep["price"]["log_likelihood"])
    assert rep["cbo"]["price"]["a"] == 1200 and rep["cbo"]["price"]["n_particles"] == 20
    assert (out / "cbo_trace.csv").read_text().count("\n") == 22


def test_invalid_bounds_rejected_before_compute(data_dir, monkeypatch):
    called = []
    monkeypatch.setattr(cli.calib, "calibrate_price", lambda *a: called.append(a))
    cfg = {"seed": 1, "data": {"prices": "prices.csv", "storage": "storage.csv"}, "cbo_price": {"bounds": [[1, 1]] * 6}}
    assert run(data_dir, "calibrate-price", cfg, "--out", str(data_dir / "o")) == 2
    assert not called


def test_calibrate_storage_windows(data_dir):
    cfg = {
        "seed": 2,
        "data": {"prices": "prices.csv", "storage": "storage.csv"},
        "storage_calibration": {"alpha": 0.8734, "window_days": 14},
        "cbo_storage": {"n_particles": 10, "n_steps": 5},
    }
    out = data_dir / "o"
    assert run(data_dir, "calibrate-storage", cfg, "--out", str(out)) == 0
    rep = json.loads((out / "calibration_storage.json").read_text())
    assert len(rep["storage"]["rows"]) == 10
    assert (out / "storage_parameters.csv").read_text().count("\n") == 11
    assert (out / "fitted_weekly_x.csv").read_text().count("\n") == 22


def test_storage_needs_alpha(data_dir):
    cfg = {"seed": 2, "data": {"prices": "prices.csv", "storage": "storage.csv"}, "storage_calibration": {}}
    assert run(data_dir, "calibrate-storage", cfg, "--out", str(data_dir / "o")) == 2


SWING = {
    "seed": 5,
    "n_runs": 2,
    "model": {"alpha": 0.9, "r": 0.0, "lam": 0.0, "v0": 0.0, "v1": 0.0, "v2": 0.0},
    "storage": {"gamma1": 0.0, "gamma2": 0.0},
    "contract": {"strike": 3.0, "global_rights": 3, "local_cap": 2, "exercise_dates": [0, 6, 12, 18, 24], "maturity": 30, "penalty_scale": 5.0},
    "simulate": {"n_paths": 40, "s0": 1.6, "periodic": 0.55},
    "regression": {"shape_hidden": 3, "history_stride": 5, "train": {"max_epochs": 10}},
}


def test_price_swing_zero_volatility_identical_runs(tmp_path):
    out = tmp_path / "o"
    assert run(tmp_path, "price-swing", SWING, "--out", str(out)) == 0
    rep = json.loads((out / "swing_report.json").read_text())
    p = [r["price"] for r in rep["runs"]]
    assert p[0] == p[1] == pytest.approx(3 * 1.4)
    rows = (out / "swing_runs.csv").read_text().splitlines()
    assert rows[0] == "run,price" and len(rows) == 1 + 2 + 4


def test_price_swing_single_path_warns(tmp_path, caplog):
    cfg = json.loads(json.dumps(SWING))
    cfg["simulate"]["n_paths"] = 1
    cfg["n_runs"] = 1
    assert run(tmp_path, "price-swing", cfg, "--out", str(tmp_path / "o")) == 0
    assert "degenerate" in caplog.text


def test_price_swing_bad_contract(tmp_path):
    cfg = json.loads(json.dumps(SWING))
    cfg["contract"]["global_rights"] = 20
    assert run(tmp_path, "price-swing", cfg, "--out", str(tmp_path / "o")) == 2
    cfg = json.loads(json.dumps(SWING))
    cfg["regression"]["train"] = {"epochs": 3}
    assert run(tmp_path, "price-swing", cfg, "--out", str(tmp_path / "o")) == 2


def test_price_swing_deterministic_across_workers(tmp_path):
    cfg = json.loads(json.dumps(SWING))
    cfg["model"] = {"alpha": 0.9, "r": 0.2, "lam": 1.0, "v0": 0.6, "v1": 0.01, "v2": 0.1}
    cfg["simulate"]["n_paths"] = 1100
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(tmp_path, "price-swing", cfg, "--out", str(a), "--workers", "1") == 0
    assert run(tmp_path, "price-swing", cfg, "--out", str(b), "--workers", "2") == 0
    assert manifest(a)["outputs"] == manifest(b)["outputs"]


def test_selftest_passes_and_repeats(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["selftest", "--out", str(a)]) == 0
    assert cli.main(["selftest", "--out", str(b)]) == 0
    assert (a / "selftest.txt").read_text() == (b / "selftest.txt").read_text()
    assert capsys.readouterr().out.count("PASS") == 8


def test_selftest_catches_kernel_sign_flip(monkeypatch):
    original = kernel._weights
    monkeypatch.setattr(kernel, "_weights", lambda i, cfg: -original(i, cfg))
    results = cli.run_selftest(cli.SELFTEST_CHECKS[:1])
    assert results == [("kernel", False, results[0][2])]
    assert "kernel" in results[0][0]


def test_selftest_exit_1_on_failure(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "SELFTEST_CHECKS", (("boom", lambda: (False, "no")),))
    monkeypatch.setattr(cli, "run_selftest", lambda checks=cli.SELFTEST_CHECKS: [("boom", False, "no")])
    assert cli.main(["selftest", "--out", str(tmp_path)]) == 1
    assert "FAIL boom" in (tmp_path / "selftest.txt").read_text()
