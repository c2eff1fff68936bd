"""Command-line front end.

Every command reads one JSON config (``--config``), validates all of it before computing,
writes its outputs to the output directory and finishes with ``manifest.json``.
Exit codes: 0 success, 1 numerical failure, 2 bad input or config.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__, calib, kernel, model, nn, swing, timeseries
from .cbo import CboConfig, cbo_optimize, price_preset, storage_preset

OUTPUT_ENV = "PDVGAS_OUTPUT_DIR"
log = logging.getLogger("pdvgas")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config helpers


def _section(cfg: dict, name: str, required: bool = True) -> dict:
    if name not in cfg:
        if required:
            raise ConfigError(f"missing config section '{name}'")
        return {}
    if not isinstance(cfg[name], dict):
        raise ConfigError(f"config section '{name}' must be an object")
    return cfg[name]


def _get(sec: dict, key: str, kind=float, default=...):
    if key not in sec:
        if default is ...:
            raise ConfigError(f"missing config key '{key}'")
        return default
    try:
        return kind(sec[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for '{key}': {sec[key]!r}") from exc


def _path(sec: dict, key: str, base: Path) -> Path:
    p = Path(_get(sec, key, str))
    p = p if p.is_absolute() else base / p
    if not p.exists():
        raise ConfigError(f"file not found: {p}")
    return p


def _seed(cfg: dict) -> int:
    if "seed" not in cfg:
        raise ConfigError("a global 'seed' is required for this command")
    return _get(cfg, "seed", int)


def _model_params(sec: dict) -> model.ModelParams:
    keys = ("alpha", "r", "lam", "v0", "v1", "v2")
    return model.ModelParams(*(_get(sec, k) for k in keys), delta=_get(sec, "delta", float, 1e-2), dt=_get(sec, "dt", float, 1 / 365))


def _storage_params(sec: dict) -> model.StorageParams:
    g1, g2 = sec.get("gamma1"), sec.get("gamma2")
    if g1 is None or g2 is None:
        raise ConfigError("storage section needs gamma1 and gamma2")
    wd = sec.get("window_days")
    return model.StorageParams(np.atleast_1d(np.asarray(g1, float)), np.atleast_1d(np.asarray(g2, float)), None if wd is None else int(wd))


def _bounds(raw, dim: int, default) -> tuple:
    b = default if raw is None else raw
    try:
        b = tuple((float(lo), float(hi)) for lo, hi in b)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bounds must be a list of [low, high] pairs: {raw!r}") from exc
    if len(b) != dim:
        raise ConfigError(f"expected {dim} bound pairs, got {len(b)}")
    for lo, hi in b:
        if not lo < hi:
            raise ConfigError(f"invalid bounds: low {lo} >= high {hi}")
    return b


def _cbo(sec: dict, preset, dim: int, default_bounds, seed: int) -> CboConfig:
    bounds = _bounds(sec.get("bounds"), dim, default_bounds)
    base = preset(bounds, seed=seed)
    over = {k: sec[k] for k in ("a", "b", "sigma", "n_particles", "n_steps", "dt") if k in sec}
    try:
        return replace(base, **over)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad CBO settings: {exc}") from exc


def _train_cfg(sec: dict) -> nn.TrainConfig:
    fields = nn.TrainConfig.__dataclass_fields__
    unknown = set(sec) - set(fields)
    if unknown:
        raise ConfigError(f"unknown training keys {sorted(unknown)}")
    try:
        return nn.TrainConfig(**sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad training config: {exc}") from exc


def _contract(sec: dict) -> swing.SwingContract:
    try:
        return swing.SwingContract(
            strike=_get(sec, "strike"),
            global_rights=_get(sec, "global_rights", int),
            local_cap=_get(sec, "local_cap", int),
            exercise_dates=tuple(sec["exercise_dates"]),
            maturity=_get(sec, "maturity", int),
            penalty_scale=_get(sec, "penalty_scale", float, 0.0),
            discount_rate=_get(sec, "discount_rate", float, 0.0),
            dt=_get(sec, "dt", float, 1 / 365),
        )
    except KeyError as exc:
        raise ConfigError(f"contract is missing {exc}") from exc


def _periodic(sec, n_days: int, base: Path) -> np.ndarray:
    """Daily periodic storage: a constant, a daily CSV, or a saved Fourier decomposition."""
    if isinstance(sec, (int, float)):
        return np.full(n_days, float(sec))
    if not isinstance(sec, dict):
        raise ConfigError("'periodic' must be a number or an object")
    if "constant" in sec:
        return np.full(n_days, float(sec["constant"]))
    if "csv" in sec:
        s = timeseries.load_csv(_path(sec, "csv", base), "storage_daily").values
        if s.size < n_days:
            raise ConfigError(f"periodic CSV has {s.size} days, need {n_days}")
        return s[:n_days]
    if "decomposition" in sec:
        obj = json.loads(_path(sec, "decomposition", base).read_text())
        t = (int(sec.get("offset_days", 0)) + np.arange(n_days)) / 7.0
        k = np.arange(1, len(obj["cos"]) + 1)
        ph = 2 * np.pi * np.multiply.outer(t, k) / obj["period"]
        return obj["mean"] + np.cos(ph) @ np.asarray(obj["cos"]) + np.sin(ph) @ np.asarray(obj["sin"])
    raise ConfigError("'periodic' needs one of constant, csv, decomposition")


# ---------------------------------------------------------------- output helpers


def _canonical(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, cfg: dict, seed, files: list[Path], extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "config": cfg,
        "config_sha256": hashlib.sha256(_canonical(cfg).encode()).hexdigest(),
        "seed": seed,
        "versions": {
            "pdvgas": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "outputs": {p.name: _sha256(p) for p in sorted(files)},
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _dump(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2))
    return path


# ---------------------------------------------------------------- data alignment


@dataclass
class AlignedData:
    prices: timeseries.DailySeries
    decomposition: timeseries.SeasonalDecomposition
    p_daily: np.ndarray
    x_daily: np.ndarray
    x_weekly: np.ndarray


def _load_aligned(data: dict, deseason: dict, base: Path) -> AlignedData:
    prices = timeseries.load_csv(_path(data, "prices", base), "price")
    raw = timeseries.load_csv(_path(data, "storage", base), "raw")
    dec = _decompose(raw, deseason)
    offset = (prices.start_date - raw.start_date).days
    if offset < 0 or offset % 7:
        raise ConfigError("price series must start on a storage week boundary at or after the storage start")
    n = len(prices)
    w0 = offset // 7
    n_weeks = -(-n // 7)
    if w0 + n_weeks > len(raw):
        raise ConfigError(f"storage covers {len(raw) - w0} weeks from the price start, prices need {n_weeks}")
    per = timeseries.WeeklySeries(prices.start_date, dec.periodic.values[w0 : w0 + n_weeks], "periodic")
    res = timeseries.WeeklySeries(prices.start_date, dec.residual.values[w0 : w0 + n_weeks], "residual")
    p_daily = timeseries.weekly_to_daily(per, n).values
    x_daily = timeseries.weekly_to_daily(res, n).values
    return AlignedData(prices, dec, p_daily, x_daily, res.values)


def _decompose(raw: timeseries.WeeklySeries, sec: dict) -> timeseries.SeasonalDecomposition:
    cap = sec.get("cap", "auto")
    norm = timeseries.normalize_storage(raw, cap)
    return timeseries.fourier_fit(norm, _get(sec, "period", float, timeseries.DEFAULT_PERIOD), _get(sec, "harmonics", int, 3))


# ---------------------------------------------------------------- commands


def cmd_ingest(cfg: dict, out: Path, base: Path) -> list[Path]:
    data = _section(cfg, "data")
    files, summary = [], {}
    if "prices" in data:
        prices = timeseries.load_csv(_path(data, "prices", base), "price")
        timeseries.write_csv(prices.log(), out / "log_prices.csv")
        files.append(out / "log_prices.csv")
        summary["prices"] = {"start": prices.start_date.isoformat(), "days": len(prices), "min": float(prices.values.min()), "max": float(prices.values.max())}
    if "storage" in data:
        raw = timeseries.load_csv(_path(data, "storage", base), "raw")
        summary["storage"] = {"start": raw.start_date.isoformat(), "weeks": len(raw), "min": float(raw.values.min()), "max": float(raw.values.max())}
    if not summary:
        raise ConfigError("data section needs 'prices' and/or 'storage'")
    files.append(_dump(out / "ingest_summary.json", summary))
    return files


def cmd_deseasonalize(cfg: dict, out: Path, base: Path) -> list[Path]:
    data = _section(cfg, "data")
    sec = _section(cfg, "deseasonalize", required=False)
    raw = timeseries.load_csv(_path(data, "storage", base), "raw")
    norm = timeseries.normalize_storage(raw, sec.get("cap", "auto"))
    dec = timeseries.fourier_fit(norm, _get(sec, "period", float, timeseries.DEFAULT_PERIOD), _get(sec, "harmonics", int, 3))
    files = []
    for name, series in (("normalized", norm), ("periodic", dec.periodic), ("residual", dec.residual)):
        timeseries.write_csv(series, out / f"{name}.csv")
        files.append(out / f"{name}.csv")
    dec.save_json(out / "decomposition.json")
    files.append(out / "decomposition.json")
    return files


def cmd_simulate(cfg: dict, out: Path, base: Path, workers: int) -> list[Path]:
    seed = _seed(cfg)
    params = _model_params(_section(cfg, "model"))
    storage = _storage_params(_section(cfg, "storage"))
    sim = _section(cfg, "simulate")
    n_steps, n_paths = _get(sim, "n_steps", int), _get(sim, "n_paths", int)
    s0 = _get(sim, "s0")
    if s0 <= 0:
        raise ConfigError("s0 is an initial price and must be positive")
    p = _periodic(sim.get("periodic", 0.5), n_steps + 1, base)
    ens = model.simulate_ensemble(params, storage, p, math.log(s0), _get(sim, "x0", float, 0.0), n_steps, n_paths, seed, workers)
    ens.save(out)
    ens.save_csv(out / "log_prices.csv")
    ens.save_csv(out / "storage_x.csv", which="storage_x")
    return sorted(p for p in out.iterdir() if p.name != "manifest.json")


def _price_input(cfg: dict, base: Path) -> tuple[AlignedData, calib.PriceObjectiveInput]:
    data = _section(cfg, "data")
    d = _load_aligned(data, _section(cfg, "deseasonalize", required=False), base)
    sec = _section(cfg, "model", required=False)
    inp = calib.PriceObjectiveInput(np.log(d.prices.values), d.p_daily, d.x_daily, _get(sec, "delta", float, 1e-2), _get(sec, "dt", float, 1 / 365))
    return d, inp


def cmd_calibrate_price(cfg: dict, out: Path, base: Path) -> list[Path]:
    seed = _seed(cfg)
    cbo_cfg = _cbo(_section(cfg, "cbo_price", required=False), price_preset, 6, calib.DEFAULT_PRICE_BOUNDS, seed)
    _, inp = _price_input(cfg, base)
    res = calib.calibrate_price(inp, cbo_cfg)
    report = calib.CalibrationReport(res.theta_hat, res.objective_value, cbo_settings={"price": _cbo_dict(cbo_cfg)})
    report.save(out / "calibration_price.json")
    res.cbo.save_trace(out / "cbo_trace.csv")
    table = out / "price_parameters.csv"
    table.write_text(",".join(calib.PARAM_NAMES) + ",log_likelihood\n" + ",".join(repr(float(getattr(res.theta_hat, k))) for k in calib.PARAM_NAMES) + f",{res.objective_value!r}\n")
    return [out / "calibration_price.json", out / "cbo_trace.csv", table]


def _cbo_dict(c: CboConfig) -> dict:
    return {"a": c.a, "b": c.b, "sigma": c.sigma, "n_particles": c.n_particles, "n_steps": c.n_steps, "dt": c.dt, "seed": c.seed, "bounds": [list(b) for b in c.bounds]}


def cmd_calibrate_storage(cfg: dict, out: Path, base: Path) -> list[Path]:
    seed = _seed(cfg)
    sec = _section(cfg, "storage_calibration")
    cbo_cfg = _cbo(_section(cfg, "cbo_storage", required=False), storage_preset, 2, calib.DEFAULT_GAMMA_BOUNDS, seed)
    if "alpha" in sec:
        alpha = _get(sec, "alpha")
    elif "price_report" in sec:
        alpha = json.loads(_path(sec, "price_report", base).read_text())["price"]["parameters"]["alpha"]
    else:
        raise ConfigError("storage_calibration needs 'alpha' or 'price_report'")
    window = sec.get("window_days")
    window = None if window is None else int(window)
    if window is not None and window < 1:
        raise ConfigError("window_days must be >= 1")
    d, inp = _price_input(cfg, base)
    x0 = _get(sec, "x0", float, float(d.x_daily[0]))
    res = calib.calibrate_storage(alpha, inp.delta, window, inp, d.x_weekly, x0, cbo_cfg)
    n = inp.n_steps
    k = calib.window_count(n, window)
    wd = n if window is None else window
    dates = d.prices.dates()
    windows = [(dates[j * wd], dates[min((j + 1) * wd, n)]) for j in range(k)]
    report = calib.CalibrationReport(
        model.ModelParams(alpha, 0, 0, 0, 0, 0, inp.delta, inp.dt), float("nan"), res.storage, res.mse, windows, {"storage": _cbo_dict(cbo_cfg)}
    )
    obj = report.to_json()
    obj.pop("price")
    obj["alpha"] = alpha
    obj["x0"] = x0
    files = [_dump(out / "calibration_storage.json", obj)]
    rows = ["window_start,window_end,gamma1,gamma2"] + [f"{a},{b},{g1!r},{g2!r}" for (a, b), g1, g2 in zip(windows, res.storage.gamma1.tolist(), res.storage.gamma2.tolist())]
    (out / "storage_parameters.csv").write_text("\n".join(rows) + "\n")
    files.append(out / "storage_parameters.csv")
    fit = timeseries.WeeklySeries(d.prices.start_date, timeseries.weekly_block_means(res.x_daily_fit), "residual")
    timeseries.write_csv(fit, out / "fitted_weekly_x.csv")
    files.append(out / "fitted_weekly_x.csv")
    return files


def cmd_price_swing(cfg: dict, out: Path, base: Path, workers: int) -> list[Path]:
    seed = _seed(cfg)
    params = _model_params(_section(cfg, "model"))
    storage = _storage_params(_section(cfg, "storage"))
    contract = _contract(_section(cfg, "contract"))
    sim = _section(cfg, "simulate")
    reg_sec = dict(_section(cfg, "regression", required=False))
    train_cfg = _train_cfg(reg_sec.pop("train", {}))
    try:
        reg = swing.RegressionConfig(train=train_cfg, **reg_sec)
    except TypeError as exc:
        raise ConfigError(f"bad regression config: {exc}") from exc
    n_paths = _get(sim, "n_paths", int)
    s0 = _get(sim, "s0")
    if s0 <= 0:
        raise ConfigError("s0 is an initial price and must be positive")
    n_runs = _get(cfg, "n_runs", int, 1)
    p = _periodic(sim.get("periodic", 0.5), contract.maturity + 1, base)
    x0 = _get(sim, "x0", float, 0.0)
    if n_paths < 10:
        log.warning("n_paths=%d: regression on fewer than 10 paths is degenerate", n_paths)
    prices, runs = [], []
    for r in range(n_runs):
        run_seed = seed + r
        ens = model.simulate_ensemble(params, storage, p, math.log(s0), x0, contract.maturity, n_paths, run_seed, workers)
        res = swing.price_backward(ens, contract, reg, seed=run_seed)
        prices.append(res.price)
        runs.append(res.to_json())
        log.info("run %d: price %.6f (se %.4f)", r + 1, res.price, res.std_error)
    summary = swing.write_runs_csv(out / "swing_runs.csv", prices)
    report = {"contract": contract.to_dict(), "summary": summary, "runs": runs}
    return [_dump(out / "swing_report.json", report), out / "swing_runs.csv"]


# ---------------------------------------------------------------- selftest


def _check_kernel():
    a, d = 0.75, 0.01
    errs = []
    for n in (400, 800, 1600):
        cfg = kernel.KernelConfig(a, d, 1.0 / n)
        errs.append(abs(kernel.moving_average(np.full(n + 1, 2.0), n, cfg) - 2.0 * (1 - (d / (1 + d)) ** (1 - a))))
    order = math.log2(errs[0] / errs[1]), math.log2(errs[1] / errs[2])
    if not min(order) > 0.8:
        return False, f"moving-average grid order {order}"
    cfg = kernel.KernelConfig(a, d, 1.0 / 365)
    h = np.sin(np.arange(366) / 365.0 * 3)
    mono = kernel.relative_level(h + 1.0, 365, cfg) - kernel.relative_level(h, 365, cfg)
    if abs(mono) > 1e-12:
        return False, "relative level not shift invariant"
    if kernel.relative_level(np.arange(366) / 365.0, 365, cfg) >= 0:
        return False, "relative level of an increasing path must be negative"
    return True, f"errors {errs[-1]:.2e}, order {min(order):.2f}"


def _check_cbo():
    rng = np.random.default_rng(11)
    target = rng.uniform(-4, 4, 6)
    cfg = CboConfig(1200.0, 400.0, 20.0, 100, 1500, ((-5.0, 5.0),) * 6, dt=0.8 / 1200, seed=3)
    res = cbo_optimize(lambda th: -np.sum((th - target) ** 2, axis=1), "maximize", cfg, vectorized=True, record_trace=False)
    err = float(np.max(np.abs(res.theta_hat - target)))
    return err < 0.1, f"max error {err:.3e}"


def _check_moments():
    p = model.ModelParams(0.75, 0.3, 0.0, 0.4, 0.0, 0.0)
    ens = model.simulate_ensemble(p, model.StorageParams.constant(0, 0), np.full(31, 0.5), 0.0, 0.0, 30, 20000, seed=5)
    inc = np.diff(ens.log_prices, axis=1).ravel()
    mean_t, var_t = (p.r - 0.5 * p.v0**2) * p.dt, p.v0**2 * p.dt
    se_m = math.sqrt(var_t / inc.size)
    se_v = var_t * math.sqrt(2.0 / (inc.size - 1))
    ok = abs(inc.mean() - mean_t) < 4 * se_m and abs(inc.var(ddof=1) - var_t) < 4 * se_v
    return ok, f"mean z {(inc.mean() - mean_t) / se_m:.2f}, var z {(inc.var(ddof=1) - var_t) / se_v:.2f}"


def _check_bracket():
    p = model.ModelParams(0.9, 0.0, 0.0, 0.5, 0.0, 0.0)
    ens = model.simulate_ensemble(p, model.StorageParams.constant(0, 0), np.full(21, 0.5), 0.0, 0.0, 20, 4000, seed=9)
    c = swing.SwingContract(1.0, 2, 1, (0, 10), 20, 1.0, 0.0)
    tc = nn.TrainConfig(max_epochs=50, seed=0)
    res = swing.price_backward(ens, c, swing.RegressionConfig(shape_hidden=5, train=tc), seed=0)
    o = swing.oracle_price_tiny(ens, c)
    lo = o.open_loop - 3 * o.open_loop_se
    hi = o.foresight + 3 * o.foresight_se
    return lo <= res.price <= hi, f"{lo:.4f} <= {res.price:.4f} <= {hi:.4f}"


SELFTEST_CHECKS = (("kernel", _check_kernel), ("cbo", _check_cbo), ("moments", _check_moments), ("bracketing", _check_bracket))


def run_selftest(checks=SELFTEST_CHECKS) -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in checks:
        try:
            ok, msg = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, msg = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), msg))
    return results


def cmd_selftest(out: Path) -> tuple[list[Path], bool]:
    results = run_selftest()
    lines = [f"{'PASS' if ok else 'FAIL'} {name}: {msg}" for name, ok, msg in results]
    for line in lines:
        print(line)
    path = out / "selftest.txt"
    path.write_text("\n".join(lines) + "\n")
    return [path], all(ok for _, ok, _ in results)


# ---------------------------------------------------------------- entry point

COMMANDS = ("ingest", "deseasonalize", "simulate", "calibrate-price", "calibrate-storage", "price-swing", "selftest")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pdvgas", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, required=name != "selftest")
        sp.add_argument("--out", type=Path, default=None, help=f"output directory (default ${OUTPUT_ENV} or ./pdvgas_out)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--workers", type=int, default=None, help="worker threads (default: CPU count)")
    return ap


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        base = args.config.resolve().parent if args.config else Path.cwd()
        out = args.out or Path(os.environ.get(OUTPUT_ENV) or cfg.get("output_dir") or "pdvgas_out")
        workers = args.workers or int(cfg.get("workers", os.cpu_count() or 1))
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        ok = True
        if args.command == "ingest":
            files = cmd_ingest(cfg, out, base)
        elif args.command == "deseasonalize":
            files = cmd_deseasonalize(cfg, out, base)
        elif args.command == "simulate":
            files = cmd_simulate(cfg, out, base, workers)
        elif args.command == "calibrate-price":
            files = cmd_calibrate_price(cfg, out, base)
        elif args.command == "calibrate-storage":
            files = cmd_calibrate_storage(cfg, out, base)
        elif args.command == "price-swing":
            files = cmd_price_swing(cfg, out, base, workers)
        else:
            files, ok = cmd_selftest(out)
        _write_manifest(out, args.command, cfg, cfg.get("seed"), files)
        log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
        return 0 if ok else 1
    except (model.SimulationError, nn.TrainingError, swing.PricingError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:  # config, series, contract, kernel and calibration input errors
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
