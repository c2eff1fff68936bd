"""Two-step calibration: price parameters by likelihood, then storage rates by weekly MSE."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernel
from .cbo import CboConfig, CboResult, cbo_optimize
from .model import STORAGE_CLAMP, ModelParams, StorageParams, integrate_storage
from .timeseries import DailySeries, WeeklySeries, weekly_block_means

PARAM_NAMES = ("alpha", "r", "lam", "v0", "v1", "v2")
DEFAULT_PRICE_BOUNDS = ((0.501, 1.499), (0.0, 10.0), (0.0, 10.0), (0.0, 10.0), (0.0, 10.0), (0.0, 10.0))
DEFAULT_GAMMA_BOUNDS = ((-100.0, 100.0), (-100.0, 100.0))


class CalibrationError(ValueError):
    pass


def _arr(x):
    return x.values if isinstance(x, (DailySeries, WeeklySeries)) else np.asarray(x, dtype=float)


@dataclass(frozen=True)
class PriceObjectiveInput:
    """Observed log-prices with the daily periodic and deseasonalized storage on the same grid."""

    log_prices: np.ndarray
    p_daily: np.ndarray
    x_daily: np.ndarray
    delta: float = 1e-2
    dt: float = 1.0 / 365.0

    def __post_init__(self):
        for name in ("log_prices", "p_daily", "x_daily"):
            object.__setattr__(self, name, _arr(getattr(self, name)))
        n = self.log_prices.size
        if n < 2 or self.p_daily.size != n or self.x_daily.size != n:
            raise CalibrationError("log_prices, p_daily and x_daily must be aligned (length >= 2)")

    @property
    def n_steps(self) -> int:
        return self.log_prices.size - 1

    def storage_level(self) -> np.ndarray:
        return self.x_daily + self.p_daily


def _sigma_path(theta: ModelParams, inp: PriceObjectiveInput) -> np.ndarray:
    """Volatility at t_0..t_{n-1} from observed prices and storage (literal O(n^2) kernel sum)."""
    s = inp.log_prices
    cfg = kernel.KernelConfig(theta.alpha, inp.delta, inp.dt)
    ma = kernel.moving_average_path(s[:-1], cfg)
    c = np.clip(inp.storage_level()[:-1], STORAGE_CLAMP, 1.0)
    return theta.v0 + theta.v1 / (c * (1 - c) + inp.delta) + theta.v2 * np.sqrt(np.abs(ma - s[0]) + inp.delta)


def _loglik_terms(sig, s, r, lam, dt):
    ds = np.diff(s, axis=-1)
    resid = ds - (r - 0.5 * sig**2 - lam * s[..., :-1]) * dt
    return -np.sum(np.log(np.abs(sig)), axis=-1) - np.sum(resid**2 / (2 * dt * sig**2), axis=-1)


def rescaled_log_likelihood(theta: ModelParams, inp: PriceObjectiveInput) -> float:
    """Gaussian transition log-likelihood of the Euler scheme without the (n/2) ln(2 pi dt) constant."""
    sig = _sigma_path(theta, inp)
    if np.any(sig == 0):
        raise CalibrationError("zero volatility: likelihood undefined")
    return float(_loglik_terms(sig, inp.log_prices, theta.r, theta.lam, inp.dt))


def full_log_likelihood(theta: ModelParams, inp: PriceObjectiveInput) -> float:
    return -0.5 * inp.n_steps * math.log(2 * math.pi * inp.dt) + rescaled_log_likelihood(theta, inp)


def log_likelihood_batch(thetas: np.ndarray, inp: PriceObjectiveInput) -> np.ndarray:
    """Rescaled log-likelihood for an (M, 6) batch; FFT kernel sums, -inf where sigma vanishes."""
    th = np.atleast_2d(np.asarray(thetas, dtype=float))
    s = inp.log_prices
    ma = kernel.moving_average_batch(s[:-1], th[:, 0], inp.delta, inp.dt)
    c = np.clip(inp.storage_level()[:-1], STORAGE_CLAMP, 1.0)
    store = 1.0 / (c * (1 - c) + inp.delta)
    sig = th[:, 3:4] + th[:, 4:5] * store + th[:, 5:6] * np.sqrt(np.abs(ma - s[0]) + inp.delta)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _loglik_terms(sig, s[None, :], th[:, 1:2], th[:, 2:3], inp.dt)
    out[np.any(sig == 0, axis=1)] = -np.inf
    return out


@dataclass
class PriceCalibration:
    theta_hat: ModelParams
    objective_value: float
    cbo: CboResult | None = field(default=None, repr=False)


def calibrate_price(inp: PriceObjectiveInput, cfg: CboConfig) -> PriceCalibration:
    """Maximize the rescaled log-likelihood over (alpha, r, lambda, V0, V1, V2) inside ``cfg.bounds``.

    The returned point is whichever of the final consensus and the best evaluated
    particle has the higher likelihood; its value is recomputed with the direct kernel sum.
    """
    if cfg.dim != 6:
        raise CalibrationError("price calibration needs 6 bounds (alpha, r, lambda, V0, V1, V2)")
    lo_a, hi_a = cfg.bounds[0]
    if lo_a <= 0.5 or hi_a >= 1.5:
        raise CalibrationError("alpha bounds must lie strictly inside (0.5, 1.5)")
    res = cbo_optimize(lambda th: log_likelihood_batch(th, inp), "maximize", cfg, vectorized=True)
    candidates = []
    for vec in (res.theta_hat, res.best_point):
        p = ModelParams.from_vector(vec, inp.delta, inp.dt)
        try:
            candidates.append((rescaled_log_likelihood(p, inp), p))
        except CalibrationError:
            continue
    if not candidates:
        raise CalibrationError("no admissible parameter found")
    value, best = max(candidates, key=lambda c: c[0])
    return PriceCalibration(best, value, res)


def storage_mse(
    gammas: StorageParams,
    alpha: float,
    delta: float,
    observed: PriceObjectiveInput,
    x_weekly_observed,
    x0: float,
) -> float:
    """Sum of squared differences between observed and block-averaged simulated weekly storage."""
    xw = _arr(x_weekly_observed)
    s = observed.log_prices
    r_level = kernel.relative_level_path(s, kernel.KernelConfig(alpha, delta, observed.dt))
    g1, g2 = gammas.per_step(s.size - 1)
    x_hat = integrate_storage(r_level, observed.p_daily, x0, g1, g2, observed.dt)
    fitted = weekly_block_means(x_hat)
    if fitted.size != xw.size:
        raise CalibrationError(f"{xw.size} weekly observations, {fitted.size} weekly blocks in the daily grid")
    return float(np.sum((xw - fitted) ** 2))


def window_count(n_steps: int, window_days: int | None) -> int:
    return 1 if window_days is None else -(-n_steps // window_days)


def block_assignment(n_steps: int, window_days: int | None) -> list[list[int]]:
    """Weekly blocks owned by each window.

    Block b covers days 7b..min(7b+6, n). Its last day depends on rates up to the
    transition before it, so the block belongs to the window of that transition.
    """
    k = window_count(n_steps, window_days)
    m = -(-(n_steps + 1) // 7)
    owners = [[] for _ in range(k)]
    for b in range(m):
        last = min(7 * b + 6, n_steps)
        step = max(last - 1, 0)
        w = 0 if window_days is None else min(step // window_days, k - 1)
        owners[w].append(b)
    return owners


@dataclass
class StorageCalibration:
    storage: StorageParams
    mse: float
    x_daily_fit: np.ndarray = field(repr=False)
    window_mse: list = field(default_factory=list)


def calibrate_storage(
    alpha_hat: float,
    delta: float,
    window_days: int | None,
    inp: PriceObjectiveInput,
    x_weekly,
    x0: float,
    cfg: CboConfig,
) -> StorageCalibration:
    """Window-by-window minimization of the weekly storage MSE.

    Windows are calibrated in order; each starts from the fitted storage at the end of
    the previous window. Window j uses the CBO seed ``cfg.seed + j``.
    """
    if cfg.dim != 2:
        raise CalibrationError("storage calibration needs 2 bounds (gamma1, gamma2)")
    xw = _arr(x_weekly)
    s = inp.log_prices
    n = s.size - 1
    dt = inp.dt
    m = -(-(n + 1) // 7)
    if xw.size != m:
        raise CalibrationError(f"expected {m} weekly observations for {n + 1} days, got {xw.size}")
    r_level = kernel.relative_level_path(s, kernel.KernelConfig(alpha_hat, delta, dt))
    p = inp.p_daily
    owners = block_assignment(n, window_days)
    k = len(owners)
    wd = n if window_days is None else window_days
    x_fit = np.full(n + 1, np.nan)
    x_fit[0] = x0
    g1s, g2s, wmse = np.zeros(k), np.zeros(k), []
    for j, blocks in enumerate(owners):
        if not blocks:
            raise CalibrationError(f"window {j} contains no weekly observation")
        start = j * wd
        end = min(7 * blocks[-1] + 6, n)
        seg_r, seg_p = r_level[start : end + 1], p[start : end + 1]

        def objective(th, start=start, end=end, blocks=blocks, seg_r=seg_r, seg_p=seg_p):
            nb = th.shape[0]
            steps = end - start
            seg = integrate_storage(seg_r, seg_p, x_fit[start], np.repeat(th[:, :1], steps, 1), np.repeat(th[:, 1:], steps, 1), dt)
            full = np.broadcast_to(x_fit[: end + 1], (nb, end + 1)).copy()
            full[:, start:] = seg
            err = np.zeros(nb)
            for b in blocks:
                lo, hi = 7 * b, min(7 * b + 6, n)
                err += (xw[b] - full[:, lo : hi + 1].mean(axis=1)) ** 2
            return err

        res = cbo_optimize(objective, "minimize", cfg.with_(seed=cfg.seed + j), vectorized=True, record_trace=False)
        cands = np.vstack([res.theta_hat, res.best_point])
        vals = objective(cands)
        g = cands[int(np.argmin(vals))]
        g1s[j], g2s[j] = g
        wmse.append(float(vals.min()))
        stop = min((j + 1) * wd, n)
        seg = integrate_storage(r_level[start : stop + 1], p[start : stop + 1], x_fit[start], np.full(stop - start, g[0]), np.full(stop - start, g[1]), dt)
        x_fit[start : stop + 1] = seg
    storage = StorageParams(g1s, g2s, window_days)
    total = storage_mse(storage, alpha_hat, delta, inp, xw, x0)
    return StorageCalibration(storage, total, x_fit, wmse)


@dataclass
class CalibrationReport:
    theta_hat: ModelParams
    objective_value: float
    storage_hat: StorageParams | None = None
    mse: float | None = None
    windows: list = field(default_factory=list)  # (start_date, end_date) per storage window
    cbo_settings: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "price": {
                "parameters": {k: getattr(self.theta_hat, k) for k in PARAM_NAMES},
                "delta": self.theta_hat.delta,
                "dt": self.theta_hat.dt,
                "log_likelihood": self.objective_value,
            },
            "cbo": self.cbo_settings,
        }
        if self.storage_hat is not None:
            out["storage"] = {
                "window_days": self.storage_hat.window_days,
                "rows": [
                    {"window": list(map(str, w)) if w else None, "gamma1": float(g1), "gamma2": float(g2)}
                    for w, g1, g2 in zip(self.windows or [None] * self.storage_hat.gamma1.size, self.storage_hat.gamma1, self.storage_hat.gamma2)
                ],
                "mse": self.mse,
            }
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))
