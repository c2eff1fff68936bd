"""Discrete put-type swing contract: payoff, penalty, backward regression pricing, and brute-force bounds."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn

log = logging.getLogger(__name__)


class ContractError(ValueError):
    pass


class PricingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SwingContract:
    """Dates are grid indices on the simulation grid; ``dt`` converts them to years for discounting."""

    strike: float
    global_rights: int
    local_cap: int
    exercise_dates: tuple
    maturity: int
    penalty_scale: float = 0.0
    discount_rate: float = 0.0
    dt: float = 1.0 / 365.0

    def __post_init__(self):
        object.__setattr__(self, "exercise_dates", tuple(int(d) for d in self.exercise_dates))
        dates = self.exercise_dates
        if self.strike <= 0:
            raise ContractError("strike must be positive")
        if self.penalty_scale < 0 or self.discount_rate < 0:
            raise ContractError("penalty scale and discount rate must be non-negative")
        if not dates or dates[0] < 0:
            raise ContractError("need at least one non-negative exercise date")
        if any(b <= a for a, b in zip(dates, dates[1:])) or dates[-1] >= self.maturity:
            raise ContractError("exercise dates must increase strictly and precede maturity")
        if not self.local_cap <= self.global_rights <= len(dates) * self.local_cap:
            raise ContractError(
                f"need local_cap <= global_rights <= (M+1)*local_cap, got {self.local_cap}, {self.global_rights}, M+1={len(dates)}"
            )

    @property
    def n_dates(self) -> int:
        return len(self.exercise_dates)

    @property
    def m(self) -> int:
        return len(self.exercise_dates) - 1

    def all_times(self) -> tuple:
        return self.exercise_dates + (self.maturity,)

    def discount(self, i: int) -> float:
        """Discount factor over [tau_i, tau_{i+1}], with tau_{M+1} the maturity."""
        t = self.all_times()
        return math.exp(-self.discount_rate * (t[i + 1] - t[i]) * self.dt)

    def to_dict(self) -> dict:
        return {
            "strike": self.strike,
            "global_rights": self.global_rights,
            "local_cap": self.local_cap,
            "exercise_dates": list(self.exercise_dates),
            "maturity": self.maturity,
            "penalty_scale": self.penalty_scale,
            "discount_rate": self.discount_rate,
            "dt": self.dt,
        }


def payoff(s, l: int, q: int, strike: float):
    """q (K - s)^+ when at least q rights remain, else 0."""
    return q * np.maximum(strike - np.asarray(s, dtype=float), 0.0) * (l >= q)


def penalty(s_t, q_t, scale: float, strike: float):
    return -scale * np.maximum(strike - np.asarray(s_t, dtype=float), 0.0) * q_t


def rights_update(l: int, q: int) -> int:
    return l - q if l >= q else l


@dataclass(frozen=True)
class RegressionConfig:
    shape_hidden: int = 10
    activation: str = "sigmoid"
    method: str = "lm"
    train: nn.TrainConfig = nn.TrainConfig()
    history_stride: int = 1  # use every k-th point of the price history as network input
    input_horizon: str = "current"  # "next": feed history up to tau_{i+1} (peeks at the regression target date)

    def __post_init__(self):
        if self.history_stride < 1:
            raise ValueError("history_stride must be >= 1")
        if self.input_horizon not in ("current", "next"):
            raise ValueError("input_horizon must be 'current' or 'next'")


@dataclass
class SwingResult:
    price: float
    std_error: float
    values: list = field(repr=False)  # values[i] is (D, L+1); index M+1 holds the terminal penalty
    bank: dict = field(repr=False)  # (i, j) -> nn.Network or constant float
    exercise_stats: dict = field(repr=False)  # (i, l) -> fractions over q = 0..local_cap
    training: dict = field(repr=False)  # (i, j) -> summary dict
    seed: int = 0
    decision_t0: int = 0

    def to_json(self) -> dict:
        return {
            "price": self.price,
            "std_error": self.std_error,
            "decision_t0": self.decision_t0,
            "seed": self.seed,
            "exercise_stats": {f"{i},{l}": v for (i, l), v in self.exercise_stats.items()},
            "training": {f"{i},{j}": v for (i, j), v in self.training.items()},
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))


def _inputs(prices: np.ndarray, tau: int, stride: int) -> np.ndarray:
    idx = np.arange(tau, -1, -stride)[::-1]
    return prices[:, idx]


def _fit_continuation(x, y, cfg: RegressionConfig, seed: int):
    """Train one regression network; returns (predictor output on x, model, summary)."""
    spread = float(np.max(y) - np.min(y))
    if y.size < 10 or spread <= 1e-12 * max(1.0, float(np.max(np.abs(y)))):
        c = float(np.mean(y))
        return np.full(y.size, c), c, {"constant": c}
    shape = nn.NetworkShape(x.shape[1], cfg.shape_hidden, 1, cfg.activation)
    net = nn.init(shape, seed)
    res = nn.train(net, x, y, cfg.method, replace(cfg.train, seed=seed))
    last = res.history[res.best_epoch]
    summary = {"best_epoch": res.best_epoch, "epochs": len(res.history) - 1, "train": last["train"], "val": last["val"], "test": last["test"]}
    return nn.forward(res.net, x)[:, 0], res.net, summary


def _best_q(values_by_q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise max over candidate q with ties resolved to the smallest q."""
    q = np.argmax(values_by_q, axis=1)  # argmax returns the first maximum
    return values_by_q[np.arange(values_by_q.shape[0]), q], q


def price_backward(prices, contract: SwingContract, cfg: RegressionConfig = RegressionConfig(), seed: int = 0) -> SwingResult:
    """Backward induction over exercise dates with one regression network per (date, remaining rights).

    ``prices`` is a (D, n+1) array of simulated prices (not log-prices) covering the maturity index.
    Continuation values at tau_i are regressed on the price history up to tau_i.
    """
    s = np.asarray(getattr(prices, "prices", prices), dtype=float)
    if s.ndim != 2 or s.shape[1] <= contract.maturity:
        raise ContractError(f"price array {s.shape} does not cover maturity index {contract.maturity}")
    if not np.all(np.isfinite(s[:, : contract.maturity + 1])):
        raise PricingError("non-finite simulated prices")
    d = s.shape[0]
    if d < 10:
        log.warning("only %d paths: regression is degenerate", d)
    big_l, cap, k = contract.global_rights, contract.local_cap, contract.strike
    times = contract.all_times()
    m = contract.m
    values: list = [None] * (m + 2)
    rights = np.arange(big_l + 1)
    values[m + 1] = penalty(s[:, contract.maturity][:, None], rights[None, :], contract.penalty_scale, k)
    bank, training, stats = {}, {}, {}
    for i in range(m, 0, -1):
        x = _inputs(s, times[i + 1] if cfg.input_horizon == "next" else times[i], cfg.history_stride)
        cont = np.empty((d, big_l + 1))
        for j in range(big_l + 1):
            target = values[i + 1][:, j]
            # identical targets (e.g. when rights are not scarce) share one fit; two differently
            # seeded fits of the same data would only add noise to the max over q
            twin = next((k for k in range(j) if np.array_equal(values[i + 1][:, k], target)), None)
            if twin is not None:
                cont[:, j], bank[(i, j)] = cont[:, twin], bank[(i, twin)]
                training[(i, j)] = {"shared_with": twin}
                continue
            net_seed = seed * 1000 + i * 10 + j
            try:
                cont[:, j], bank[(i, j)], training[(i, j)] = _fit_continuation(x, target, cfg, net_seed)
            except (nn.TrainingError, ValueError) as exc:
                raise PricingError(f"training failed for network ({i}, {j}): {exc}") from exc
        disc = contract.discount(i)
        s_i = s[:, times[i]]
        v = np.empty((d, big_l + 1))
        for l in range(big_l + 1):
            qs = range(min(l, cap) + 1)
            cand = np.stack([payoff(s_i, l, q, k) + disc * cont[:, l - q] for q in qs], axis=1)
            v[:, l], choice = _best_q(cand)
            stats[(i, l)] = [float(np.mean(choice == q)) for q in range(cap + 1)]
        if not np.all(np.isfinite(v)):
            raise PricingError(f"non-finite values at exercise date {i}")
        values[i] = v
    # first date: the information set is trivial, so the continuation is a plain average
    disc0 = contract.discount(0)
    s0 = s[:, times[0]]
    per_q = []
    for q in range(min(big_l, cap) + 1):
        per_q.append(payoff(s0, big_l, q, k) + disc0 * values[1][:, big_l - q])
    per_q = np.stack(per_q, axis=1)
    means = per_q.mean(axis=0)
    q0 = int(np.argmax(means))
    price = float(means[q0])
    se = float(per_q[:, q0].std(ddof=1) / math.sqrt(d)) if d > 1 else float("nan")
    stats[(0, big_l)] = [1.0 if q == q0 else 0.0 for q in range(cap + 1)]
    values[0] = per_q
    if not math.isfinite(price):
        raise PricingError("non-finite price")
    return SwingResult(price, se, values, bank, stats, training, seed, q0)


@dataclass(frozen=True)
class OracleBounds:
    open_loop: float
    open_loop_se: float
    foresight: float
    foresight_se: float
    best_schedule: tuple


def _schedules(contract: SwingContract):
    for qs in itertools.product(range(contract.local_cap + 1), repeat=contract.n_dates):
        if sum(qs) <= contract.global_rights:
            yield qs


def oracle_price_tiny(prices, contract: SwingContract, max_dates: int = 3, max_rights: int = 2) -> OracleBounds:
    """Exact open-loop optimum and perfect-foresight value on the empirical path measure.

    Open-loop: the best single deterministic schedule (q_0..q_M) for all paths. Perfect foresight:
    each path picks its own best schedule. Schedules whose attempts would exceed the remaining rights
    are equivalent to ones with those attempts set to 0, so only feasible schedules are enumerated.
    """
    if contract.n_dates > max_dates or contract.global_rights > max_rights:
        raise ContractError(f"instance too large for enumeration (M+1={contract.n_dates}, L={contract.global_rights})")
    s = np.asarray(getattr(prices, "prices", prices), dtype=float)
    k = contract.strike
    times = contract.all_times()
    cum = np.cumprod([1.0] + [contract.discount(i) for i in range(contract.n_dates)])
    intrinsic = np.maximum(k - s[:, list(contract.exercise_dates)], 0.0)
    term = np.maximum(k - s[:, times[-1]], 0.0)
    scheds = list(_schedules(contract))
    q = np.array(scheds, dtype=float)  # (S, M+1)
    left = contract.global_rights - q.sum(axis=1)
    vals = intrinsic @ (q * cum[:-1]).T - contract.penalty_scale * cum[-1] * term[:, None] * left[None, :]
    means = vals.mean(axis=0)
    b = int(np.argmax(means))
    fs = vals.max(axis=1)
    n = s.shape[0]
    sd = lambda a: float(a.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return OracleBounds(float(means[b]), sd(vals[:, b]), float(fs.mean()), sd(fs), scheds[b])


def write_runs_csv(path, prices: list[float]) -> dict:
    """Per-run prices plus a summary row; returns the summary (mean, sample variance, min, max)."""
    arr = np.asarray(prices, dtype=float)
    summary = {
        "mean": float(arr.mean()),
        "variance": float(arr.var(ddof=1)) if arr.size > 1 else 0.0,
        "min": float(arr.min()),
        "max": float(arr.max()),
    }
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "price"])
        for r, p in enumerate(arr, start=1):
            w.writerow([r, repr(float(p))])
        for key, val in summary.items():
            w.writerow([key, repr(val)])
    return summary
