"""Consensus-based optimization (derivative-free particle swarm with Laplace-weighted consensus)."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CboConfig:
    """Particle dynamics parameters.

    ``a`` is the drift toward the consensus, ``b`` the Laplace weight exponent,
    ``sigma`` the (anisotropic) diffusion, ``dt`` the optimizer time step.
    ``bounds`` is a sequence of (low, high) pairs, one per dimension.
    """

    a: float
    b: float
    sigma: float
    n_particles: int
    n_steps: int
    bounds: tuple
    dt: float = 0.01
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple((float(lo), float(hi)) for lo, hi in self.bounds))
        if min(self.a, self.b, self.dt) <= 0 or self.sigma < 0:
            raise ValueError("a, b and dt must be positive and sigma non-negative")
        if self.n_particles < 2 or self.n_steps < 0:
            raise ValueError("need at least 2 particles and a non-negative step count")
        for lo, hi in self.bounds:
            if not lo <= hi:
                raise ValueError(f"invalid bounds ({lo}, {hi})")

    @property
    def dim(self) -> int:
        return len(self.bounds)

    def with_(self, **kw) -> "CboConfig":
        return replace(self, **kw)


STABLE_DRIFT_STEP = 0.8  # a * dt; explicit updates overshoot the consensus once a * dt > 1


def price_preset(bounds, seed=0, dt=None) -> CboConfig:
    """Price-calibration settings a=1200, b=400, sigma=20, M=100, N=3000; dt defaults to 0.8 / a."""
    dt = STABLE_DRIFT_STEP / 1200.0 if dt is None else dt
    return CboConfig(1200.0, 400.0, 20.0, 100, 3000, tuple(bounds), dt, seed)


def storage_preset(bounds, seed=0, dt=None) -> CboConfig:
    """Storage-calibration settings a=1500, b=1500, sigma=30, M=500, N=4000; dt defaults to 0.8 / a."""
    dt = STABLE_DRIFT_STEP / 1500.0 if dt is None else dt
    return CboConfig(1500.0, 1500.0, 30.0, 500, 4000, tuple(bounds), dt, seed)


@dataclass
class CboResult:
    theta_hat: np.ndarray
    best_value: float
    best_point: np.ndarray
    trace: list = field(default_factory=list)  # (step, best value so far, consensus)

    def save_trace(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            d = self.theta_hat.size
            w.writerow(["step", "best_value"] + [f"consensus_{j}" for j in range(d)])
            for step, best, cons in self.trace:
                w.writerow([step, repr(best)] + [repr(float(c)) for c in cons])


def weighted_consensus(positions, values, b: float, mode: str = "maximize") -> np.ndarray:
    """Laplace-weighted average of particle positions, exp(b * s * (l - l_best)) with s = +1/-1."""
    x = np.asarray(positions, dtype=float)
    v = np.asarray(values, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    s = _sign(mode)
    z = b * s * v
    z = z - z.max()
    w = np.exp(z)
    total = w.sum()
    if not total > 0:
        raise FloatingPointError("consensus weights vanished")
    return (w @ x) / total


def _sign(mode: str) -> float:
    if mode == "maximize":
        return 1.0
    if mode == "minimize":
        return -1.0
    raise ValueError(f"mode must be 'maximize' or 'minimize', got {mode!r}")


def _evaluate(objective, theta, vectorized, workers):
    if vectorized:
        vals = np.asarray(objective(theta), dtype=float)
    elif workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            vals = np.fromiter(pool.map(objective, theta), float, len(theta))
    else:
        vals = np.array([objective(t) for t in theta], dtype=float)
    return vals


def cbo_optimize(
    objective: Callable,
    mode: str,
    cfg: CboConfig,
    vectorized: bool = False,
    workers: int = 1,
    record_trace: bool = True,
) -> CboResult:
    """Run the particle dynamics and return the final consensus plus the best point ever evaluated.

    With ``vectorized=True`` the objective receives the whole (M, d) swarm and
    returns M values. Non-finite objective values are replaced by the worst
    finite value of the step (or excluded entirely if none is finite).
    """
    s = _sign(mode)
    rng = np.random.default_rng(cfg.seed)
    lo = np.array([b[0] for b in cfg.bounds])
    hi = np.array([b[1] for b in cfg.bounds])
    m, d = cfg.n_particles, cfg.dim
    theta = lo + (hi - lo) * rng.random((m, d))
    sqdt = np.sqrt(cfg.dt)
    best_val = -np.inf if s > 0 else np.inf
    best_pt = theta[0].copy()
    trace = []
    consensus = theta.mean(axis=0)
    for step in range(cfg.n_steps + 1):
        vals = _evaluate(objective, theta, vectorized, workers)
        bad = ~np.isfinite(vals)
        if bad.all():
            log.warning("step %d: every objective value is non-finite", step)
            vals = np.zeros(m)
        else:
            ok = np.flatnonzero(~bad)
            k = ok[int(np.argmax(s * vals[ok]))]
            if s * vals[k] > s * best_val:
                best_val, best_pt = float(vals[k]), theta[k].copy()
            if bad.any():
                log.warning("step %d: %d non-finite objective values set to worst", step, int(bad.sum()))
                vals = np.where(bad, vals[ok].min() if s > 0 else vals[ok].max(), vals)
        consensus = weighted_consensus(theta, vals, cfg.b, mode)
        if record_trace:
            trace.append((step, best_val, consensus.copy()))
        if step == cfg.n_steps:
            break
        diff = consensus - theta
        z = rng.standard_normal((m, d))
        theta = theta + cfg.a * diff * cfg.dt + cfg.sigma * diff * sqdt * z
        theta = np.clip(theta, lo, hi)
    return CboResult(consensus, best_val, best_pt, trace)
