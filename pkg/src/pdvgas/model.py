"""Price-volatility-storage system and its forward Euler-Maruyama simulation."""

from __future__ import annotations

import datetime as _dt
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .kernel import KernelConfig, _weights, relative_level_path
from .timeseries import DailySeries

STORAGE_CLAMP = 1e-6
CHUNK_PATHS = 1024


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelParams:
    alpha: float
    r: float
    lam: float
    v0: float
    v1: float
    v2: float
    delta: float = 1e-2
    dt: float = 1.0 / 365.0

    def __post_init__(self):
        if not 0.5 < self.alpha < 1.5:
            raise ValueError(f"alpha must lie in (0.5, 1.5), got {self.alpha}")
        if self.lam < 0 or min(self.v0, self.v1, self.v2) < 0:
            raise ValueError("lambda and volatility components must be non-negative")
        if self.delta <= 0 or self.dt <= 0:
            raise ValueError("delta and dt must be positive")

    @property
    def kernel(self) -> KernelConfig:
        return KernelConfig(self.alpha, self.delta, self.dt)

    def as_vector(self) -> np.ndarray:
        return np.array([self.alpha, self.r, self.lam, self.v0, self.v1, self.v2])

    @classmethod
    def from_vector(cls, theta, delta=1e-2, dt=1.0 / 365.0) -> "ModelParams":
        a, r, lam, v0, v1, v2 = (float(x) for x in theta)
        return cls(a, r, lam, v0, v1, v2, delta, dt)

    def to_dict(self) -> dict:
        return asdict(self)


# Parameter set of the January-October 2019 window, used for the one-month swing example.
PARAMS_2019 = ModelParams(alpha=1.4561, r=5.2536, lam=4.2638, v0=2.1268, v1=0.1361, v2=4.0786)


@dataclass(frozen=True)
class StorageParams:
    gamma1: np.ndarray
    gamma2: np.ndarray
    window_days: int | None = None  # None: one pair over the whole horizon

    def __post_init__(self):
        g1 = np.atleast_1d(np.asarray(self.gamma1, dtype=float))
        g2 = np.atleast_1d(np.asarray(self.gamma2, dtype=float))
        object.__setattr__(self, "gamma1", g1)
        object.__setattr__(self, "gamma2", g2)
        if g1.shape != g2.shape or g1.ndim != 1:
            raise ValueError("gamma vectors must be 1-D and of equal length")
        if self.window_days is None and g1.size != 1:
            raise ValueError("full-horizon storage params take a single (gamma1, gamma2) pair")
        if self.window_days is not None and self.window_days < 1:
            raise ValueError("window_days must be >= 1")

    @classmethod
    def constant(cls, gamma1: float, gamma2: float) -> "StorageParams":
        return cls(np.array([gamma1]), np.array([gamma2]), None)

    def per_step(self, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
        """(gamma1, gamma2) applied on each transition t_i -> t_{i+1}, i = 0..n_steps-1."""
        if self.window_days is None:
            idx = np.zeros(n_steps, dtype=int)
        else:
            idx = np.arange(n_steps) // self.window_days
            if n_steps and idx[-1] >= self.gamma1.size:
                raise ValueError(f"{self.gamma1.size} windows of {self.window_days} days cannot cover {n_steps} steps")
        return self.gamma1[idx], self.gamma2[idx]

    def to_dict(self) -> dict:
        return {"gamma1": self.gamma1.tolist(), "gamma2": self.gamma2.tolist(), "window_days": self.window_days}


@dataclass
class SimState:
    log_price: float
    x: float
    history: list = field(default_factory=list)
    step_index: int = 0

    @classmethod
    def initial(cls, log_price: float, x: float) -> "SimState":
        return cls(log_price, x, [log_price], 0)


@dataclass
class PathEnsemble:
    log_prices: np.ndarray  # (D, N+1)
    vols: np.ndarray  # (D, N)
    storage_x: np.ndarray  # (D, N+1)
    seed: int
    params: ModelParams | None = None
    storage: StorageParams | None = None

    @property
    def n_paths(self) -> int:
        return self.log_prices.shape[0]

    @property
    def n_steps(self) -> int:
        return self.log_prices.shape[1] - 1

    @property
    def prices(self) -> np.ndarray:
        return np.exp(self.log_prices)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.savez(d / "ensemble.npz", log_prices=self.log_prices, vols=self.vols, storage_x=self.storage_x)
        meta = {
            "seed": self.seed,
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
            "params": self.params.to_dict() if self.params else None,
            "storage": self.storage.to_dict() if self.storage else None,
        }
        (d / "ensemble.json").write_text(json.dumps(meta, indent=2))

    def save_csv(self, path, which: str = "log_prices") -> None:
        np.savetxt(path, getattr(self, which), delimiter=",", fmt="%.17g")

    @classmethod
    def load(cls, directory) -> "PathEnsemble":
        d = Path(directory)
        arrs = np.load(d / "ensemble.npz")
        meta = json.loads((d / "ensemble.json").read_text())
        params = ModelParams(**meta["params"]) if meta["params"] else None
        st = meta["storage"]
        storage = StorageParams(st["gamma1"], st["gamma2"], st["window_days"]) if st else None
        return cls(arrs["log_prices"], arrs["vols"], arrs["storage_x"], meta["seed"], params, storage)


def _vol_from_parts(ma, s0, xp, params: ModelParams):
    c = np.clip(xp, STORAGE_CLAMP, 1.0)
    return params.v0 + params.v1 / (c * (1.0 - c) + params.delta) + params.v2 * np.sqrt(np.abs(ma - s0) + params.delta)


def volatility(state: SimState, p_daily: float, params: ModelParams) -> float:
    """Volatility at the current grid point from the history up to and including it."""
    i = state.step_index
    h = np.asarray(state.history, dtype=float)
    w = _weights(i, params.kernel)
    ma = float(w @ h[: i + 1]) + (h[i] if params.alpha == 1.0 else 0.0)
    sig = float(_vol_from_parts(ma, h[0], state.x + p_daily, params))
    if not math.isfinite(sig):
        raise SimulationError(f"non-finite volatility at step {i}")
    return sig


def euler_step(state: SimState, p_daily: float, params: ModelParams, storage: StorageParams, z: float) -> SimState:
    i = state.step_index
    h = np.asarray(state.history, dtype=float)
    sig = volatility(state, p_daily, params)
    w = _weights(i, params.kernel)
    r_level = float(w @ (h[: i + 1] - h[i]))
    rp, rm = (r_level, 0.0) if r_level >= 0 else (0.0, -r_level)
    g1, g2 = storage.per_step(i + 1)
    g1, g2 = g1[i], g2[i]
    dt = params.dt
    s = state.log_price
    s_new = s + (params.r - 0.5 * sig**2 - params.lam * s) * dt + sig * math.sqrt(dt) * z
    xp = state.x + p_daily
    x_new = state.x + dt * (g1 * rp * (1.0 - xp) - g2 * rm * xp)
    if not (math.isfinite(s_new) and math.isfinite(x_new)):
        raise SimulationError(f"non-finite state after step {i}")
    return SimState(s_new, x_new, state.history + [s_new], i + 1)


def path_normals(seed: int, path_index: int, n: int) -> np.ndarray:
    """Standard normals for one path from a substream keyed by (seed, path_index)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(path_index,)))
    return rng.standard_normal(n)


def _simulate_block(params, g1s, g2s, p, s0, x0, z, sigma_override=None):
    d, n = z.shape
    dt = params.dt
    sqdt = math.sqrt(dt)
    logp = np.empty((d, n + 1))
    xs = np.empty((d, n + 1))
    vols = np.empty((d, n))
    logp[:, 0] = s0
    xs[:, 0] = x0
    cfg = params.kernel
    for i in range(n):
        w = _weights(i, cfg)
        raw = logp[:, : i + 1] @ w
        cur = logp[:, i]
        ma = raw + cur if params.alpha == 1.0 else raw
        r_level = (logp[:, : i + 1] - cur[:, None]) @ w
        xp = xs[:, i] + p[i]
        if sigma_override is None:
            sig = _vol_from_parts(ma, s0, xp, params)
        else:
            sig = np.full(d, float(sigma_override))
        vols[:, i] = sig
        rp = np.where(r_level >= 0, r_level, 0.0)
        rm = np.where(r_level < 0, -r_level, 0.0)
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported just below
            logp[:, i + 1] = cur + (params.r - 0.5 * sig**2 - params.lam * cur) * dt + sig * sqdt * z[:, i]
            xs[:, i + 1] = xs[:, i] + dt * (g1s[i] * rp * (1.0 - xp) - g2s[i] * rm * xp)
        bad = ~(np.isfinite(logp[:, i + 1]) & np.isfinite(xs[:, i + 1]))
        if bad.any():
            raise SimulationError(f"non-finite state at step {i + 1} in block path {int(np.argmax(bad))}")
    return logp, vols, xs


def simulate_ensemble(
    params: ModelParams,
    storage: StorageParams,
    p_daily,
    s0: float,
    x0: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    workers: int = 1,
    sigma_override: float | None = None,
) -> PathEnsemble:
    """Simulate ``n_paths`` paths of (log-price, volatility, deseasonalized storage).

    ``s0`` is the initial log-price and ``p_daily`` the periodic storage on the daily grid
    (length >= n_steps + 1). Path k draws its normals from the substream (seed, k), and paths
    are processed in fixed-size blocks, so output does not depend on ``workers``.
    ``sigma_override`` freezes the volatility at a constant (used for closed-form checks).
    """
    p = p_daily.values if isinstance(p_daily, DailySeries) else np.asarray(p_daily, dtype=float)
    if p.size < n_steps + 1:
        raise ValueError(f"periodic storage has {p.size} days, need {n_steps + 1}")
    if n_paths < 1 or n_steps < 0:
        raise ValueError("n_paths must be >= 1 and n_steps >= 0")
    g1s, g2s = storage.per_step(n_steps)
    blocks = [(lo, min(lo + CHUNK_PATHS, n_paths)) for lo in range(0, n_paths, CHUNK_PATHS)]

    def run(block):
        lo, hi = block
        z = np.stack([path_normals(seed, k, n_steps) for k in range(lo, hi)]) if n_steps else np.zeros((hi - lo, 0))
        try:
            return _simulate_block(params, g1s, g2s, p, s0, x0, z, sigma_override)
        except SimulationError as exc:
            raise SimulationError(f"paths {lo}..{hi - 1}: {exc}") from exc

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]
    logp = np.concatenate([r[0] for r in results])
    vols = np.concatenate([r[1] for r in results])
    xs = np.concatenate([r[2] for r in results])
    return PathEnsemble(logp, vols, xs, seed, params, storage)


def integrate_storage(r_level: np.ndarray, p: np.ndarray, x0, g1_steps: np.ndarray, g2_steps: np.ndarray, dt: float) -> np.ndarray:
    """Storage recursion driven by a fixed relative-level path.

    ``r_level`` and ``p`` have length n+1; ``g*_steps`` have shape (..., n) so a batch of
    gamma candidates is integrated at once. Returns shape (..., n+1).
    """
    g1 = np.asarray(g1_steps, dtype=float)
    g2 = np.asarray(g2_steps, dtype=float)
    n = r_level.size - 1
    rp = np.where(r_level >= 0, r_level, 0.0)
    rm = np.where(r_level < 0, -r_level, 0.0)
    out = np.empty(g1.shape[:-1] + (n + 1,))
    out[..., 0] = x0
    x = out[..., 0]
    for i in range(n):
        xp = x + p[i]
        x = x + dt * (g1[..., i] * rp[i] * (1.0 - xp) - g2[..., i] * rm[i] * xp)
        out[..., i + 1] = x
    return out


def simulate_storage_given_prices(
    observed_log_prices,
    storage: StorageParams,
    p_daily,
    x0: float,
    alpha: float,
    delta: float = 1e-2,
    dt: float = 1.0 / 365.0,
) -> DailySeries:
    """Deterministic storage path driven by the relative level of an observed log-price path."""
    s = observed_log_prices.values if isinstance(observed_log_prices, DailySeries) else np.asarray(observed_log_prices, float)
    p = p_daily.values if isinstance(p_daily, DailySeries) else np.asarray(p_daily, float)
    if s.size != p.size:
        raise ValueError(f"length mismatch: {s.size} prices vs {p.size} periodic values")
    r_level = relative_level_path(s, KernelConfig(alpha, delta, dt))
    g1, g2 = storage.per_step(s.size - 1)
    x = integrate_storage(r_level, p, x0, g1, g2, dt)
    if not np.all(np.isfinite(x)):
        raise SimulationError("non-finite storage path")
    start = observed_log_prices.start_date if isinstance(observed_log_prices, DailySeries) else _dt.date(1970, 1, 1)
    return DailySeries(start, x, "storage_daily")
