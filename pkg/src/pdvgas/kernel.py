"""Power-law weighted moving average of a log-price path and the relative level functional.

All discrete sums use left endpoints over m = 0..i, including the m = i term whose
weight is finite because of the regularizer ``delta``.  Evaluating every grid index
of a length-N path costs O(N^2) with the direct sum; ``*_path`` helpers also offer an
FFT convolution (the weight depends on t_i - t_m only) for calibration loops.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    alpha: float
    delta: float = 1e-2
    dt: float = 1.0 / 365.0

    def __post_init__(self):
        if not 0.5 < self.alpha < 1.5:
            raise KernelError(f"alpha must lie in (0.5, 1.5), got {self.alpha}")
        if self.delta <= 0 or self.dt <= 0:
            raise KernelError("delta and dt must be positive")


def _weights(i: int, cfg: KernelConfig) -> np.ndarray:
    """Kernel weights for m = 0..i at evaluation time t_i, including the (1 - alpha) dt factor."""
    t = np.arange(i + 1) * cfg.dt
    ti = i * cfg.dt
    return (1.0 - cfg.alpha) * cfg.dt / ((ti + cfg.delta) ** (1.0 - cfg.alpha) * (ti - t + cfg.delta) ** cfg.alpha)


def _check_index(history, i):
    if not 0 <= i < len(history):
        raise KernelError(f"index {i} out of range for history of length {len(history)}")


def moving_average(history, i: int, cfg: KernelConfig) -> float:
    h = np.asarray(history, dtype=float)
    _check_index(h, i)
    out = float(_weights(i, cfg) @ h[: i + 1])
    if cfg.alpha == 1.0:
        out += h[i]
    return out


def relative_level(history, i: int, cfg: KernelConfig) -> float:
    h = np.asarray(history, dtype=float)
    _check_index(h, i)
    return float(_weights(i, cfg) @ (h[: i + 1] - h[i]))


def sign_split(r: float) -> tuple[float, float]:
    """Non-negative and non-positive parts; r = 0 goes to the plus branch."""
    if r >= 0:
        return r, 0.0
    return 0.0, -r


def kernel_mass(i: int, cfg: KernelConfig) -> float:
    """Discrete kernel mass sum_m w(i, m); the continuous analogue is 1 - (delta/(t+delta))^(1-alpha)."""
    return float(_weights(i, cfg).sum())


def weight_matrix(n: int, cfg: KernelConfig) -> np.ndarray:
    """Lower-triangular (n, n) matrix W with W[i, m] the weight of S(t_m) at time t_i."""
    i = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    lag = np.where(m <= i, (i - m) * cfg.dt, 0.0)
    ti = i * cfg.dt
    w = (1.0 - cfg.alpha) * cfg.dt / ((ti + cfg.delta) ** (1.0 - cfg.alpha) * (lag + cfg.delta) ** cfg.alpha)
    return np.where(m <= i, w, 0.0)


def _conv_sums(paths: np.ndarray, alpha: np.ndarray, delta: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Return (sum_m S_m c_{i-m}, sum_m c_{i-m}) for c_k = (k dt + delta)^-alpha.

    ``paths`` has shape (..., n); ``alpha`` broadcasts against the leading axes.
    """
    n = paths.shape[-1]
    lag = np.arange(n) * dt + delta
    a = np.asarray(alpha, dtype=float)[..., None]
    c = lag ** (-a)
    size = 1 << int(np.ceil(np.log2(2 * n - 1)))
    conv = np.fft.irfft(np.fft.rfft(paths, size) * np.fft.rfft(c, size), size)[..., :n]
    return conv, np.cumsum(c, axis=-1)


def moving_average_path(history, cfg: KernelConfig, method: str = "direct") -> np.ndarray:
    """Moving average at every grid index; ``history`` may be (n,) or (n_paths, n)."""
    h = np.asarray(history, dtype=float)
    n = h.shape[-1]
    ti = np.arange(n) * cfg.dt
    if method == "direct":
        out = h @ weight_matrix(n, cfg).T
    elif method == "fft":
        conv, _ = _conv_sums(h, cfg.alpha, cfg.delta, cfg.dt)
        out = (1.0 - cfg.alpha) * cfg.dt * (ti + cfg.delta) ** (cfg.alpha - 1.0) * conv
    else:
        raise KernelError(f"unknown method {method!r}")
    if cfg.alpha == 1.0:
        out = out + h
    return out


def relative_level_path(history, cfg: KernelConfig, method: str = "direct") -> np.ndarray:
    h = np.asarray(history, dtype=float)
    n = h.shape[-1]
    ti = np.arange(n) * cfg.dt
    if method == "direct":
        w = weight_matrix(n, cfg)
        # differences first, so a constant path gives exactly zero
        return np.einsum("ij,...ij->...i", w, h[..., None, :] - h[..., :, None])
    if method == "fft":
        conv, mass = _conv_sums(h, cfg.alpha, cfg.delta, cfg.dt)
        return (1.0 - cfg.alpha) * cfg.dt * (ti + cfg.delta) ** (cfg.alpha - 1.0) * (conv - h * mass)
    raise KernelError(f"unknown method {method!r}")


def moving_average_batch(history: np.ndarray, alphas: np.ndarray, delta: float, dt: float) -> np.ndarray:
    """FFT moving average of one path for many alphas at once; returns (len(alphas), n)."""
    h = np.asarray(history, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    n = h.size
    ti = np.arange(n) * dt
    conv, _ = _conv_sums(h[None, :], alphas, delta, dt)
    a = alphas[:, None]
    out = (1.0 - a) * dt * (ti + delta) ** (a - 1.0) * conv
    return out + np.where(a == 1.0, h[None, :], 0.0)


def quadrature_oracle(
    path_fn: Callable[[float], float],
    t: float,
    cfg: KernelConfig,
    tol: float = 1e-10,
    quantity: str = "moving_average",
    limit: int = 500,
) -> float:
    """Adaptive-quadrature value of the continuous moving average or relative level at time t.

    Independent of the discrete sums; used as a test oracle.
    """
    if tol <= 0:
        raise KernelError("tol must be positive")
    a, d = cfg.alpha, cfg.delta
    st = path_fn(t)
    if quantity == "moving_average":
        f = lambda u: path_fn(u) / ((t + d) ** (1 - a) * (t - u + d) ** a)
        extra = st if a == 1.0 else 0.0
    elif quantity == "relative_level":
        f = lambda u: (path_fn(u) - st) / ((t + d) ** (1 - a) * (t - u + d) ** a)
        extra = 0.0
    else:
        raise KernelError(f"unknown quantity {quantity!r}")
    if t == 0 or a == 1.0:
        return extra
    # the integrand varies on the scale delta near u = t
    pts = [p for p in (t - 10 * d, t - d, t - 0.1 * d) if 0 < p < t]
    val, err, info = integrate.quad(f, 0.0, t, epsabs=tol / 10, epsrel=0.0, limit=limit, points=pts or None, full_output=1)[:3]
    if err > tol / abs(1 - a) or info.get("last", 0) >= limit:
        raise KernelError(f"quadrature did not converge (estimated error {err:.2e})")
    return (1 - a) * val + extra
