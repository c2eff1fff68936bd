"""One-hidden-layer regression networks with Levenberg-Marquardt and scaled conjugate gradient training."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkShape:
    d0: int
    m1: int = 10
    d1: int = 1
    activation: str = "sigmoid"

    def __post_init__(self):
        if min(self.d0, self.m1, self.d1) < 1:
            raise ValueError("network dimensions must be >= 1")
        if self.activation not in ("sigmoid", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return self.m1 * (self.d0 + 1) + (self.m1 + 1) * self.d1


@dataclass
class Network:
    shape: NetworkShape
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    x_mean: np.ndarray = None
    x_scale: np.ndarray = None

    def __post_init__(self):
        if self.x_mean is None:
            self.x_mean = np.zeros(self.shape.d0)
        if self.x_scale is None:
            self.x_scale = np.ones(self.shape.d0)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    def with_params(self, theta: np.ndarray) -> "Network":
        s = self.shape
        i = 0
        w1 = theta[i : i + s.m1 * s.d0].reshape(s.m1, s.d0)
        i += s.m1 * s.d0
        b1 = theta[i : i + s.m1]
        i += s.m1
        w2 = theta[i : i + s.d1 * s.m1].reshape(s.d1, s.m1)
        i += s.d1 * s.m1
        b2 = theta[i : i + s.d1]
        return replace(self, w1=w1.copy(), b1=b1.copy(), w2=w2.copy(), b2=b2.copy())

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)

    def to_json(self) -> dict:
        return {
            "d0": self.shape.d0,
            "m1": self.shape.m1,
            "d1": self.shape.d1,
            "activation": self.shape.activation,
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "params": self.params.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Network":
        shape = NetworkShape(obj["d0"], obj["m1"], obj["d1"], obj["activation"])
        net = init(shape, 0)
        net = net.with_params(np.asarray(obj["params"], dtype=float))
        net.x_mean = np.asarray(obj["x_mean"], dtype=float)
        net.x_scale = np.asarray(obj["x_scale"], dtype=float)
        return net

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "Network":
        return cls.from_json(json.loads(Path(path).read_text()))


def init(shape: NetworkShape, seed: int) -> Network:
    """Glorot-uniform weights on [-s, s], s = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    s1 = math.sqrt(6.0 / (shape.d0 + shape.m1))
    s2 = math.sqrt(6.0 / (shape.m1 + shape.d1))
    return Network(
        shape,
        rng.uniform(-s1, s1, (shape.m1, shape.d0)),
        np.zeros(shape.m1),
        rng.uniform(-s2, s2, (shape.d1, shape.m1)),
        np.zeros(shape.d1),
    )


def _act(z, kind):
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return np.maximum(z, 0.0)


def _dact(z, a, kind):
    if kind == "sigmoid":
        return a * (1.0 - a)
    return (z > 0).astype(float)


def _hidden(net: Network, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = (x - net.x_mean) / net.x_scale
    z = u @ net.w1.T + net.b1
    return u, z, _act(z, net.shape.activation)


def forward(net: Network, x) -> np.ndarray:
    """Network output; a single input vector gives a (d1,) array, a batch gives (n, d1)."""
    single = np.ndim(x) == 1
    _, _, h = _hidden(net, x)
    out = h @ net.w2.T + net.b2
    return out[0] if single else out


def jacobian(net: Network, x) -> np.ndarray:
    """Derivative of the (scalar) output with respect to every parameter, shape (n, n_params).

    Parameter order is w1 (row-major), b1, w2, b2. ReLU kinks get derivative 0.
    """
    if net.shape.d1 != 1:
        raise ValueError("jacobian is implemented for scalar-output networks")
    single = np.ndim(x) == 1
    u, z, h = _hidden(net, x)
    g = _dact(z, h, net.shape.activation) * net.w2[0]  # d out / d z, shape (n, m1)
    n = u.shape[0]
    jw1 = (g[:, :, None] * u[:, None, :]).reshape(n, -1)
    jac = np.hstack([jw1, g, h, np.ones((n, 1))])
    return jac[0] if single else jac


def _gradient(net: Network, x, y):
    """Gradient of the mean squared error via backpropagation, plus the MSE."""
    u, z, h = _hidden(net, x)
    out = (h @ net.w2.T + net.b2)[:, 0]
    e = out - y
    n = y.size
    gout = 2.0 * e / n
    gz = gout[:, None] * net.w2[0] * _dact(z, h, net.shape.activation)
    grad = np.concatenate([(gz.T @ u).ravel(), gz.sum(0), gout @ h, [gout.sum()]])
    return grad, float(np.mean(e**2))


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    lm_lambda0: float = 1e-3
    lm_up: float = 10.0
    lm_down: float = 0.1
    lm_max: float = 1e10
    early_stop_patience: int = 20
    seed: int = 0
    goal_mse: float = 0.0
    standardize: bool = True

    def __post_init__(self):
        if not (0 <= self.val_fraction < 1 and 0 <= self.test_fraction < 1 and self.val_fraction + self.test_fraction < 1):
            raise ValueError("split fractions must be in [0, 1) and sum below 1")
        if not (self.lm_up > 1 and 0 < self.lm_down < 1):
            raise ValueError("LM damping multipliers must satisfy up > 1 > down > 0")


@dataclass
class TrainResult:
    net: Network
    history: list = field(repr=False)  # dicts: epoch, train, val, test, best_val
    best_epoch: int
    split: tuple = field(repr=False)  # (train_idx, val_idx, test_idx)

    def save_history(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["epoch", "train", "val", "test", "best_val"])
            w.writeheader()
            for row in self.history:
                w.writerow({k: row[k] for k in w.fieldnames})


def split_indices(n: int, val_fraction: float, test_fraction: float, seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(val_fraction * n))
    n_test = int(round(test_fraction * n))
    n_train = n - n_val - n_test
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def _mse(net, x, y):
    if y.size == 0:
        return float("nan")
    return float(np.mean((forward(net, x)[:, 0] - y) ** 2))


def train(net: Network, inputs, targets, method: str = "lm", cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Full-batch training on the train split; returns the parameters with the lowest validation MSE."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).reshape(-1)
    if x.shape[0] != y.size or x.shape[1] != net.shape.d0:
        raise ValueError(f"inputs {x.shape} do not match targets {y.shape} / d0={net.shape.d0}")
    if y.size < 10:
        raise ValueError("need at least 10 samples")
    if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
        raise ValueError("non-finite training data")
    tr, va, te = split_indices(y.size, cfg.val_fraction, cfg.test_fraction, cfg.seed)
    net = replace(net)
    if cfg.standardize:
        mu = x[tr].mean(axis=0)
        sd = x[tr].std(axis=0)
        net.x_mean = mu
        net.x_scale = np.where(sd > 1e-12 * np.maximum(1.0, np.abs(mu)), sd, 1.0)
    sets = {"train": (x[tr], y[tr]), "val": (x[va], y[va]), "test": (x[te], y[te])}
    select = "val" if va.size else "train"
    if method == "lm":
        steps = _lm_epochs(net, *sets["train"], cfg)
    elif method == "scg":
        steps = _scg_epochs(net, *sets["train"], cfg)
    else:
        raise ValueError(f"unknown method {method!r}")

    def record(epoch, cur):
        row = {k: _mse(cur, *sets[k]) for k in sets}
        row["epoch"] = epoch
        return row

    history = [record(0, net)]
    best_net, best_epoch, best_score = net, 0, history[0][select]
    history[0]["best_val"] = best_score
    fails = 0
    for epoch, cur in enumerate(steps, start=1):
        row = record(epoch, cur)
        if row[select] < best_score:
            best_net, best_epoch, best_score, fails = cur, epoch, row[select], 0
        else:
            fails += 1
        row["best_val"] = best_score
        history.append(row)
        if row["train"] <= cfg.goal_mse or fails >= cfg.early_stop_patience or epoch >= cfg.max_epochs:
            break
    return TrainResult(best_net, history, best_epoch, (tr, va, te))


def _lm_epochs(net: Network, x, y, cfg: TrainConfig):
    """Yield the network after each accepted Levenberg-Marquardt step.

    Each accepted step strictly lowers the training SSE; the generator stops when the
    damping exceeds ``lm_max`` without finding a descent step.
    """
    theta = net.params
    mu = cfg.lm_lambda0
    cur = net
    e = y - forward(cur, x)[:, 0]
    sse = float(e @ e)
    n_p = theta.size
    while True:
        jac = jacobian(cur, x)
        jtj = jac.T @ jac
        jte = jac.T @ e
        while True:
            try:
                step = np.linalg.solve(jtj + mu * np.eye(n_p), jte)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                cand = cur.with_params(theta + step)
                e_new = y - forward(cand, x)[:, 0]
                sse_new = float(e_new @ e_new)
                if sse_new < sse:
                    theta, cur, e, sse = theta + step, cand, e_new, sse_new
                    mu = max(mu * cfg.lm_down, 1e-20)
                    break
            mu *= cfg.lm_up
            if mu > cfg.lm_max:
                if step is None or not np.all(np.isfinite(step)):
                    raise TrainingError("normal equations singular at every damping level")
                return
        yield cur


def _scg_epochs(net: Network, x, y, cfg: TrainConfig):
    """Moller's scaled conjugate gradient on the training MSE, one iteration per epoch."""
    sigma0, lam, lam_bar = 5e-5, 5e-7, 0.0
    w = net.params
    cur = net
    grad, err = _gradient(cur, x, y)
    r = -grad
    p = r.copy()
    success = True
    n_p = w.size
    k = 0
    while True:
        k += 1
        p2 = float(p @ p)
        if p2 == 0:
            return
        if success:
            sig = sigma0 / math.sqrt(p2)
            g_s, _ = _gradient(cur.with_params(w + sig * p), x, y)
            s = (g_s - grad) / sig
            delta = float(p @ s)
        delta += (lam - lam_bar) * p2
        if delta <= 0:
            lam_bar = 2 * (lam - delta / p2)
            delta = -delta + lam * p2
            lam = lam_bar
        mu = float(p @ r)
        alpha = mu / delta
        w_new = w + alpha * p
        cand = cur.with_params(w_new)
        grad_new, err_new = _gradient(cand, x, y)
        comp = 2 * delta * (err - err_new) / mu**2 if mu != 0 else 0.0
        if comp >= 0:
            w, cur, err = w_new, cand, err_new
            r_new = -grad_new
            grad = grad_new
            lam_bar, success = 0.0, True
            if k % n_p == 0:
                p = r_new.copy()
            else:
                beta = (float(r_new @ r_new) - float(r_new @ r)) / mu
                p = r_new + beta * p
            r = r_new
            if comp >= 0.75:
                lam *= 0.25
        else:
            lam_bar, success = lam, False
        if comp < 0.25:
            lam += delta * (1 - comp) / p2
        if not np.all(np.isfinite(w)):
            raise TrainingError("SCG produced non-finite parameters")
        if float(r @ r) == 0:
            return
        yield cur
