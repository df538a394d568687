"""Single-hidden-layer (p, h, q) feedforward network.

Flat parameter layout, in order:

====================  =========  =====================================
block                 size       meaning
====================  =========  =====================================
hidden weights        p * h      ``W1[i, j]``, input i -> hidden j (row-major)
hidden biases         h          ``b1[j]``
output weights        h * q      ``W2[j, k]``, hidden j -> output k (row-major)
output biases         q          ``b2[k]``
====================  =========  =====================================

Hidden units are logistic, outputs are linear. Residuals are defined as
``output - target`` and the training loss is half the sum of squared
residuals over every pattern and output node.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .series import PatternSet

__all__ = [
    "NetworkConfig",
    "init_params",
    "unpack",
    "pack",
    "logistic",
    "forward",
    "sse_loss",
    "gradient",
    "loss_and_gradient",
    "residuals",
    "jacobian",
    "batch_loss",
    "forecast_one_step",
    "forecast_seasonal",
    "save_params",
    "load_params",
]

_CLIP = 35.0


@dataclass(frozen=True)
class NetworkConfig:
    p: int
    h: int
    q: int = 1

    def __post_init__(self):
        for name in ("p", "h", "q"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def n_params(self) -> int:
        return self.h * (self.p + self.q + 1) + self.q

    @classmethod
    def seasonal(cls, s: int, h: int) -> "NetworkConfig":
        """(s, h, s) structure: one seasonal block in, the next one out."""
        return cls(s, h, s)


def _check_params(config: NetworkConfig, params) -> np.ndarray:
    w = np.asarray(params, dtype=float)
    if w.shape != (config.n_params,):
        raise ValueError(
            f"parameter vector has shape {w.shape}; {config} needs ({config.n_params},)")
    return w


def unpack(config: NetworkConfig, params):
    """Split a flat vector into views ``(W1, b1, W2, b2)``."""
    w = _check_params(config, params)
    p, h, q = config.p, config.h, config.q
    i = 0
    W1 = w[i:i + p * h].reshape(p, h); i += p * h
    b1 = w[i:i + h]; i += h
    W2 = w[i:i + h * q].reshape(h, q); i += h * q
    b2 = w[i:i + q]
    return W1, b1, W2, b2


def pack(W1, b1, W2, b2) -> np.ndarray:
    return np.concatenate([np.ravel(W1), np.ravel(b1), np.ravel(W2), np.ravel(b2)])


def init_params(config: NetworkConfig, rng) -> np.ndarray:
    """Uniform [-0.5, 0.5] draws; ``rng`` is a seed or a numpy Generator."""
    rng = np.random.default_rng(rng)
    return rng.uniform(-0.5, 0.5, size=config.n_params)


def logistic(x):
    # Clipping keeps the output strictly inside (0, 1).
    return expit(np.clip(x, -_CLIP, _CLIP))


def _as_batch(config, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != config.p:
        raise ValueError(f"input has shape {x.shape}; network expects {config.p} inputs")
    return X, single


def forward(config: NetworkConfig, params, x, return_hidden: bool = False):
    """Network output for one input vector (shape (p,)) or a batch (n, p)."""
    W1, b1, W2, b2 = unpack(config, params)
    X, single = _as_batch(config, x)
    H = logistic(X @ W1 + b1)
    Y = H @ W2 + b2
    if single:
        Y, H = Y[0], H[0]
    return (Y, H) if return_hidden else Y


def _check_patterns(config: NetworkConfig, patterns: PatternSet):
    if patterns.p != config.p or patterns.q != config.q:
        raise ValueError(
            f"patterns are ({patterns.p} -> {patterns.q}); network is "
            f"({config.p}, {config.h}, {config.q})")


def residuals(config: NetworkConfig, params, patterns: PatternSet) -> np.ndarray:
    """Flattened ``output - target``, pattern-major."""
    _check_patterns(config, patterns)
    return (forward(config, params, patterns.inputs) - patterns.targets).ravel()


def sse_loss(config: NetworkConfig, params, patterns: PatternSet) -> float:
    r = residuals(config, params, patterns)
    return 0.5 * float(r @ r)


def loss_and_gradient(config: NetworkConfig, params, patterns: PatternSet):
    """Loss and its backpropagated gradient in one pass."""
    _check_patterns(config, patterns)
    W1, b1, W2, b2 = unpack(config, params)
    X = patterns.inputs
    H = logistic(X @ W1 + b1)
    R = H @ W2 + b2 - patterns.targets
    dA = (R @ W2.T) * H * (1.0 - H)
    g = np.concatenate([(X.T @ dA).ravel(), dA.sum(axis=0),
                        (H.T @ R).ravel(), R.sum(axis=0)])
    return 0.5 * float(np.vdot(R, R)), g


def gradient(config: NetworkConfig, params, patterns: PatternSet) -> np.ndarray:
    return loss_and_gradient(config, params, patterns)[1]


def jacobian(config: NetworkConfig, params, patterns: PatternSet) -> np.ndarray:
    """d(residual)/d(params), shape (n * q, D); rows follow :func:`residuals`."""
    _check_patterns(config, patterns)
    W1, b1, W2, b2 = unpack(config, params)
    X = patterns.inputs
    n, p = X.shape
    h, q = config.h, config.q
    H = logistic(X @ W1 + b1)
    dH = H * (1.0 - H)
    # d r[n,k] / d pre-activation[n,j] = W2[j,k] * dH[n,j]
    G = dH[:, None, :] * W2.T[None, :, :]                     # (n, q, h)
    J1 = (G[:, :, None, :] * X[:, None, :, None]).reshape(n, q, p * h)
    eye = np.eye(q)
    J3 = (eye[None, :, None, :] * H[:, None, :, None]).reshape(n, q, h * q)
    J4 = np.broadcast_to(eye, (n, q, q))
    J = np.concatenate([J1, G, J3, J4], axis=2)
    return J.reshape(n * q, config.n_params)


def batch_loss(config: NetworkConfig, params_matrix, patterns: PatternSet) -> np.ndarray:
    """Loss for every row of an (m, D) parameter matrix (swarm evaluation)."""
    _check_patterns(config, patterns)
    P = np.asarray(params_matrix, dtype=float)
    m = P.shape[0]
    p, h, q = config.p, config.h, config.q
    i = p * h
    W1 = P[:, :i].reshape(m, p, h)
    b1 = P[:, i:i + h]
    W2 = P[:, i + h:i + h + h * q].reshape(m, h, q)
    b2 = P[:, i + h + h * q:]
    H = logistic(np.matmul(patterns.inputs[None], W1) + b1[:, None, :])
    R = np.matmul(H, W2) + b2[:, None, :] - patterns.targets[None]
    return 0.5 * np.einsum("mnk,mnk->m", R, R)


def forecast_one_step(config: NetworkConfig, params, history, horizon: int) -> np.ndarray:
    """One-step-ahead forecasts of the last ``horizon`` entries of ``history``.

    ``history`` holds actual observations up to and including the forecast
    span; each forecast is fed the ``p`` actual values preceding it.
    """
    if config.q != 1:
        raise ValueError("one-step forecasting needs a single-output network")
    y = np.asarray(history, dtype=float)
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if horizon == 0:
        return np.empty(0)
    if y.size < config.p + horizon:
        raise ValueError(
            f"history of length {y.size} too short for p={config.p}, horizon={horizon}")
    lags = np.lib.stride_tricks.sliding_window_view(y[y.size - horizon - config.p:-1], config.p)
    return forward(config, params, lags)[:, 0]


def forecast_seasonal(config: NetworkConfig, params, history, horizon: int) -> np.ndarray:
    """Block-iterative forecasts following ``history``.

    The first block is computed from the last ``s`` observations; each later
    block is computed from the previous forecast block. Output is truncated
    to ``horizon`` values.
    """
    if config.p != config.q:
        raise ValueError("seasonal forecasting needs an (s, h, s) network")
    s = config.p
    y = np.asarray(history, dtype=float)
    if y.size < s:
        raise ValueError(f"history of length {y.size} shorter than season {s}")
    if horizon <= 0:
        return np.empty(0)
    block = y[-s:]
    out = []
    for _ in range(-(-horizon // s)):
        block = forward(config, params, block)
        out.append(block)
    return np.concatenate(out)[:horizon]


def save_params(path, config: NetworkConfig, params) -> None:
    """Plain-text checkpoint: ``p h q`` on the first line, then one value per line."""
    w = _check_params(config, params)
    lines = [f"{config.p} {config.h} {config.q}"] + [format(v, ".17g") for v in w]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_params(path):
    lines = Path(path).read_text(encoding="utf-8").split()
    p, h, q = (int(v) for v in lines[:3])
    config = NetworkConfig(p, h, q)
    return config, _check_params(config, np.array([float(v) for v in lines[3:]]))
