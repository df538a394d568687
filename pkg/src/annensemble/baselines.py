"""Linear reference models: AR(p) by least squares and the seasonal
MA(1) x MA(1)_s model on doubly differenced data, fitted by conditional sum
of squares.

Both forecast one step ahead from actual observations, matching the
network protocol.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .series import TimeSeries, window
from .trainers import TrainerSpec, surrogate_minimize

__all__ = [
    "BaselineError",
    "ARModel",
    "SarimaModel",
    "DifferencingState",
    "fit_ar",
    "forecast_ar",
    "seasonal_difference",
    "invert_difference",
    "css_residuals",
    "css_objective",
    "fit_sarima_ma",
    "forecast_sarima",
]


class BaselineError(ValueError):
    pass


def _values(series) -> np.ndarray:
    return series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)


@dataclass(frozen=True)
class ARModel:
    intercept: float
    coefficients: np.ndarray  # phi_1 .. phi_p, phi_1 multiplies the most recent lag
    sigma2: float

    @property
    def order(self) -> int:
        return len(self.coefficients)


def _ar_design(y, p):
    pats = window(y, p, 1)
    # window() yields lags oldest-first; reverse so column k is lag k+1
    X = np.column_stack([np.ones(len(pats)), pats.inputs[:, ::-1]])
    return X, pats.targets[:, 0]


def fit_ar(series, p: int) -> ARModel:
    """Ordinary least squares of ``y_t`` on ``1, y_{t-1}, ..., y_{t-p}``."""
    y = _values(series)
    if y.size <= 2 * p + 1:
        raise BaselineError(f"series of length {y.size} too short for AR({p})")
    X, t = _ar_design(y, p)
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise BaselineError(f"AR({p}) design matrix is rank deficient (constant series?)")
    beta, *_ = np.linalg.lstsq(X, t, rcond=None)
    resid = t - X @ beta
    return ARModel(float(beta[0]), beta[1:].copy(), float(np.mean(resid ** 2)))


def forecast_ar(model: ARModel, history, horizon: int) -> np.ndarray:
    """One-step-ahead forecasts of the last ``horizon`` entries of ``history``
    (which must include the forecast span's actual values)."""
    y = _values(history)
    p = model.order
    if horizon <= 0:
        return np.empty(0)
    if y.size < p + horizon:
        raise BaselineError(f"history of length {y.size} too short for AR({p}), "
                            f"horizon {horizon}")
    X, _ = _ar_design(y[y.size - horizon - p:], p)
    return X @ np.r_[model.intercept, model.coefficients]


@dataclass(frozen=True)
class DifferencingState:
    d: int
    D: int
    s: int
    heads: tuple  # leading values dropped by each differencing pass, in order


def seasonal_difference(series, d: int = 1, D: int = 1, s: int = 12):
    """Apply ``(1 - L)^d (1 - L^s)^D``; returns ``(differenced, state)``."""
    y = _values(series)
    if y.size <= d + D * s:
        raise BaselineError(f"series of length {y.size} too short for d={d}, D={D}, s={s}")
    heads = []
    for _ in range(d):
        heads.append(y[:1].copy())
        y = y[1:] - y[:-1]
    for _ in range(D):
        heads.append(y[:s].copy())
        y = y[s:] - y[:-s]
    return y, DifferencingState(d, D, s, tuple(heads))


def invert_difference(diffed, state: DifferencingState) -> np.ndarray:
    """Exact inverse of :func:`seasonal_difference`."""
    y = np.asarray(diffed, dtype=float)
    lags = [1] * state.d + [state.s] * state.D
    for lag, head in zip(reversed(lags), reversed(state.heads)):
        out = np.concatenate([head, np.empty(y.size)])
        for t in range(y.size):
            out[lag + t] = out[t] + y[t]
        y = out
    return y


@dataclass(frozen=True)
class SarimaModel:
    """(0,1,1) x (0,1,1)_s without intercept.

    The differenced series follows ``w_t = e_t + theta e_{t-1} + Theta e_{t-s}
    + theta Theta e_{t-s-1}``.
    """

    theta: float
    seasonal_theta: float
    s: int
    sigma2: float

    @property
    def ma_polynomial(self) -> np.ndarray:
        return _ma_poly(self.theta, self.seasonal_theta, self.s)


def _ma_poly(theta, Theta, s):
    c = np.zeros(s + 2)
    c[0] = 1.0
    c[1] = theta
    c[s] += Theta
    c[s + 1] += theta * Theta
    return c


def css_residuals(w, theta, Theta, s) -> np.ndarray:
    """Recursive residuals; the first ``s + 1`` are fixed at zero."""
    w = np.asarray(w, dtype=float)
    e = np.zeros(w.size)
    e[s + 1:] = lfilter([1.0], _ma_poly(theta, Theta, s), w[s + 1:])
    return e


def css_objective(w, theta, Theta, s) -> float:
    e = css_residuals(w, theta, Theta, s)
    return float(e @ e)


def _css_and_grad(w, theta, Theta, s):
    poly = _ma_poly(theta, Theta, s)
    e = lfilter([1.0], poly, w)
    # d e / d theta = -(L + Theta L^{s+1}) e / M(L), similarly for Theta
    d_theta = np.zeros(s + 2); d_theta[1] = 1.0; d_theta[s + 1] = Theta
    d_Theta = np.zeros(s + 2); d_Theta[s] = 1.0; d_Theta[s + 1] = theta
    de_theta = -lfilter(d_theta, poly, e)
    de_Theta = -lfilter(d_Theta, poly, e)
    return float(e @ e), 2.0 * np.array([e @ de_theta, e @ de_Theta])


def fit_sarima_ma(series, s: int = 12) -> SarimaModel:
    """Fit theta and Theta by conditional sum of squares.

    Both are kept inside (-1, 1) through ``theta = tanh(u)``; the
    unconstrained problem is solved with the BFGS trainer.
    """
    y = _values(series)
    w, _ = seasonal_difference(y, 1, 1, s)
    if w.size < 3 * s:
        raise BaselineError(f"differenced length {w.size} < 3s = {3 * s}")
    tail = w[s + 1:]
    scale = 1.0 / max(float(tail @ tail), 1e-300)

    def objective(u):
        th = np.tanh(u)
        f, g = _css_and_grad(tail, th[0], th[1], s)
        return f * scale, g * (1.0 - th ** 2) * scale

    spec = TrainerSpec("BFGS", max_epochs=500, stagnation_window=50)
    res = surrogate_minimize(spec, objective, x0=np.zeros(2))
    theta, Theta = np.tanh(res.x)
    e = css_residuals(w, theta, Theta, s)
    return SarimaModel(float(theta), float(Theta), s, float(np.mean(e[s + 1:] ** 2)))


def forecast_sarima(model: SarimaModel, history, horizon: int) -> np.ndarray:
    """One-step-ahead forecasts of the last ``horizon`` entries of ``history``.

    Residuals are run through the whole series from actual values; each
    forecast adds the predicted differenced value to
    ``y_{t-1} + y_{t-s} - y_{t-s-1}``.
    """
    y = _values(history)
    s = model.s
    if horizon <= 0:
        return np.empty(0)
    w, _ = seasonal_difference(y, 1, 1, s)
    if w.size - horizon < s + 1:
        raise BaselineError("history too short to initialise the MA recursion")
    e = css_residuals(w, model.theta, model.seasonal_theta, s)
    th, Th = model.theta, model.seasonal_theta
    out = np.empty(horizon)
    n = y.size
    for k in range(horizon):
        t = n - horizon + k        # index into y
        j = t - (s + 1)            # matching index into w
        w_hat = th * e[j - 1] + Th * e[j - s] + th * Th * e[j - s - 1]
        out[k] = y[t - 1] + y[t - s] - y[t - s - 1] + w_hat
    return out
