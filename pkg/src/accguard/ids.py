"""
Intrusion detection.

A small MLP with a linear bypass learns a one-step-ahead predictor of the ego velocity from lagged
actuation commands and velocities during an attack-free interval. The
residual between the measured and predicted velocity is compared against a
per-mode band mu +/- k*sigma calibrated on the same interval; ``n_consec``
consecutive exceedances latch the alarm.

The network works in increments: its inputs are past velocity differences
and past commands, its output is the next velocity change. That keeps the
prediction independent of the absolute speed the vehicle happens to cruise
at.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .controller import Mode
from .errors import InsufficientDataError, InvalidParameter, NotReady, TrainingError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IdsParams:
    enabled: bool = True
    k: float = 4.0
    n_consec: int = 2
    n_u: int = 2
    n_y: int = 2
    hidden: int = 6
    epochs: int = 500
    learning_rate: float = 0.01
    lr_decay: float = 0.002
    seed: int = 0
    holdout: float = 0.2
    rmse_cap: float = 5e-3
    sigma_floor: float = 1e-4
    min_mode_samples: int = 30
    calib_start: float = 5.0
    safe_end: float = 35.0
    ref_tol: float = 1e-3

    def __post_init__(self):
        if self.k <= 0:
            raise InvalidParameter("k must be > 0")
        if self.n_consec < 1 or self.n_u < 1 or self.n_y < 1 or self.hidden < 1:
            raise InvalidParameter("n_consec, n_u, n_y, hidden must be >= 1")
        if not 0 < self.holdout < 1:
            raise InvalidParameter("holdout must be in (0, 1)")
        if self.sigma_floor <= 0:
            raise InvalidParameter("sigma_floor must be > 0")
        if not 0 <= self.calib_start < self.safe_end:
            raise InvalidParameter("need 0 <= calib_start < safe_end")


# -- identifier ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class IdentifierModel:
    W1: np.ndarray          # (hidden, n_features)
    b1: np.ndarray          # (hidden,)
    w2: np.ndarray          # (hidden,)
    b2: float
    w_lin: np.ndarray       # (n_features,) linear bypass
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float
    n_u: int
    n_y: int
    train_rmse: float = float("nan")
    val_rmse: float = float("nan")

    def __post_init__(self):
        if not (np.all(np.isfinite(self.x_scale)) and np.all(self.x_scale > 0)
                and math.isfinite(self.y_scale) and self.y_scale > 0):
            raise InvalidParameter("normalization scales must be finite and positive")

    @property
    def n_params(self) -> int:
        return self.W1.size + self.b1.size + self.w2.size + 1 + self.w_lin.size

    def _forward(self, X: np.ndarray) -> np.ndarray:
        Z = (X - self.x_mean) / self.x_scale
        out = np.tanh(Z @ self.W1.T + self.b1) @ self.w2 + Z @ self.w_lin + self.b2
        return out * self.y_scale + self.y_mean


def n_features(n_u: int, n_y: int) -> int:
    return (n_y - 1) + n_u


def n_params(n_u: int, n_y: int, hidden: int) -> int:
    return (hidden + 1) * n_features(n_u, n_y) + 2 * hidden + 1


def features(u_hist, y_hist, n_u: int, n_y: int) -> np.ndarray:
    """Feature vector from histories ordered newest first."""
    y = np.asarray(y_hist[:n_y], dtype=float)
    u = np.asarray(u_hist[:n_u], dtype=float)
    return np.concatenate([y[:-1] - y[1:], u])


def regression_data(u, y, n_u: int, n_y: int):
    """Rows (features, target increment, previous output) predicting y[k]
    for every k with a full history. Returns also the indices k."""
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    lag = max(n_u, n_y)
    idx = np.arange(lag, len(y))
    if idx.size == 0:
        return np.empty((0, n_features(n_u, n_y))), np.empty(0), np.empty(0), idx
    cols = [y[idx - i] - y[idx - i - 1] for i in range(1, n_y)]
    cols += [u[idx - i] for i in range(1, n_u + 1)]
    X = np.column_stack(cols)
    return X, y[idx] - y[idx - 1], y[idx - 1], idx


def _scale(a: np.ndarray, axis=None):
    mean = a.mean(axis=axis)
    std = a.std(axis=axis)
    std = np.where(std > 1e-12, std, 1.0)
    return mean, std


def train_identifier(u, y, params: IdsParams = IdsParams()) -> IdentifierModel:
    """Fit the one-step predictor on a safe trace of commands ``u`` and outputs ``y``.

    The last ``params.holdout`` fraction is held out; the model is rejected if
    its held-out RMSE exceeds ``params.rmse_cap``.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.shape != y.shape:
        raise InvalidParameter("u and y must have the same length")
    need = 10 * n_params(params.n_u, params.n_y, params.hidden)
    if len(y) < need:
        raise InsufficientDataError(
            f"safe trace has {len(y)} samples, need at least {need} for "
            f"{n_params(params.n_u, params.n_y, params.hidden)} parameters")

    X, dy, _, _ = regression_data(u, y, params.n_u, params.n_y)
    n_train = int(round(len(dy) * (1.0 - params.holdout)))
    Xt, dyt = X[:n_train], dy[:n_train]

    x_mean, x_scale = _scale(Xt, axis=0)
    y_mean, y_scale = _scale(dyt)
    Z = (Xt - x_mean) / x_scale
    T = (dyt - y_mean) / y_scale

    rng = np.random.default_rng(params.seed)
    n_in = Z.shape[1]
    # the bypass starts at the least-squares ARX fit, the tanh layer at zero
    # output so gradient descent only has to learn what the linear part misses
    design = np.column_stack([Z, np.ones(len(T))])
    lin, *_ = np.linalg.lstsq(design, T, rcond=None)
    theta = [
        rng.normal(0.0, 0.5 / math.sqrt(n_in), (params.hidden, n_in)),
        np.zeros(params.hidden),
        np.zeros(params.hidden),
        np.array([lin[-1]]),
        lin[:-1].copy(),
    ]
    m = [np.zeros_like(p) for p in theta]
    v = [np.zeros_like(p) for p in theta]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    N = len(T)

    for epoch in range(1, params.epochs + 1):
        W1, b1, w2, b2, w_lin = theta
        H = np.tanh(Z @ W1.T + b1)
        err = H @ w2 + Z @ w_lin + b2[0] - T
        # gradients of 0.5 * mean squared error
        g_out = err / N
        gH = np.outer(g_out, w2) * (1.0 - H * H)
        grads = (gH.T @ Z, gH.sum(axis=0), H.T @ g_out, np.array([g_out.sum()]), Z.T @ g_out)
        lr = params.learning_rate / (1.0 + params.lr_decay * epoch)
        for i, g in enumerate(grads):
            m[i] = beta1 * m[i] + (1 - beta1) * g
            v[i] = beta2 * v[i] + (1 - beta2) * g * g
            mhat = m[i] / (1 - beta1 ** epoch)
            vhat = v[i] / (1 - beta2 ** epoch)
            theta[i] = theta[i] - lr * mhat / (np.sqrt(vhat) + eps)

    W1, b1, w2, b2, w_lin = theta
    model = IdentifierModel(W1=W1, b1=b1, w2=w2, b2=float(b2[0]), w_lin=w_lin, x_mean=x_mean,
                            x_scale=x_scale, y_mean=float(y_mean), y_scale=float(y_scale),
                            n_u=params.n_u, n_y=params.n_y)
    train_rmse = _rmse(model._forward(Xt), dyt)
    val_rmse = _rmse(model._forward(X[n_train:]), dy[n_train:])
    model = replace(model, train_rmse=train_rmse, val_rmse=val_rmse)
    if not (train_rmse <= params.rmse_cap and val_rmse <= params.rmse_cap):
        raise TrainingError(
            f"identifier RMSE above cap {params.rmse_cap:g}: "
            f"train {train_rmse:.3e}, held-out {val_rmse:.3e}")
    log.info("identifier trained: train RMSE %.3e, held-out RMSE %.3e", train_rmse, val_rmse)
    return model


def _rmse(pred, target) -> float:
    if len(target) == 0:
        return 0.0
    return float(np.sqrt(np.mean((np.asarray(pred) - np.asarray(target)) ** 2)))


def predict(model: IdentifierModel, u_hist, y_hist) -> float:
    """Predicted next output; histories are newest first."""
    if len(u_hist) < model.n_u or len(y_hist) < model.n_y:
        raise NotReady("regressor buffer not full")
    x = features(u_hist, y_hist, model.n_u, model.n_y)
    return float(y_hist[0] + model._forward(x[None, :])[0])


def predict_series(model: IdentifierModel, u, y) -> np.ndarray:
    """One-step predictions for a whole series; NaN where history is short."""
    y = np.asarray(y, dtype=float)
    X, _, y_prev, idx = regression_data(u, y, model.n_u, model.n_y)
    out = np.full(len(y), np.nan)
    if idx.size:
        out[idx] = y_prev + model._forward(X)
    return out


def identifier_rmse(model: IdentifierModel, u, y) -> float:
    pred = predict_series(model, u, y)
    ok = ~np.isnan(pred)
    return _rmse(pred[ok], np.asarray(y, dtype=float)[ok])


# -- thresholds ----------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdSet:
    mu: dict
    sigma: dict
    k: float
    fallback: tuple = ()

    def __post_init__(self):
        if self.k <= 0:
            raise InvalidParameter("k must be > 0")

    def band(self, mode: Mode):
        return self.mu[mode], self.k * self.sigma[mode]

    def exceeds(self, mode: Mode, residual: float) -> bool:
        mu, half = self.band(mode)
        return abs(residual - mu) > half


def thresholds_from_residuals(residuals, modes, k: float, sigma_floor: float = 1e-4,
                              min_samples: int = 30) -> ThresholdSet:
    r = np.asarray(residuals, dtype=float)
    modes = [Mode(m) for m in modes]
    if r.size == 0:
        raise InsufficientDataError("no residuals to calibrate on")
    g_mu, g_sigma = float(r.mean()), max(float(r.std()), sigma_floor)
    mu, sigma, fallback = {}, {}, []
    labels = np.array([m.value for m in modes])
    for mode in Mode:
        sel = r[labels == mode.value]
        if sel.size < min_samples:
            mu[mode], sigma[mode] = g_mu, g_sigma
            fallback.append(mode)
            log.warning("mode %s has %d calibration samples; using pooled statistics",
                        mode.value, sel.size)
        else:
            mu[mode] = float(sel.mean())
            sigma[mode] = max(float(sel.std()), sigma_floor)
    return ThresholdSet(mu=mu, sigma=sigma, k=float(k), fallback=tuple(fallback))


def calibrate_threshold(model: IdentifierModel, u, y, modes, k: float,
                        sigma_floor: float = 1e-4, min_samples: int = 30) -> ThresholdSet:
    """Per-mode residual statistics of ``model`` over a labelled safe trace."""
    pred = predict_series(model, u, y)
    ok = ~np.isnan(pred)
    residuals = np.asarray(y, dtype=float)[ok] - pred[ok]
    labels = [m for m, keep in zip(modes, ok) if keep]
    return thresholds_from_residuals(residuals, labels, k, sigma_floor, min_samples)


def false_positive_prob(k: float) -> float:
    """Probability a Gaussian residual leaves mu +/- k*sigma: erfc(k / sqrt(2))."""
    if not k >= 0:
        raise InvalidParameter(f"k must be >= 0, got {k!r}")
    return math.erfc(k / math.sqrt(2.0))


# -- detection state machine ---------------------------------------------------

@dataclass(frozen=True)
class IdsState:
    alarm_latched: bool = False
    first_alarm_time: float | None = None
    consec: int = 0
    u_hist: tuple = ()
    y_hist: tuple = ()
    depth: int = 2

    def ready(self, model: IdentifierModel) -> bool:
        return len(self.u_hist) >= model.n_u and len(self.y_hist) >= model.n_y


def push(state: IdsState, u: float, y: float) -> IdsState:
    return replace(state, u_hist=((u,) + state.u_hist)[: state.depth],
                   y_hist=((y,) + state.y_hist)[: state.depth])


def detect(state: IdsState, thresholds: ThresholdSet, mode: Mode, y_out: float, y_nn: float,
           t: float, n_consec: int = 2, extra_exceedance: bool = False) -> IdsState:
    """Advance the alarm logic by one sample.

    ``extra_exceedance`` lets a second channel (reference consistency) count
    toward the same consecutive-exceedance rule.
    """
    if state.alarm_latched:
        return state
    hit = thresholds.exceeds(mode, y_out - y_nn) or extra_exceedance
    consec = state.consec + 1 if hit else 0
    if consec >= n_consec:
        return replace(state, consec=consec, alarm_latched=True, first_alarm_time=t)
    return replace(state, consec=consec)


# -- training + calibration in one go ------------------------------------------

@dataclass(frozen=True, eq=False)
class IdsBundle:
    model: IdentifierModel
    thresholds: ThresholdSet


def fit_ids(u, y, modes, times, params: IdsParams = IdsParams()) -> IdsBundle:
    """Train on the whole safe trace, calibrate on samples with t >= calib_start."""
    times = np.asarray(times, dtype=float)
    if len(times) == 0 or times[-1] < params.calib_start:
        raise InsufficientDataError("safe trace ends before the calibration window")
    model = train_identifier(u, y, params)
    pred = predict_series(model, u, y)
    keep = ~np.isnan(pred) & (times >= params.calib_start - 1e-9)
    residuals = np.asarray(y, dtype=float)[keep] - pred[keep]
    labels = [m for m, k in zip(modes, keep) if k]
    thresholds = thresholds_from_residuals(residuals, labels, params.k, params.sigma_floor,
                                           params.min_mode_samples)
    return IdsBundle(model, thresholds)
