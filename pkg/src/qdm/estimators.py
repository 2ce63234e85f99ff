"""scikit-learn style wrappers around the functional API.

Forecasters take the observed series as ``X`` (shape ``(L+1,)`` or
``(L+1, n_features)``) in ``fit`` and a horizon in ``predict``.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .model import LeclParams, QdmConfig, apply_lecl, build_model, generate_trajectory
from .qrc import QrcConfig, run_qrc
from .quantum import NoiseSpec
from .training import TrainConfig, fit_lecl, mse_loss, spectral_init, train

__all__ = ["QDMForecaster", "QRCForecaster", "LECLCalibrator"]


def _series(X, n_features: Optional[int] = None) -> np.ndarray:
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise ValueError("need at least two time steps")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} feature(s), got {X.shape[1]}")
    if np.any(np.abs(X) > 1.0):
        raise ValueError("series values must lie in [-1, 1]; normalize first (qdm.signals.normalize)")
    return X


class QDMForecaster(BaseEstimator):
    """Autoregressive quantum discrete map trained on one series.

    ``fit`` trains on ``x_0..x_L`` with ``x_0`` seeding the rollout;
    ``predict(n)`` returns ``x_{L+1..L+n}``.
    """

    def __init__(self, n_memory: int = 1, ansatz: str = "HEA", depth: int = 1, channels: int = 1,
                 tau: float = 1.0, use_lecl: bool = False, channel_weights: bool = False,
                 init: str = "auto", epochs: int = 2000, learning_rate: float = 0.01,
                 curriculum: Optional[Sequence[int]] = None, noise: Optional[NoiseSpec] = None,
                 theta_scale: float = 0.05, random_state: int = 0):
        self.n_memory = n_memory
        self.ansatz = ansatz
        self.depth = depth
        self.channels = channels
        self.tau = tau
        self.use_lecl = use_lecl
        self.channel_weights = channel_weights
        self.init = init
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.curriculum = curriculum
        self.noise = noise
        self.theta_scale = theta_scale
        self.random_state = random_state

    def fit(self, X, y=None):
        X = _series(X)
        if self.init not in ("auto", "spectral", "random"):
            raise ValueError(f"init must be 'auto', 'spectral' or 'random', got {self.init!r}")
        cfg = QdmConfig(n_memory=self.n_memory, n_data=X.shape[1], ansatz=self.ansatz, depth=self.depth,
                        channels=self.channels, seed=self.random_state, tau=self.tau, use_lecl=self.use_lecl,
                        channel_weights=self.channel_weights, theta_scale=self.theta_scale)
        model = build_model(cfg)
        eligible = cfg.n_qubits == 2 and cfg.ansatz in ("HEA", "closed-form")
        if self.init == "spectral" or (self.init == "auto" and eligible):
            model = spectral_init(model, X[:, 0])
        L = X.shape[0] - 1
        windows = [w for w in (self.curriculum or ()) if w < L] + [L]
        per_stage = max(1, self.epochs // len(windows)) if len(windows) > 1 else self.epochs
        tcfg = TrainConfig(epochs=per_stage, learning_rate=self.learning_rate, seed=self.random_state,
                           noise=self.noise)
        history = []
        for w in windows:
            model, h = train(model, X[:w + 1], tcfg)
            history.extend(h)
        self.model_ = model
        self.history_ = np.asarray(history)
        self.n_train_ = L
        self.n_features_in_ = X.shape[1]
        traj = generate_trajectory(model, L, noise=self.noise)
        self.fitted_ = traj.output
        self.training_mse_ = mse_loss(traj.output[1:], X[1:])
        return self

    def predict(self, n_steps: int) -> np.ndarray:
        check_is_fitted(self, "model_")
        n_steps = int(n_steps)
        if n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        out = generate_trajectory(self.model_, self.n_train_ + n_steps, noise=self.noise).output
        out = out[self.n_train_ + 1:]
        return out[:, 0] if self.n_features_in_ == 1 else out

    def score(self, X, y=None) -> float:
        """Negative MSE of the forecast against the continuation ``X``."""
        check_is_fitted(self, "model_")
        X = check_array(X, ensure_2d=False, dtype=float).reshape(-1, self.n_features_in_)
        pred = self.predict(X.shape[0]).reshape(X.shape[0], -1)
        return -mse_loss(pred, X)


class QRCForecaster(BaseEstimator):
    """Reservoir baseline: teacher-forced linear readout, autonomous forecast."""

    def __init__(self, n_qubits: int = 3, tau: float = 2.8, V: int = 5, washout: int = 10,
                 ridge: float = 1e-8, random_state: int = 0):
        self.n_qubits = n_qubits
        self.tau = tau
        self.V = V
        self.washout = washout
        self.ridge = ridge
        self.random_state = random_state

    def fit(self, X, y=None):
        X = _series(X, 1)[:, 0]
        self.config_ = QrcConfig(self.n_qubits, self.tau, self.V, self.washout, self.ridge, self.random_state)
        self.series_ = X
        res = run_qrc(self.config_, X, 0)
        self.weights_ = res.weights
        self.training_nmse_ = res.nmse_train
        return self

    def predict(self, n_steps: int) -> np.ndarray:
        check_is_fitted(self, "weights_")
        return run_qrc(self.config_, self.series_, int(n_steps)).predictions


class LECLCalibrator(TransformerMixin, BaseEstimator):
    """Affine correction fitted from (noisy, ideal) expectation pairs."""

    def __init__(self, method: str = "lstsq", clamp: bool = True):
        self.method = method
        self.clamp = clamp

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        y = check_array(y, dtype=float)
        if X.shape != y.shape:
            raise ValueError(f"noisy {X.shape} and ideal {y.shape} samples differ in shape")
        lecl = fit_lecl(X, y, self.method)
        self.A_, self.b_ = lecl.A, lecl.b
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "A_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        if self.clamp:
            return apply_lecl(LeclParams(self.A_, self.b_), X)
        return X @ self.A_.T + self.b_

    @property
    def lecl_(self) -> LeclParams:
        check_is_fitted(self, "A_")
        return LeclParams(self.A_, self.b_)
