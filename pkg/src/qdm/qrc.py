"""Quantum reservoir computing baseline with time multiplexing."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .quantum import HamiltonianSpec, QuantumState, SimulationError, pauli_string_matrix
from .model import sub_rng

__all__ = [
    "QrcConfig", "injection_state", "inject_input", "ensemble_diagonals", "multiplexed_step",
    "fit_readout", "QrcResult", "run_qrc", "nmse",
]

logger = logging.getLogger(__name__)


@dataclass
class QrcConfig:
    n_qubits: int = 3
    tau: float = 2.8
    V: int = 5
    washout: int = 10
    ridge: float = 1e-8
    seed: int = 0
    hamiltonian: Optional[HamiltonianSpec] = None
    input_qubit: int = 0

    def __post_init__(self):
        if self.V < 1:
            raise ValueError("V must be >= 1")
        if self.tau < 0 or self.washout < 0 or self.ridge < 0:
            raise ValueError("tau, washout and ridge must be non-negative")
        if not 0 <= self.input_qubit < self.n_qubits:
            raise ValueError("input_qubit out of range")
        if self.hamiltonian is None:
            self.hamiltonian = HamiltonianSpec.random(self.n_qubits, sub_rng(self.seed, "qrc-hamiltonian"))
        elif self.hamiltonian.n_qubits != self.n_qubits:
            raise ValueError("Hamiltonian size does not match n_qubits")

    @property
    def n_features(self) -> int:
        return self.V * (2 * self.n_qubits - 1)


def nmse(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.sum((target - pred) ** 2) / np.sum(target**2))


def injection_state(s: float) -> np.ndarray:
    """``sqrt((1-s)/2)|0> + sqrt((1+s)/2)|1>``; note its <Z> is ``-s``."""
    if not -1.0 <= s <= 1.0:
        raise SimulationError(f"injected value must lie in [-1, 1], got {s}")
    return np.array([np.sqrt((1 - s) / 2), np.sqrt((1 + s) / 2)], dtype=complex)


def _replace_qubit(rho: np.ndarray, q: int, n: int, rho_q: np.ndarray) -> np.ndarray:
    """``rho_q`` on qubit ``q`` tensored with the partial trace over ``q``."""
    lo, hi = 2**q, 2 ** (n - q - 1)
    r = rho.reshape(lo, 2, hi, lo, 2, hi)
    rest = np.einsum("aibcid->abcd", r)
    out = np.einsum("abcd,ij->aibcjd", rest, rho_q)
    return out.reshape(2**n, 2**n)


def inject_input(state: QuantumState, s: float, qubit: int = 0) -> QuantumState:
    if state.is_pure:
        raise SimulationError("input injection needs a mixed state")
    if not 0 <= qubit < state.n_qubits:
        raise SimulationError(f"qubit {qubit} out of range")
    amp = injection_state(s)
    rho = _replace_qubit(state.data, qubit, state.n_qubits, np.outer(amp, amp.conj()))
    return QuantumState(rho, state.n_qubits, "mixed")


def ensemble_diagonals(n: int) -> np.ndarray:
    """Diagonals of ``Z_i`` (n of them) then ``Z_i Z_{i+1}`` (n-1)."""
    obs = []
    for i in range(n):
        obs.append("I" * i + "Z" + "I" * (n - i - 1))
    for i in range(n - 1):
        obs.append("I" * i + "ZZ" + "I" * (n - i - 2))
    return np.array([np.real(np.diag(pauli_string_matrix(p))) for p in obs])


def multiplexed_step(state: QuantumState, s: float, cfg: QrcConfig):
    """Inject ``s`` then evolve ``V`` slices of ``tau / V``; returns (state, features)."""
    n = cfg.n_qubits
    rho = inject_input(state, s, cfg.input_qubit).data
    U = cfg.hamiltonian.unitary(cfg.tau / cfg.V)
    diag = ensemble_diagonals(n)
    feats = np.empty((cfg.V, diag.shape[0]))
    for v in range(cfg.V):
        rho = U @ rho @ U.conj().T
        feats[v] = diag @ np.real(np.diag(rho))
    return QuantumState(rho, n, "mixed"), feats.ravel()


def fit_readout(features, targets, ridge: float = 0.0) -> np.ndarray:
    """Ridge least squares with a trailing bias entry in the returned weights."""
    F = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if F.ndim != 2 or F.shape[0] != y.shape[0]:
        raise ValueError("features must be (N, d) with N matching the targets")
    X = np.hstack([F, np.ones((F.shape[0], 1))])
    if ridge > 0:
        reg = np.sqrt(ridge) * np.eye(X.shape[1])
        reg[-1, -1] = 0.0  # bias is not penalized
        X = np.vstack([X, reg])
        y = np.concatenate([y, np.zeros((X.shape[1],) + y.shape[1:])])
    w, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        warnings.warn("readout system is rank deficient; returning the minimum-norm solution",
                      RuntimeWarning, stacklevel=2)
    return w


def _readout(features: np.ndarray, w: np.ndarray) -> np.ndarray:
    return features @ w[:-1] + w[-1]


@dataclass
class QrcResult:
    predictions: np.ndarray  # x_{L+1..L+T}
    fitted: np.ndarray  # teacher-forced one-step outputs after washout
    nmse_train: float
    nmse_pred: float
    weights: np.ndarray


def run_qrc(cfg: QrcConfig, series, T: int, target=None) -> QrcResult:
    """Teacher-forced readout fit on ``series = x_{0..L}``, then ``T`` autonomous steps.

    The readout maps features after injecting ``x_t`` to ``x_{t+1}``. In the
    autonomous phase the clamped prediction is injected back. ``target``
    (length ``T``) scores the prediction; without it ``nmse_pred`` is nan.
    """
    series = np.asarray(series, dtype=float).ravel()
    L = series.size - 1
    if L <= cfg.washout:
        raise ValueError(f"series of length {L + 1} is too short for washout {cfg.washout}")
    state = QuantumState(np.eye(2**cfg.n_qubits, dtype=complex) / 2**cfg.n_qubits, cfg.n_qubits, "mixed")
    feats = np.empty((L + 1, cfg.n_features))
    for t in range(L + 1):
        state, feats[t] = multiplexed_step(state, series[t], cfg)
    w = fit_readout(feats[cfg.washout:L], series[cfg.washout + 1:], cfg.ridge)
    fitted = _readout(feats[cfg.washout:L], w)
    nmse_train = nmse(fitted, series[cfg.washout + 1:])

    preds = np.empty(T)
    nxt = float(_readout(feats[L], w))
    for t in range(T):
        preds[t] = nxt
        state, f = multiplexed_step(state, float(np.clip(nxt, -1.0, 1.0)), cfg)
        nxt = float(_readout(f, w))
    nmse_pred = nmse(preds, target) if target is not None else float("nan")
    return QrcResult(preds, fitted, nmse_train, nmse_pred, w)
