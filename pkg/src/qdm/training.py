"""Loss, parameter-shift-through-time gradients, Adam training, LECL fitting.

Trainable parameters are grouped per channel as ``theta`` (gate angles),
``lecl`` (A then b), ``m0`` (initial memory), ``x0`` (initial per-channel
data, trained only when several channels share the initial value) plus the
optional global channel ``weights``. Gradients are forward-mode: for every
channel the sensitivity ``dS_t/dp`` of its state is propagated through the
recurrence, using parameter-shift derivatives of the circuit at each visited
point.
"""
from __future__ import annotations

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .model import (
    CLAMP,
    LeclParams,
    QdmModel,
    Trajectory,
    ChannelState,
    compile_channel,
    evaluate_circuit,
    encoding_angles,
    generate_trajectory,
)
from .quantum import NoiseSpec

logger = logging.getLogger(__name__)

GROUPS = ("theta", "lecl", "m0", "x0", "weights")
SHIFT = np.pi / 2


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape[0] == 0:
        raise ValueError("empty series")
    if pred.shape != target.shape:
        raise ValueError(f"series shapes differ: {pred.shape} vs {target.shape}")
    diff = (pred - target).reshape(pred.shape[0], -1)
    return float(np.mean(np.sum(diff**2, axis=1)))


def nmse(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    return float(np.sum((target - pred) ** 2) / np.sum(target**2))


# ---------------------------------------------------------------------------
# Parameter layout


def default_groups(model: QdmModel) -> tuple:
    groups = ["theta", "m0"]
    if model.lecl is not None:
        groups.append("lecl")
    if model.config.channels > 1:
        groups.append("x0")
    if model.config.channel_weights:
        groups.append("weights")
    return tuple(g for g in GROUPS if g in groups)


def _local_slices(model: QdmModel) -> dict:
    """Column slices of the per-channel local parameter vector."""
    P, n = model.n_params, model.n_qubits
    n_m, n_x = model.config.n_memory, model.config.n_data
    edges = np.cumsum([0, P, n * n + n, n_m, n_x])
    names = ("theta", "lecl", "m0", "x0")
    return {name: slice(int(edges[i]), int(edges[i + 1])) for i, name in enumerate(names)}


def _local_columns(model: QdmModel, groups) -> np.ndarray:
    sl = _local_slices(model)
    cols = [np.arange(sl[g].start, sl[g].stop) for g in ("theta", "lecl", "m0", "x0") if g in groups]
    if "lecl" in groups and model.lecl is None:
        raise ValueError("model has no LECL to train")
    return np.concatenate(cols).astype(int) if cols else np.zeros(0, dtype=int)


def get_flat(model: QdmModel, groups: Optional[Sequence[str]] = None) -> np.ndarray:
    groups = default_groups(model) if groups is None else tuple(groups)
    parts = []
    for k in range(model.config.channels):
        if "theta" in groups:
            parts.append(model.theta[k])
        if "lecl" in groups:
            parts += [model.lecl[k].A.ravel(), model.lecl[k].b]
        if "m0" in groups:
            parts.append(model.m0[k])
        if "x0" in groups:
            parts.append(model.x0[k])
    if "weights" in groups:
        parts.append(model.weights)
    return np.concatenate(parts) if parts else np.zeros(0)


def set_flat(model: QdmModel, vec, groups: Optional[Sequence[str]] = None) -> QdmModel:
    groups = default_groups(model) if groups is None else tuple(groups)
    new = model.copy()
    vec = np.asarray(vec, dtype=float)
    n = model.n_qubits
    i = 0

    def take(size):
        nonlocal i
        out = vec[i:i + size]
        i += size
        return out

    for k in range(model.config.channels):
        if "theta" in groups:
            new.theta[k] = take(model.n_params)
        if "lecl" in groups:
            new.lecl[k] = LeclParams(take(n * n).reshape(n, n), take(n))
        if "m0" in groups:
            new.m0[k] = take(model.config.n_memory)
        if "x0" in groups:
            new.x0[k] = take(model.config.n_data)
    if "weights" in groups:
        new.weights = take(model.config.channels).copy()
    if i != vec.shape[0]:
        raise ValueError(f"parameter vector has length {vec.shape[0]}, expected {i}")
    return new


def parameter_names(model: QdmModel, groups: Optional[Sequence[str]] = None) -> list:
    groups = default_groups(model) if groups is None else tuple(groups)
    n = model.n_qubits
    names = []
    for k in range(model.config.channels):
        if "theta" in groups:
            names += [f"theta[{k}][{i}]" for i in range(model.n_params)]
        if "lecl" in groups:
            names += [f"A[{k}][{i},{j}]" for i in range(n) for j in range(n)]
            names += [f"b[{k}][{i}]" for i in range(n)]
        if "m0" in groups:
            names += [f"m0[{k}][{i}]" for i in range(model.config.n_memory)]
        if "x0" in groups:
            names += [f"x0[{k}][{i}]" for i in range(model.config.n_data)]
    if "weights" in groups:
        names += [f"w[{k}]" for k in range(model.config.channels)]
    return names


# ---------------------------------------------------------------------------
# One-step partials


@dataclass
class StepPartials:
    """Partials of the raw circuit map ``s -> <Z>(s)`` at one point.

    ``d_theta[i]`` is the derivative of output ``i`` w.r.t. the chosen gate
    parameter and ``d_state[i, j]`` that of output ``i`` w.r.t. input ``j``
    (outputs/inputs ordered memory first). For a (1,1) model the six scalars
    are exposed as properties.
    """

    d_theta: np.ndarray
    d_state: np.ndarray

    @property
    def dm_dtheta(self) -> float:
        return float(self.d_theta[0])

    @property
    def dx_dtheta(self) -> float:
        return float(self.d_theta[-1])

    @property
    def dm_dm(self) -> float:
        return float(self.d_state[0, 0])

    @property
    def dm_dx(self) -> float:
        return float(self.d_state[0, -1])

    @property
    def dx_dm(self) -> float:
        return float(self.d_state[-1, 0])

    @property
    def dx_dx(self) -> float:
        return float(self.d_state[-1, -1])


def _chain_factor(v: np.ndarray) -> np.ndarray:
    """d arccos(v)/dv, replaced by 0 on the clamp boundary."""
    out = np.zeros_like(v)
    inside = np.abs(v) < CLAMP
    out[inside] = -1.0 / np.sqrt(1.0 - v[inside] ** 2)
    return out


def _shift_batch(model: QdmModel, k: int, points: np.ndarray, theta_indices: Sequence[int],
                 noise: Optional[NoiseSpec], with_forward: bool):
    """Evaluate all shifted circuits at every point.

    Returns ``(forward or None, d_theta (T, n, len(idx)), d_state (T, n, n))``.
    The circuit at each shifted theta is compiled once and evaluated on all
    ``T`` points.
    """
    T, n = points.shape
    idx = list(theta_indices)
    angles = encoding_angles(points)
    theta = model.theta[k]
    base_obs = compile_channel(model, k, theta, noise)

    def run(theta_shifted, angle_batch, obs):
        return evaluate_circuit(model, k, None, thetas=theta_shifted, noise=noise,
                                angles=angle_batch, observables=obs)

    forward = run(theta, angles, base_obs) if with_forward else None
    d_theta = np.zeros((T, n, len(idx)))
    for col, j in enumerate(idx):
        outs = []
        for sign in (+1, -1):
            th = np.array(theta, dtype=float)
            th[j] += sign * SHIFT
            outs.append(run(th, angles, compile_channel(model, k, th, noise)))
        d_theta[:, :, col] = (outs[0] - outs[1]) / 2
    d_angle = np.zeros((T, n, n))
    for q in range(n):
        outs = []
        for sign in (+1, -1):
            shifted = angles.copy()
            shifted[:, q] += sign * SHIFT
            outs.append(run(theta, shifted, base_obs))
        d_angle[:, :, q] = (outs[0] - outs[1]) / 2
    d_state = d_angle * _chain_factor(points)[:, None, :]
    return forward, d_theta, d_state


def step_partials(model: QdmModel, channel: int, state: ChannelState, theta_index: int,
                  noise: Optional[NoiseSpec] = None) -> StepPartials:
    """Direct and input partials of one circuit step.

    Uses two shifted evaluations for the gate parameter and two per encoding
    angle, i.e. ``2 + 2n`` circuit runs (six for a two-qubit channel).
    """
    point = state.vector[None]
    _, d_theta, d_state = _shift_batch(model, channel, point, [theta_index], noise, with_forward=False)
    return StepPartials(d_theta[0, :, 0], d_state[0])


# ---------------------------------------------------------------------------
# Sensitivity recurrence


@dataclass
class SensitivityTable:
    """``state[k]`` is (T+1, n, Q) with ``d s_t^k / d p_local``; ``output`` is
    (T+1, n_x, n_flat) over the flat trainable vector."""

    state: list
    output: np.ndarray
    names: list


def accumulate_sensitivities(model: QdmModel, trajectory: Trajectory, noise: Optional[NoiseSpec] = None,
                             groups: Optional[Sequence[str]] = None) -> SensitivityTable:
    groups = default_groups(model) if groups is None else tuple(groups)
    cfg = model.config
    n, n_m, n_x, P = model.n_qubits, cfg.n_memory, cfg.n_data, model.n_params
    sl = _local_slices(model)
    Q = sl["x0"].stop
    T = len(trajectory) - 1
    cols = _local_columns(model, groups)
    n_flat = cfg.channels * len(cols) + (cfg.channels if "weights" in groups else 0)
    output = np.zeros((T + 1, n_x, n_flat))
    per_channel = []
    for k in range(cfg.channels):
        S = np.zeros((T + 1, n, Q))
        S[0, :n_m, sl["m0"]] = np.eye(n_m)
        S[0, n_m:, sl["x0"]] = np.eye(n_x)
        if T > 0:
            points = trajectory.states(k)[:-1]
            need_theta = "theta" in groups
            forward, d_theta, d_state = _shift_batch(
                model, k, points, range(P) if need_theta else [], noise, with_forward=True)
            lecl = model.lecl_for(k)
            for t in range(T):
                G = d_state[t] @ S[t]
                G[:, sl["theta"]] += d_theta[t] if need_theta else 0.0
                if lecl is not None:
                    pre = lecl.A @ forward[t] + lecl.b
                    H = lecl.A @ G
                    lec = sl["lecl"]
                    # d(A g)_i / dA_ij = g_j ; d b_i / d b_i = 1
                    dA = np.zeros((n, n * n))
                    for i in range(n):
                        dA[i, i * n:(i + 1) * n] = forward[t]
                    H[:, lec.start:lec.start + n * n] += dA
                    H[:, lec.start + n * n:lec.stop] += np.eye(n)
                else:
                    pre = forward[t]
                    H = G
                S[t + 1] = H * (np.abs(pre) < CLAMP)[:, None]
        per_channel.append(S)
        block = slice(k * len(cols), (k + 1) * len(cols))
        output[:, :, block] = model.weights[k] * S[:, n_m:, :][:, :, cols]
    if "weights" in groups:
        output[:, :, -cfg.channels:] = np.transpose(trajectory.data, (0, 2, 1))
    return SensitivityTable(per_channel, output, parameter_names(model, groups))


def _as_target(target, n_x: int) -> np.ndarray:
    target = np.asarray(target, dtype=float)
    return target.reshape(target.shape[0], n_x)


def loss_and_gradient(model: QdmModel, target, noise: Optional[NoiseSpec] = None,
                      groups: Optional[Sequence[str]] = None):
    """MSE of the rollout against ``target = x_{1..L}`` and its gradient."""
    target = _as_target(target, model.config.n_data)
    L = target.shape[0]
    traj = generate_trajectory(model, L, noise=noise)
    table = accumulate_sensitivities(model, traj, noise=noise, groups=groups)
    resid = traj.output[1:] - target
    loss = float(np.mean(np.sum(resid**2, axis=1)))
    grad = (2.0 / L) * np.einsum("tj,tjp->p", resid, table.output[1:])
    return loss, grad


def loss_gradient(model: QdmModel, target, noise: Optional[NoiseSpec] = None,
                  groups: Optional[Sequence[str]] = None) -> np.ndarray:
    return loss_and_gradient(model, target, noise, groups)[1]


def rollout_loss(model: QdmModel, target, noise: Optional[NoiseSpec] = None) -> float:
    target = _as_target(target, model.config.n_data)
    traj = generate_trajectory(model, target.shape[0], noise=noise)
    return mse_loss(traj.output[1:], target)


def finite_difference_gradient(model: QdmModel, target, h: float = 1e-5, noise: Optional[NoiseSpec] = None,
                               groups: Optional[Sequence[str]] = None) -> np.ndarray:
    if not (1e-7 <= h <= 1e-3):
        raise ValueError(f"finite-difference step must lie in [1e-7, 1e-3], got {h}")
    base = get_flat(model, groups)
    grad = np.zeros_like(base)
    for i in range(base.size):
        up, down = base.copy(), base.copy()
        up[i] += h
        down[i] -= h
        f_up = rollout_loss(set_flat(model, up, groups), target, noise)
        f_down = rollout_loss(set_flat(model, down, groups), target, noise)
        grad[i] = (f_up - f_down) / (2 * h)
    return grad


# ---------------------------------------------------------------------------
# Optimization


class Adam:
    def __init__(self, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    gradient_method: str = "parameter-shift"
    fd_step: float = 1e-5
    freeze_theta: bool = False
    keep_best: bool = True
    noise: Optional[NoiseSpec] = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.gradient_method not in ("parameter-shift", "finite-difference"):
            raise ValueError(f"unknown gradient method {self.gradient_method!r}")


def train(model: QdmModel, series, cfg: TrainConfig = TrainConfig(), groups: Optional[Sequence[str]] = None):
    """Fit ``model`` to ``series = x_{0..L}`` by Adam on the rollout MSE.

    ``x_0`` seeds the data register (split evenly over channels); the loss
    covers ``x_1..x_L``. Returns ``(trained model, per-epoch loss list)``.
    """
    series = np.asarray(series, dtype=float)
    n_x = model.config.n_data
    series = series.reshape(series.shape[0], n_x)
    if series.shape[0] < 2:
        raise ValueError("need at least x_0 and x_1")
    if cfg.epochs == 0:
        return model, []
    model = model.copy()
    model.x0[:] = series[0] / model.config.channels
    target = series[1:]
    groups = default_groups(model) if groups is None else tuple(groups)
    if cfg.freeze_theta:
        groups = tuple(g for g in groups if g != "theta")
    params = get_flat(model, groups)
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    history = []
    best = (np.inf, params)
    for epoch in range(cfg.epochs):
        current = set_flat(model, params, groups)
        if cfg.gradient_method == "parameter-shift":
            loss, grad = loss_and_gradient(current, target, cfg.noise, groups)
        else:
            loss = rollout_loss(current, target, cfg.noise)
            grad = finite_difference_gradient(current, target, cfg.fd_step, cfg.noise, groups)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite loss/gradient at epoch {epoch}: loss={loss!r}")
        history.append(loss)
        if loss < best[0]:
            best = (loss, params)
        params = opt.step(params, grad)
        if "m0" in groups or "x0" in groups:
            # initial expectations must stay encodable
            stepped = set_flat(model, params, groups)
            np.clip(stepped.m0, -CLAMP, CLAMP, out=stepped.m0)
            np.clip(stepped.x0, -CLAMP, CLAMP, out=stepped.x0)
            params = get_flat(stepped, groups)
        if epoch % 500 == 0:
            logger.debug("epoch %d loss %.3e", epoch, loss)
    final = set_flat(model, params, groups)
    final_loss = rollout_loss(final, target, cfg.noise)
    if cfg.keep_best and best[0] < final_loss:
        final = set_flat(model, best[1], groups)
    return final, history


def dominant_frequencies(series, k: int, pad: int = 8192) -> np.ndarray:
    """The ``k`` strongest periodogram peaks of ``series`` in rad/step."""
    s = np.asarray(series, dtype=float).ravel()
    s = s - s.mean()
    power = np.abs(np.fft.rfft(s * np.hanning(s.size), max(pad, s.size)))
    freqs = 2 * np.pi * np.fft.rfftfreq(max(pad, s.size))
    peaks = [i for i in range(1, power.size - 1) if power[i] > power[i - 1] and power[i] >= power[i + 1]]
    peaks = sorted(peaks, key=lambda i: -power[i])[:k]
    out = np.zeros(k)
    out[:len(peaks)] = freqs[peaks]
    return out


def spectral_init(model: QdmModel, series) -> QdmModel:
    """Start each two-qubit channel as a rotation at one dominant frequency.

    Random angles often leave multi-channel fits in a basin where channels
    share a frequency; seeding from the periodogram avoids that. Only the
    two-qubit HEA and closed-form ansatze have a known angle/frequency link.
    """
    cfg = model.config
    if cfg.n_qubits != 2 or cfg.ansatz not in ("HEA", "closed-form"):
        raise ValueError("spectral init needs a two-qubit HEA or closed-form ansatz")
    model = model.copy()
    # the two-qubit HEA at (a, b) is the closed-form map at (a, b)
    for k, w in enumerate(dominant_frequencies(series, cfg.channels)):
        model.theta[k] = [w, -w]
    return model


def predict(model: QdmModel, T: int, L: int, noise: Optional[NoiseSpec] = None,
            rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Continue the rollout past the training window: returns ``x_hat_{L+1..L+T}``."""
    if T == 0:
        return np.zeros((0, model.config.n_data))
    traj = generate_trajectory(model, L + T, noise=noise, rng=rng)
    return traj.output[L + 1:]


# ---------------------------------------------------------------------------
# LECL calibration


def fit_lecl(noisy, ideal, method: str = "lstsq") -> LeclParams:
    """Affine map ``(A, b)`` minimizing ``sum ||A noisy_i + b - ideal_i||^2``."""
    Yn = np.asarray(noisy, dtype=float)
    Yi = np.asarray(ideal, dtype=float)
    if Yn.shape != Yi.shape or Yn.ndim != 2:
        raise ValueError("noisy and ideal samples must both be (N, n)")
    N, n = Yn.shape
    design = np.hstack([Yn, np.ones((N, 1))])
    rank = np.linalg.matrix_rank(design)
    if rank < n + 1:
        warnings.warn(f"LECL samples are rank deficient ({rank} < {n + 1}); using minimum-norm solution")
    if method == "lstsq":
        coef = np.linalg.lstsq(design, Yi, rcond=None)[0]
        return LeclParams(coef[:n].T, coef[n])
    if method != "bfgs":
        raise ValueError(f"unknown method {method!r}")

    def objective(z):
        A, b = z[:n * n].reshape(n, n), z[n * n:]
        r = Yn @ A.T + b - Yi
        grad_A = 2 * r.T @ Yn
        grad_b = 2 * r.sum(axis=0)
        return np.sum(r**2), np.concatenate([grad_A.ravel(), grad_b])

    z0 = np.concatenate([np.eye(n).ravel(), np.zeros(n)])
    res = minimize(objective, z0, jac=True, method="BFGS", options={"gtol": 1e-12, "maxiter": 10000})
    return LeclParams(res.x[:n * n].reshape(n, n), res.x[n * n:])
