"""Quantum discrete map: encode (m, x), apply a shallow circuit, read <Z> back.

Each channel owns its register of ``n_memory + n_data`` qubits; memory
qubits come first. A step maps the channel state ``s = (m, x)`` to the
per-qubit ``<Z>`` expectations of ``U(theta) U_enc(s) |0...0>``, optionally
followed by the affine error-cancellation layer ``A s + b`` and a clamp into
the open encoding domain.
"""
from __future__ import annotations

import contextlib
import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .quantum import (
    GateOp,
    HamiltonianSpec,
    NoiseSpec,
    QuantumState,
    heisenberg_z,
    quadratic_expectations,
    simulate_z,
)

CLAMP = 1.0 - 1e-9
ANSATZE = ("HEA", "TIEA", "closed-form", "identity")
CHECKPOINT_VERSION = 1


def sub_rng(seed: int, label: str) -> np.random.Generator:
    """Independent generator for ``label`` derived from ``seed``."""
    return np.random.default_rng([int(seed), zlib.crc32(label.encode())])


class _EvalCounter:
    def __init__(self):
        self.count = 0


_counter = _EvalCounter()


@contextlib.contextmanager
def count_evaluations():
    """Count circuit evaluations (one per batch element) inside the block."""
    counter = _EvalCounter()
    global _counter
    previous, _counter = _counter, counter
    try:
        yield counter
    finally:
        _counter = previous


@dataclass(frozen=True)
class QdmConfig:
    n_memory: int = 1
    n_data: int = 1
    ansatz: str = "HEA"
    depth: int = 1
    channels: int = 1
    seed: int = 0
    tau: float = 1.0
    use_lecl: bool = False
    channel_weights: bool = False
    theta_scale: float = 0.05
    m0_scale: float = 0.5

    def __post_init__(self):
        if self.n_memory < 1 or self.n_data < 1:
            raise ValueError("n_memory and n_data must be >= 1")
        if self.n_memory + self.n_data > 6:
            raise ValueError("at most 6 qubits per channel")
        if self.depth < 1 or self.channels < 1:
            raise ValueError("depth and channels must be >= 1")
        if self.ansatz not in ANSATZE:
            raise ValueError(f"ansatz must be one of {ANSATZE}, got {self.ansatz!r}")
        if self.ansatz == "closed-form" and (self.n_memory, self.n_data) != (1, 1):
            raise ValueError("the closed-form ansatz is defined for one memory and one data qubit")

    @property
    def n_qubits(self) -> int:
        return self.n_memory + self.n_data


@dataclass
class LeclParams:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        n = self.b.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"LECL A must be ({n}, {n}), got {self.A.shape}")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("LECL parameters must be finite")

    @classmethod
    def identity(cls, n: int) -> "LeclParams":
        return cls(np.eye(n), np.zeros(n))


@dataclass
class ChannelState:
    m: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        self.m = np.atleast_1d(np.asarray(self.m, dtype=float))
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.m, self.x])

    @classmethod
    def from_vector(cls, v, n_memory: int) -> "ChannelState":
        v = np.asarray(v, dtype=float)
        return cls(v[:n_memory], v[n_memory:])


@dataclass
class Trajectory:
    """Rollout record. ``memory`` is (T+1, M, n_m), ``data`` (T+1, M, n_x),
    ``output`` (T+1, n_x) is the weighted channel sum."""

    memory: np.ndarray
    data: np.ndarray
    output: np.ndarray

    def __len__(self) -> int:
        return self.output.shape[0]

    def channel_state(self, t: int, k: int) -> ChannelState:
        return ChannelState(self.memory[t, k], self.data[t, k])

    def states(self, k: int) -> np.ndarray:
        """(T+1, n) array of concatenated (m, x) for channel ``k``."""
        return np.concatenate([self.memory[:, k], self.data[:, k]], axis=1)


@dataclass
class QdmModel:
    config: QdmConfig
    circuits: List[list]  # per channel: list of layers, each a list of GateOp
    theta: np.ndarray  # (M, P)
    m0: np.ndarray  # (M, n_m)
    x0: np.ndarray  # (M, n_x)
    lecl: Optional[List[LeclParams]] = None
    weights: np.ndarray = None
    hamiltonians: Optional[List[HamiltonianSpec]] = None

    def __post_init__(self):
        M = self.config.channels
        self.theta = np.asarray(self.theta, dtype=float).reshape(M, -1)
        self.m0 = np.asarray(self.m0, dtype=float).reshape(M, self.config.n_memory)
        self.x0 = np.asarray(self.x0, dtype=float).reshape(M, self.config.n_data)
        self.weights = np.ones(M) if self.weights is None else np.asarray(self.weights, dtype=float)
        if len(self.circuits) != M:
            raise ValueError("one circuit per channel required")
        n_params = self.theta.shape[1]
        for circuit in self.circuits:
            for layer in circuit:
                for gate in layer:
                    if gate.param is not None and gate.param >= n_params:
                        raise ValueError(f"gate parameter index {gate.param} >= {n_params}")
        if np.any(np.abs(self.m0) > 1):
            raise ValueError("initial memory must lie in [-1, 1]")

    @property
    def n_params(self) -> int:
        return self.theta.shape[1]

    @property
    def n_qubits(self) -> int:
        return self.config.n_qubits

    def initial_state(self, k: int) -> ChannelState:
        return ChannelState(self.m0[k], self.x0[k])

    def lecl_for(self, k: int) -> Optional[LeclParams]:
        return None if self.lecl is None else self.lecl[k]

    def copy(self) -> "QdmModel":
        return dataclasses.replace(
            self,
            theta=self.theta.copy(),
            m0=self.m0.copy(),
            x0=self.x0.copy(),
            weights=self.weights.copy(),
            lecl=None if self.lecl is None else [LeclParams(l.A.copy(), l.b.copy()) for l in self.lecl],
        )


# ---------------------------------------------------------------------------
# Encoding


def encoding_angles(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if np.any(np.abs(v) > 1.0):
        raise ValueError(f"encoded values must lie in [-1, 1], got {v}")
    return np.arccos(v)


def product_states(angles: np.ndarray) -> np.ndarray:
    """Batch of product states ``(x)_i R_Y(angle_i)|0>``; angles (B, n) -> (B, 2^n)."""
    angles = np.atleast_2d(angles)
    B, n = angles.shape
    c, s = np.cos(angles / 2), np.sin(angles / 2)
    psi = np.ones((B, 1))
    for i in range(n):
        psi = (psi[:, :, None] * np.stack([c[:, i], s[:, i]], axis=1)[:, None, :]).reshape(B, -1)
    return psi.astype(complex)


def encode(v) -> QuantumState:
    """Product state with ``<Z_i> = v_i`` on every qubit."""
    angles = encoding_angles(np.atleast_1d(v))
    return QuantumState(product_states(angles[None])[0], angles.shape[0], "pure")


# ---------------------------------------------------------------------------
# Ansatz construction


def _u1(q: int, start: int) -> list:
    # R_X R_Z R_X as an operator product; the rightmost factor acts first
    return [
        GateOp("RX", (q,), param=start + 2),
        GateOp("RZ", (q,), param=start + 1),
        GateOp("RX", (q,), param=start),
    ]


def build_ansatz(config: QdmConfig, hamiltonians: Optional[Sequence[HamiltonianSpec]] = None):
    """Return ``(circuits, n_params, hamiltonians)``; one layered circuit per channel.

    TIEA Hamiltonians are drawn from the config seed unless supplied.
    """
    n = config.n_qubits
    M = config.channels
    if config.ansatz == "TIEA" and hamiltonians is None:
        rng = sub_rng(config.seed, "hamiltonian")
        hamiltonians = [HamiltonianSpec.random(n, rng, tau=config.tau) for _ in range(M)]
    circuits = []
    for k in range(M):
        layers = []
        p = 0
        for _ in range(config.depth if config.ansatz != "closed-form" else 1):
            layer = []
            if config.ansatz == "TIEA":
                for q in range(n):
                    layer += _u1(q, p)
                    p += 3
                layer.append(GateOp("HAM", (), hamiltonian=hamiltonians[k]))
            elif config.ansatz == "HEA":
                layer += [GateOp("CZ", (q, q + 1)) for q in range(n - 1)]
                if n == 2:
                    for q in range(n):
                        layer.append(GateOp("RY", (q,), param=p))
                        p += 1
                else:
                    for q in range(n):
                        layer += _u1(q, p)
                        p += 3
            elif config.ansatz == "closed-form":
                layer.append(GateOp("RPP", (0, 1), param=0, axes="YZ"))
                layer.append(GateOp("RPP", (0, 1), param=1, axes="ZY"))
                p = 2
            if layer:
                layers.append(layer)
        circuits.append(layers)
        n_params = p
    return circuits, n_params, (list(hamiltonians) if config.ansatz == "TIEA" else None)


def build_model(config: QdmConfig, x0=None, theta=None) -> QdmModel:
    """Fresh model with seeded parameter, memory, and Hamiltonian draws."""
    circuits, n_params, hams = build_ansatz(config)
    M, n_m, n_x = config.channels, config.n_memory, config.n_data
    if theta is None:
        theta = sub_rng(config.seed, "theta").uniform(
            -config.theta_scale * np.pi, config.theta_scale * np.pi, (M, n_params))
    m0 = sub_rng(config.seed, "m0").uniform(-config.m0_scale, config.m0_scale, (M, n_m))
    if x0 is None:
        x0 = np.zeros(n_x)
    x0 = np.broadcast_to(np.asarray(x0, dtype=float) / M, (M, n_x)).copy()
    lecl = [LeclParams.identity(config.n_qubits) for _ in range(M)] if config.use_lecl else None
    return QdmModel(config, circuits, np.asarray(theta, dtype=float), m0, x0, lecl=lecl, hamiltonians=hams)


def closed_form_model(theta1: float, theta2: float, m0=0.0, x0=0.0, **config_kwargs) -> QdmModel:
    """Single-channel (1,1) model realizing the closed-form map with two-body rotations."""
    config = QdmConfig(ansatz="closed-form", **config_kwargs)
    model = build_model(config, theta=[[theta1, theta2]])
    model.m0[:] = m0
    model.x0[:] = x0
    return model


# ---------------------------------------------------------------------------
# Stepping


def compile_channel(model: QdmModel, k: int, theta: Optional[np.ndarray] = None,
                    noise: Optional[NoiseSpec] = None) -> Optional[np.ndarray]:
    """Heisenberg-picture <Z> observables of channel ``k``'s circuit at ``theta``."""
    theta = model.theta[k] if theta is None else theta
    return heisenberg_z(model.circuits[k], model.n_qubits, theta, noise)


def evaluate_circuit(model: QdmModel, k: int, states: Optional[np.ndarray], thetas: Optional[np.ndarray] = None,
                     noise: Optional[NoiseSpec] = None, angles: Optional[np.ndarray] = None,
                     observables: Optional[np.ndarray] = None) -> np.ndarray:
    """Raw per-qubit <Z> for a batch of channel states (B, n) -> (B, n).

    ``angles`` overrides the encoding angles (used for encoding parameter
    shifts). ``observables`` from :func:`compile_channel` replaces direct
    simulation; they must have been compiled for the same theta and noise.
    """
    if angles is None:
        angles = encoding_angles(states)
    angles = np.atleast_2d(angles)
    _counter.count += angles.shape[0]
    psi = product_states(angles)
    if observables is not None:
        return quadratic_expectations(observables, psi)
    if thetas is None:
        thetas = model.theta[k]
    return simulate_z(psi, model.circuits[k], model.n_qubits, thetas, noise)


def apply_lecl(lecl: Optional[LeclParams], v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if lecl is None:
        return np.clip(v, -CLAMP, CLAMP)
    if v.shape[-1] != lecl.b.shape[0]:
        raise ValueError(f"LECL expects vectors of length {lecl.b.shape[0]}, got {v.shape[-1]}")
    return np.clip(v @ lecl.A.T + lecl.b, -CLAMP, CLAMP)


def qdm_step(model: QdmModel, channel: int, state: ChannelState, noise: Optional[NoiseSpec] = None,
             rng: Optional[np.random.Generator] = None) -> ChannelState:
    raw = evaluate_circuit(model, channel, state.vector[None], noise=noise)[0]
    if noise is not None and noise.shot_sigma > 0 and rng is not None:
        raw = raw + rng.normal(0.0, noise.shot_sigma, raw.shape)
    return ChannelState.from_vector(apply_lecl(model.lecl_for(channel), raw), model.config.n_memory)


def closed_form_step(theta1: float, theta2: float, m: float, x: float):
    """Closed-form (1,1) map; vectorizes over array inputs."""
    m = np.asarray(m, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(m) > 1) or np.any(np.abs(x) > 1):
        raise ValueError("closed-form map is defined on [-1, 1]^2")
    m_next = m * np.cos(theta1) - x * np.sqrt(1 - m**2) * np.sin(theta1)
    x_next = x * np.cos(theta2) - m * np.sqrt(1 - x**2) * np.sin(theta2)
    if m_next.ndim == 0:
        return float(m_next), float(x_next)
    return m_next, x_next


def generate_trajectory(model: QdmModel, steps: int, noise: Optional[NoiseSpec] = None,
                        rng: Optional[np.random.Generator] = None) -> Trajectory:
    if steps < 0:
        raise ValueError("steps must be >= 0")
    cfg = model.config
    M, n_m = cfg.channels, cfg.n_memory
    states = np.zeros((steps + 1, M, cfg.n_qubits))
    for k in range(M):
        states[0, k] = model.initial_state(k).vector
        lecl = model.lecl_for(k)
        obs = compile_channel(model, k, noise=noise) if steps else None
        for t in range(steps):
            raw = evaluate_circuit(model, k, states[t, k][None], noise=noise, observables=obs)[0]
            if noise is not None and noise.shot_sigma > 0 and rng is not None:
                raw = raw + rng.normal(0.0, noise.shot_sigma, raw.shape)
            states[t + 1, k] = apply_lecl(lecl, raw)
    memory = states[:, :, :n_m]
    data = states[:, :, n_m:]
    output = np.einsum("k,tkj->tj", model.weights, data)
    return Trajectory(memory, data, output)


# ---------------------------------------------------------------------------
# Checkpoints


def _gate_to_dict(g: GateOp) -> dict:
    d = {"kind": g.kind, "targets": list(g.targets)}
    for key in ("angle", "param", "axes"):
        if getattr(g, key) is not None:
            d[key] = getattr(g, key)
    return d


def model_to_dict(model: QdmModel) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(model.config),
        "theta": model.theta.tolist(),
        "m0": model.m0.tolist(),
        "x0": model.x0.tolist(),
        "weights": model.weights.tolist(),
        "lecl": None if model.lecl is None else [{"A": l.A.tolist(), "b": l.b.tolist()} for l in model.lecl],
        "hamiltonians": None if model.hamiltonians is None else [
            {"h": h.h.tolist(), "J": h.J.tolist(), "tau": h.tau} for h in model.hamiltonians
        ],
    }


def model_from_dict(d: dict) -> QdmModel:
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
    config = QdmConfig(**d["config"])
    hams = None
    if d.get("hamiltonians") is not None:
        hams = [HamiltonianSpec(config.n_qubits, np.array(h["h"]), np.array(h["J"]), h["tau"])
                for h in d["hamiltonians"]]
    circuits, _, hams = build_ansatz(config, hams)
    lecl = None if d["lecl"] is None else [LeclParams(np.array(l["A"]), np.array(l["b"])) for l in d["lecl"]]
    return QdmModel(config, circuits, np.array(d["theta"]), np.array(d["m0"]), np.array(d["x0"]),
                    lecl=lecl, weights=np.array(d["weights"]), hamiltonians=hams)


def save_model(model: QdmModel, path) -> None:
    # float repr in JSON is shortest-roundtrip, so the checkpoint is bit-exact
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


def load_model(path) -> QdmModel:
    return model_from_dict(json.loads(Path(path).read_text()))
