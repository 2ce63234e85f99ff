"""Exact simulation of small qubit registers.

States are dense: a length ``2**n`` amplitude vector (pure) or a ``2**n x 2**n``
density matrix (mixed). Qubit 0 is the most significant bit of the basis index,
and ``sigma_z`` has eigenvalue +1 on ``|0>``.

The public functions act on a single :class:`QuantumState`. The underscore
kernels take a leading batch axis so that many circuits (parameter shifts,
grids of inputs) can be simulated in one numpy call.
"""
from __future__ import annotations

import dataclasses
import functools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

MAX_QUBITS = 6

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

ROTATIONS = ("RX", "RY", "RZ")
GATE_KINDS = ROTATIONS + ("CZ", "RPP", "HAM")


class SimulationError(ValueError):
    """Raised for invalid states, gates, or dimension mismatches."""


def _check_n_qubits(n_qubits: int) -> None:
    if not (1 <= n_qubits <= MAX_QUBITS):
        raise SimulationError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")


@dataclass(frozen=True)
class QuantumState:
    data: np.ndarray
    n_qubits: int
    representation: str = "pure"

    def __post_init__(self):
        if self.representation not in ("pure", "mixed"):
            raise SimulationError(f"unknown representation {self.representation!r}")
        dim = 2**self.n_qubits
        shape = (dim,) if self.representation == "pure" else (dim, dim)
        if self.data.shape != shape:
            raise SimulationError(f"expected data of shape {shape}, got {self.data.shape}")

    @property
    def is_pure(self) -> bool:
        return self.representation == "pure"

    def to_mixed(self) -> "QuantumState":
        if not self.is_pure:
            return self
        return QuantumState(np.outer(self.data, self.data.conj()), self.n_qubits, "mixed")

    def probabilities(self) -> np.ndarray:
        if self.is_pure:
            return np.abs(self.data) ** 2
        return np.real(np.diag(self.data)).copy()

    def check(self, atol: float = 1e-12) -> None:
        """Raise :class:`SimulationError` unless the state is physical within ``atol``."""
        if self.is_pure:
            norm = np.sum(np.abs(self.data) ** 2)
            if abs(norm - 1.0) > atol:
                raise SimulationError(f"state norm {norm!r} deviates from 1")
            return
        rho = self.data
        if abs(np.trace(rho) - 1.0) > atol:
            raise SimulationError(f"trace {np.trace(rho)!r} deviates from 1")
        if np.max(np.abs(rho - rho.conj().T)) > atol:
            raise SimulationError("density matrix is not Hermitian")
        if np.linalg.eigvalsh(rho).min() < -1e-10:
            raise SimulationError("density matrix has negative eigenvalues")


@dataclass(frozen=True)
class HamiltonianSpec:
    """Transverse-field Ising Hamiltonian ``sum h_i X_i + sum_{i>j} J_ij Z_i Z_j``."""

    n_qubits: int
    h: np.ndarray
    J: np.ndarray
    tau: float = 1.0

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        J = np.tril(np.asarray(self.J, dtype=float), k=-1)
        if h.shape != (self.n_qubits,) or J.shape != (self.n_qubits, self.n_qubits):
            raise SimulationError("h must have length n_qubits and J shape (n_qubits, n_qubits)")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(J)) and np.isfinite(self.tau)):
            raise SimulationError("Hamiltonian coefficients must be finite")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "J", J)

    @classmethod
    def random(cls, n_qubits: int, rng: np.random.Generator, tau: float = 1.0) -> "HamiltonianSpec":
        h = rng.uniform(-1.0, 1.0, n_qubits)
        J = np.tril(rng.uniform(-1.0, 1.0, (n_qubits, n_qubits)), k=-1)
        return cls(n_qubits, h, J, tau)

    def matrix(self) -> np.ndarray:
        n = self.n_qubits
        H = np.zeros((2**n, 2**n), dtype=complex)
        for i in range(n):
            H += self.h[i] * pauli_string_matrix(_single(n, i, "X"))
            for j in range(i):
                if self.J[i, j] != 0.0:
                    H += self.J[i, j] * pauli_string_matrix(_pair(n, i, j, "Z", "Z"))
        return H

    def unitary(self, tau: Optional[float] = None) -> np.ndarray:
        """``exp(-i H tau)`` via Hermitian eigendecomposition."""
        tau = self.tau if tau is None else tau
        evals, evecs = self._eigh
        return (evecs * np.exp(-1j * evals * tau)) @ evecs.conj().T

    @functools.cached_property
    def _eigh(self):
        return np.linalg.eigh(self.matrix())


@dataclass(frozen=True)
class GateOp:
    """One circuit element.

    ``angle`` is a literal rotation angle; ``param`` indexes a parameter vector
    supplied at simulation time. Exactly one of them is used by rotation gates.
    ``axes`` names the two Paulis of an ``RPP`` gate ``exp(-i angle/2 P_a P_b)``.
    """

    kind: str
    targets: tuple
    angle: Optional[float] = None
    param: Optional[int] = None
    axes: Optional[str] = None
    hamiltonian: Optional[HamiltonianSpec] = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise SimulationError(f"unknown gate kind {self.kind!r}")
        targets = tuple(int(t) for t in self.targets)
        object.__setattr__(self, "targets", targets)
        if len(set(targets)) != len(targets):
            raise SimulationError(f"gate targets must be distinct: {targets}")
        if self.kind in ROTATIONS + ("RPP",):
            if (self.angle is None) == (self.param is None):
                raise SimulationError(f"{self.kind} needs exactly one of angle / param")
            if self.angle is not None and not np.isfinite(self.angle):
                raise SimulationError(f"non-finite angle {self.angle!r}")
        if self.kind in ROTATIONS and len(targets) != 1:
            raise SimulationError(f"{self.kind} acts on one qubit")
        if self.kind in ("CZ", "RPP") and len(targets) != 2:
            raise SimulationError(f"{self.kind} acts on two qubits")
        if self.kind == "RPP" and (self.axes is None or len(self.axes) != 2
                                   or any(a not in "XYZ" for a in self.axes)):
            raise SimulationError(f"RPP axes must be two of X/Y/Z, got {self.axes!r}")
        if self.kind == "HAM":
            if self.hamiltonian is None:
                raise SimulationError("HAM gate needs a HamiltonianSpec")
            object.__setattr__(self, "targets", tuple(range(self.hamiltonian.n_qubits)))

    @property
    def is_parametrized(self) -> bool:
        return self.param is not None


@dataclass(frozen=True)
class ObservableSpec:
    terms: tuple  # of (pauli string, coefficient)

    def __post_init__(self):
        terms = tuple((str(p), float(c)) for p, c in self.terms)
        if not terms:
            raise SimulationError("observable needs at least one term")
        n = len(terms[0][0])
        for p, _ in terms:
            if len(p) != n or any(ch not in PAULI for ch in p):
                raise SimulationError(f"bad Pauli string {p!r}")
        object.__setattr__(self, "terms", terms)

    @property
    def n_qubits(self) -> int:
        return len(self.terms[0][0])

    def matrix(self) -> np.ndarray:
        return sum(c * pauli_string_matrix(p) for p, c in self.terms)

    @classmethod
    def z(cls, n_qubits: int, qubit: int) -> "ObservableSpec":
        return cls(((_single(n_qubits, qubit, "Z"), 1.0),))

    @classmethod
    def zz(cls, n_qubits: int, i: int, j: int) -> "ObservableSpec":
        return cls(((_pair(n_qubits, i, j, "Z", "Z"), 1.0),))


@dataclass(frozen=True)
class NoiseSpec:
    """Noise model applied when a circuit is simulated as a density matrix.

    ``placement`` controls where depolarizing acts: after every gate, after
    every ansatz layer, or once per step. ``depolarizing_scope`` selects the
    register-wide channel ``(1-p) rho + p I/2^n`` or independent per-qubit
    channels. Amplitude damping acts once per qubit at the end of each step;
    ``readout_matrix`` is either a 2x2 response applied to every qubit or a
    full ``2^n x 2^n`` response. ``shot_sigma`` is the standard deviation of
    additive Gaussian noise on expectations (applied by the model layer).
    """

    depolarizing_p: float = 0.0
    amp_damp_gamma: float = 0.0
    readout_matrix: Optional[np.ndarray] = None
    placement: str = "per-layer"
    depolarizing_scope: str = "global"
    shot_sigma: float = 0.0

    def __post_init__(self):
        for name in ("depolarizing_p", "amp_damp_gamma"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise SimulationError(f"{name} must lie in [0, 1], got {value}")
        if self.placement not in ("per-gate", "per-layer", "per-step"):
            raise SimulationError(f"unknown placement {self.placement!r}")
        if self.depolarizing_scope not in ("global", "per-qubit"):
            raise SimulationError(f"unknown depolarizing scope {self.depolarizing_scope!r}")
        if self.shot_sigma < 0:
            raise SimulationError("shot_sigma must be non-negative")
        if self.readout_matrix is not None:
            M = np.asarray(self.readout_matrix, dtype=float)
            check_response_matrix(M)
            object.__setattr__(self, "readout_matrix", M)

    @classmethod
    def symmetric_readout(cls, epsilon: float, **kwargs) -> "NoiseSpec":
        M = np.array([[1 - epsilon, epsilon], [epsilon, 1 - epsilon]])
        return cls(readout_matrix=M, **kwargs)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if self.readout_matrix is not None:
            d["readout_matrix"] = self.readout_matrix.tolist()
        return d


# ---------------------------------------------------------------------------
# Pauli helpers

def _single(n: int, q: int, p: str) -> str:
    return "".join(p if k == q else "I" for k in range(n))


def _pair(n: int, i: int, j: int, pi: str, pj: str) -> str:
    return "".join(pi if k == i else pj if k == j else "I" for k in range(n))


@functools.lru_cache(maxsize=512)
def pauli_string_matrix(paulis: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for p in paulis:
        out = np.kron(out, PAULI[p])
    out.setflags(write=False)
    return out


def rotation_matrices(axis: str, angles) -> np.ndarray:
    """``exp(-i angle/2 sigma_axis)`` for an array of angles -> shape (..., 2, 2)."""
    angles = np.asarray(angles, dtype=float)
    c = np.cos(angles / 2)[..., None, None]
    s = np.sin(angles / 2)[..., None, None]
    return c * PAULI["I"] - 1j * s * PAULI[axis]


@functools.lru_cache(maxsize=64)
def _cz_diagonal(n: int, i: int, j: int) -> np.ndarray:
    idx = np.arange(2**n)
    bi = (idx >> (n - 1 - i)) & 1
    bj = (idx >> (n - 1 - j)) & 1
    diag = np.where(bi & bj, -1.0, 1.0)
    diag.setflags(write=False)
    return diag


# ---------------------------------------------------------------------------
# Batched kernels. ``psi`` is (B, D) for pure states and (B, D, D) for mixed.

def _apply_1q(psi: np.ndarray, mat: np.ndarray, q: int, n: int) -> np.ndarray:
    """Apply a (B, 2, 2) or (2, 2) operator K on qubit q: psi -> K psi or K rho K^dag."""
    B = psi.shape[0]
    mat = np.broadcast_to(mat, (B, 2, 2))
    lo, hi = 2**q, 2 ** (n - q - 1)
    if psi.ndim == 2:
        t = psi.reshape(B, lo, 2, hi)
        return np.einsum("bij,bajc->baic", mat, t).reshape(B, -1)
    t = psi.reshape(B, lo, 2, hi, lo, 2, hi)
    t = np.einsum("bij,bajcdke,blk->baicdle", mat, t, mat.conj(), optimize=True)
    return t.reshape(psi.shape)


def _apply_diag(psi: np.ndarray, diag: np.ndarray) -> np.ndarray:
    if psi.ndim == 2:
        return psi * diag
    return psi * diag[:, None] * diag.conj()[None, :]


def _apply_dense(psi: np.ndarray, U: np.ndarray) -> np.ndarray:
    if psi.ndim == 2:
        return psi @ np.swapaxes(U, -1, -2)
    return U @ psi @ np.swapaxes(U.conj(), -1, -2)


def _apply_pauli_rotation(psi, paulis: dict, angles, n: int) -> np.ndarray:
    """exp(-i angle/2 P) with P a Pauli product given as {qubit: axis}."""
    c = np.cos(np.asarray(angles) / 2)
    s = np.sin(np.asarray(angles) / 2)
    if psi.ndim == 2:
        p_psi = psi
        for q, a in paulis.items():
            p_psi = _apply_1q(p_psi, PAULI[a], q, n)
        return c[:, None] * psi - 1j * s[:, None] * p_psi
    # mixed: build the dense 2^n operator per batch element
    P = pauli_string_matrix("".join(paulis.get(k, "I") for k in range(n)))
    U = c[:, None, None] * np.eye(2**n) - 1j * s[:, None, None] * P
    return _apply_dense(psi, U)


def _apply_gate_batch(psi, gate: GateOp, n: int, thetas: Optional[np.ndarray]) -> np.ndarray:
    B = psi.shape[0]
    if gate.kind in ROTATIONS + ("RPP",):
        if gate.param is not None:
            if thetas is None:
                raise SimulationError("parametrized gate needs a parameter vector")
            angles = np.broadcast_to(thetas[..., gate.param], (B,))
        else:
            angles = np.full(B, gate.angle)
        if gate.kind == "RPP":
            return _apply_pauli_rotation(psi, dict(zip(gate.targets, gate.axes)), angles, n)
        return _apply_1q(psi, rotation_matrices(gate.kind[1], angles), gate.targets[0], n)
    if gate.kind == "CZ":
        return _apply_diag(psi, _cz_diagonal(n, *gate.targets))
    return _apply_dense(psi, gate.hamiltonian.unitary())


def _depolarize_batch(rho: np.ndarray, p: float, n: int, qubits: Sequence[int] = ()) -> np.ndarray:
    if p == 0.0:
        return rho
    if not qubits:
        dim = rho.shape[-1]
        # trace-weighted so the map stays linear on non-physical probe operators
        trace = np.trace(rho, axis1=-2, axis2=-1)[:, None, None]
        return (1 - p) * rho + p * trace * np.eye(dim) / dim
    for q in qubits:
        twirl = sum(_apply_1q(rho, PAULI[a], q, n) for a in "IXYZ") / 4
        rho = (1 - p) * rho + p * twirl
    return rho


def _amplitude_damp_batch(rho: np.ndarray, gamma: float, q: int, n: int) -> np.ndarray:
    if gamma == 0.0:
        return rho
    K0 = np.array([[1, 0], [0, np.sqrt(1 - gamma)]], dtype=complex)
    K1 = np.array([[0, np.sqrt(gamma)], [0, 0]], dtype=complex)
    return _apply_1q(rho, K0, q, n) + _apply_1q(rho, K1, q, n)


def _probabilities_batch(psi: np.ndarray) -> np.ndarray:
    if psi.ndim == 2:
        return np.abs(psi) ** 2
    return np.real(np.diagonal(psi, axis1=-2, axis2=-1))


def _readout_batch(probs: np.ndarray, M: Optional[np.ndarray], n: int) -> np.ndarray:
    if M is None:
        return probs
    B = probs.shape[0]
    if M.shape == (2, 2):
        for q in range(n):
            t = probs.reshape(B, 2**q, 2, 2 ** (n - q - 1))
            probs = np.einsum("ij,bajc->baic", M, t).reshape(B, -1)
        return probs
    if M.shape != (2**n, 2**n):
        raise SimulationError(f"readout matrix shape {M.shape} does not match {n} qubits")
    return probs @ M.T


def _z_expectations(probs: np.ndarray, n: int) -> np.ndarray:
    """Per-qubit <Z_i> from computational-basis probabilities -> (B, n)."""
    B = probs.shape[0]
    out = np.empty((B, n))
    for q in range(n):
        t = probs.reshape(B, 2**q, 2, 2 ** (n - q - 1)).sum(axis=(1, 3))
        out[:, q] = t[:, 0] - t[:, 1]
    return out


def simulate_z(
    psi: np.ndarray,
    layers: Sequence[Sequence[GateOp]],
    n: int,
    thetas: Optional[np.ndarray] = None,
    noise: Optional[NoiseSpec] = None,
) -> np.ndarray:
    """Run a layered circuit on a batch of states and return per-qubit <Z>.

    ``psi`` is (B, 2^n) or (B, 2^n, 2^n); with ``noise`` a pure batch is
    promoted to density matrices first. ``thetas`` is (B, P) or (P,).
    """
    if thetas is not None:
        thetas = np.asarray(thetas, dtype=float)
    if noise is not None and psi.ndim == 2:
        psi = np.einsum("bi,bj->bij", psi, psi.conj())
    mixed = psi.ndim == 3
    p = noise.depolarizing_p if noise is not None else 0.0
    scope_all = noise is not None and noise.depolarizing_scope == "per-qubit"
    for layer in layers:
        for gate in layer:
            psi = _apply_gate_batch(psi, gate, n, thetas)
            if mixed and p and noise.placement == "per-gate":
                psi = _depolarize_batch(psi, p, n, gate.targets if scope_all else ())
        if mixed and p and noise.placement == "per-layer":
            psi = _depolarize_batch(psi, p, n, range(n) if scope_all else ())
    if mixed and noise is not None:
        if p and noise.placement == "per-step":
            psi = _depolarize_batch(psi, p, n, range(n) if scope_all else ())
        for q in range(n):
            psi = _amplitude_damp_batch(psi, noise.amp_damp_gamma, q, n)
    probs = _probabilities_batch(psi)
    if noise is not None:
        probs = _readout_batch(probs, noise.readout_matrix, n)
    return _z_expectations(probs, n)


# ---------------------------------------------------------------------------
# Single-state API

def init_state(n_qubits: int, representation: str = "pure") -> QuantumState:
    _check_n_qubits(n_qubits)
    dim = 2**n_qubits
    if representation == "pure":
        data = np.zeros(dim, dtype=complex)
        data[0] = 1.0
    else:
        data = np.zeros((dim, dim), dtype=complex)
        data[0, 0] = 1.0
    return QuantumState(data, n_qubits, representation)


def _check_targets(state: QuantumState, gate: GateOp) -> None:
    if any(t < 0 or t >= state.n_qubits for t in gate.targets):
        raise SimulationError(f"gate targets {gate.targets} invalid for {state.n_qubits} qubits")
    if gate.kind == "HAM" and gate.hamiltonian.n_qubits != state.n_qubits:
        raise SimulationError("Hamiltonian dimension does not match state")


def apply_gate(state: QuantumState, gate: GateOp, theta: Optional[Sequence[float]] = None) -> QuantumState:
    _check_targets(state, gate)
    thetas = None if theta is None else np.asarray(theta, dtype=float)[None, :]
    if thetas is not None and not np.all(np.isfinite(thetas)):
        raise SimulationError("non-finite gate parameter")
    out = _apply_gate_batch(state.data[None], gate, state.n_qubits, thetas)[0]
    return QuantumState(out, state.n_qubits, state.representation)


def evolve_hamiltonian(state: QuantumState, spec: HamiltonianSpec) -> QuantumState:
    if spec.n_qubits != state.n_qubits:
        raise SimulationError(
            f"Hamiltonian acts on {spec.n_qubits} qubits, state has {state.n_qubits}"
        )
    return apply_gate(state, GateOp("HAM", (), hamiltonian=spec))


def expectation(state: QuantumState, obs: ObservableSpec) -> float:
    if obs.n_qubits != state.n_qubits:
        raise SimulationError("observable and state dimensions differ")
    H = obs.matrix()
    if state.is_pure:
        value = np.vdot(state.data, H @ state.data)
    else:
        value = np.trace(H @ state.data)
    if abs(value.imag) >= 1e-10:
        raise SimulationError(f"expectation has imaginary part {value.imag:.3e}")
    return float(value.real)


def apply_noise_channel(state: QuantumState, channel: str, strength: float,
                        qubits: Optional[Sequence[int]] = None) -> QuantumState:
    """Apply ``"depolarizing"`` (register-wide unless ``qubits`` given) or
    ``"amplitude_damping"`` (on each of ``qubits``, default all)."""
    if state.is_pure:
        raise SimulationError("noise channels need a mixed state; call to_mixed() first")
    if not (0.0 <= strength <= 1.0):
        raise SimulationError(f"channel strength must lie in [0, 1], got {strength}")
    n = state.n_qubits
    rho = state.data[None]
    if channel == "depolarizing":
        rho = _depolarize_batch(rho, strength, n, tuple(qubits or ()))
    elif channel == "amplitude_damping":
        for q in (range(n) if qubits is None else qubits):
            rho = _amplitude_damp_batch(rho, strength, q, n)
    else:
        raise SimulationError(f"unknown channel {channel!r}")
    return QuantumState(rho[0], n, "mixed")


def check_response_matrix(M: np.ndarray) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise SimulationError(f"response matrix must be square, got {M.shape}")
    if np.any(M < 0) or np.max(np.abs(M.sum(axis=0) - 1.0)) > 1e-12:
        raise SimulationError("response matrix must be column-stochastic")


def apply_readout_error(p_ideal, M) -> np.ndarray:
    p = np.asarray(p_ideal, dtype=float)
    M = np.asarray(M, dtype=float)
    check_response_matrix(M)
    if M.shape[1] != p.shape[0]:
        raise SimulationError(f"response matrix {M.shape} does not match {p.shape[0]} outcomes")
    if abs(p.sum() - 1.0) > 1e-9:
        raise SimulationError("ideal probabilities must sum to 1")
    return M @ p


def heisenberg_z(
    layers: Sequence[Sequence[GateOp]],
    n: int,
    thetas: Optional[np.ndarray] = None,
    noise: Optional[NoiseSpec] = None,
) -> Optional[np.ndarray]:
    """Effective observables ``O_i`` with ``<Z_i>_out = Tr(O_i rho_in)``; shape (n, D, D).

    Noiseless circuits go through the unitary; noisy ones are probed on a
    Hermitian operator basis, which is only done up to 4 qubits (returns None
    above that, callers then simulate directly).
    """
    dim = 2**n
    if noise is None:
        U = np.swapaxes(
            _run_pure_basis(layers, n, thetas), 0, 1
        )  # columns are U|a>
        out = np.empty((n, dim, dim), dtype=complex)
        for q in range(n):
            z = np.real(np.diag(pauli_string_matrix(_single(n, q, "Z"))))
            out[q] = U.conj().T @ (z[:, None] * U)
        return out
    if n > 4:
        return None
    basis = []
    index = []
    for a in range(dim):
        for b in range(a, dim):
            if a == b:
                E = np.zeros((dim, dim), dtype=complex)
                E[a, a] = 1
                basis.append(E)
                index.append((a, b, "d"))
            else:
                E = np.zeros((dim, dim), dtype=complex)
                E[a, b] = E[b, a] = 1
                basis.append(E)
                index.append((a, b, "r"))
                E = np.zeros((dim, dim), dtype=complex)
                E[a, b], E[b, a] = 1j, -1j
                basis.append(E)
                index.append((a, b, "i"))
    values = simulate_z(np.array(basis), layers, n, thetas, noise)  # (D^2, n)
    out = np.zeros((n, dim, dim), dtype=complex)
    for row, (a, b, kind) in enumerate(index):
        v = values[row]
        if kind == "d":
            out[:, a, a] += v
        elif kind == "r":
            out[:, a, b] += v / 2
            out[:, b, a] += v / 2
        else:
            # Tr(O i(E_ab - E_ba)) = 2 Im O_ab
            out[:, a, b] += 1j * v / 2
            out[:, b, a] -= 1j * v / 2
    return out


def _run_pure_basis(layers, n, thetas) -> np.ndarray:
    dim = 2**n
    psi = np.eye(dim, dtype=complex)
    th = None if thetas is None else np.asarray(thetas, dtype=float)
    for layer in layers:
        for gate in layer:
            psi = _apply_gate_batch(psi, gate, n, th)
    return psi


def quadratic_expectations(observables: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """``<psi_b| O_i |psi_b>`` for a batch (B, D) -> (B, n)."""
    o_psi = observables @ psi.T  # (n, D, B)
    return np.real(np.sum(psi.conj().T[None] * o_psi, axis=1)).T
