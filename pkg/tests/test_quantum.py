import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from qdm.quantum import (GateOp, HamiltonianSpec, NoiseSpec, ObservableSpec, QuantumState, SimulationError,
                         apply_gate, apply_noise_channel, apply_readout_error, evolve_hamiltonian, expectation,
                         heisenberg_z, init_state, pauli_string_matrix, quadratic_expectations, simulate_z)

Z1 = ObservableSpec.z(1, 0)


def ry(theta):
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def test_init_state_examples():
    assert np.allclose(init_state(1).data, [1, 0])
    assert np.allclose(init_state(2).data, [1, 0, 0, 0])
    assert np.allclose(init_state(1, "mixed").data, [[1, 0], [0, 0]])
    init_state(3, "mixed").check()


@pytest.mark.parametrize("n", [0, 7])
def test_init_state_rejects_size(n):
    with pytest.raises(SimulationError):
        init_state(n)


def test_gate_examples():
    s = apply_gate(init_state(1), GateOp("RY", (0,), angle=np.pi))
    assert np.allclose(s.data, [0, 1], atol=1e-15)
    s = apply_gate(init_state(1), GateOp("RX", (0,), angle=np.pi / 2))
    assert np.allclose(s.data, [0.7071068, -0.7071068j], atol=1e-7)
    psi = QuantumState(np.array([0, 0, 0, 1], dtype=complex), 2)
    assert np.allclose(apply_gate(psi, GateOp("CZ", (0, 1))).data, [0, 0, 0, -1])


def test_gate_validation():
    with pytest.raises(SimulationError):
        apply_gate(init_state(1), GateOp("RY", (1,), angle=0.1))
    with pytest.raises(SimulationError):
        GateOp("RY", (0,), angle=np.nan)
    with pytest.raises(SimulationError):
        GateOp("CZ", (0, 0))
    with pytest.raises(SimulationError):
        GateOp("RPP", (0, 1), angle=0.1, axes="XQ")


def test_qubit_zero_is_most_significant():
    s = apply_gate(init_state(2), GateOp("RY", (0,), angle=np.pi))
    assert np.allclose(s.data, [0, 0, 1, 0], atol=1e-15)


def test_mixed_gate_matches_pure():
    rng = np.random.default_rng(1)
    psi = init_state(3)
    for q in range(3):
        psi = apply_gate(psi, GateOp("RY", (q,), angle=rng.uniform(0, np.pi)))
    rho = psi.to_mixed()
    g = GateOp("RPP", (0, 2), angle=0.7, axes="XY")
    a = apply_gate(psi, g).to_mixed().data
    b = apply_gate(rho, g).data
    assert np.allclose(a, b, atol=1e-12)


def test_rpp_matches_expm():
    rng = np.random.default_rng(2)
    psi = rng.normal(size=4) + 1j * rng.normal(size=4)
    psi /= np.linalg.norm(psi)
    theta = 0.83
    out = apply_gate(QuantumState(psi, 2), GateOp("RPP", (0, 1), angle=theta, axes="YZ")).data
    U = expm(-0.5j * theta * pauli_string_matrix("YZ"))
    assert np.allclose(out, U @ psi, atol=1e-12)


def test_hamiltonian_examples():
    spec = HamiltonianSpec(1, np.array([1.0]), np.zeros((1, 1)), tau=0.3)
    out = evolve_hamiltonian(init_state(1), spec)
    assert expectation(out, Z1) == pytest.approx(np.cos(0.6), abs=1e-12)
    assert expectation(out, Z1) == pytest.approx(0.8253356, abs=1e-7)
    zero = HamiltonianSpec(1, np.array([1.0]), np.zeros((1, 1)), tau=0.0)
    assert np.allclose(evolve_hamiltonian(init_state(1), zero).data, [1, 0])


def test_hamiltonian_dimension_mismatch():
    spec = HamiltonianSpec.random(2, np.random.default_rng(0))
    with pytest.raises(SimulationError):
        evolve_hamiltonian(init_state(3), spec)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 4), seed=st.integers(0, 10_000), tau=st.floats(0.0, 5.0))
def test_hamiltonian_oracle_and_unitarity(n, seed, tau):
    spec = HamiltonianSpec.random(n, np.random.default_rng(seed), tau)
    assert np.all(np.abs(spec.h) <= 1) and np.all(np.abs(spec.J) <= 1)
    U = spec.unitary()
    assert np.allclose(U, expm(-1j * spec.matrix() * tau), atol=1e-10)
    out = evolve_hamiltonian(init_state(n), spec)
    assert np.linalg.norm(out.data) == pytest.approx(1.0, abs=1e-10)


def test_random_hamiltonian_deterministic():
    a = HamiltonianSpec.random(3, np.random.default_rng(5))
    b = HamiltonianSpec.random(3, np.random.default_rng(5))
    assert np.array_equal(a.h, b.h) and np.array_equal(a.J, b.J)


def test_expectation_examples():
    assert expectation(init_state(1), Z1) == 1.0
    bell = QuantumState(np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2), 2)
    assert expectation(bell, ObservableSpec.zz(2, 0, 1)) == pytest.approx(1.0)
    s = apply_gate(init_state(1), GateOp("RY", (0,), angle=0.7))
    assert expectation(s, Z1) == pytest.approx(0.7648422, abs=1e-7)
    assert expectation(s.to_mixed(), Z1) == pytest.approx(np.cos(0.7), abs=1e-14)


def test_expectation_rejects_mismatch():
    with pytest.raises(SimulationError):
        expectation(init_state(2), Z1)


def _state_with_z(z):
    return apply_gate(init_state(1, "mixed"), GateOp("RY", (0,), angle=np.arccos(z)))


def test_depolarizing_two_layers():
    rho = _state_with_z(0.5)
    for angle in (0.4, -0.4):
        # the pair of rotations returns <Z> to 0.5 in the noiseless case
        rho = apply_gate(rho, GateOp("RY", (0,), angle=angle))
        rho = apply_noise_channel(rho, "depolarizing", 0.1)
    assert expectation(rho, Z1) == pytest.approx(0.405, abs=1e-12)


def test_depolarizing_zero_is_identity():
    rho = _state_with_z(0.3)
    assert np.allclose(apply_noise_channel(rho, "depolarizing", 0.0).data, rho.data)


def test_amplitude_damping_example():
    one = QuantumState(np.diag([0, 1]).astype(complex), 1, "mixed")
    out = apply_noise_channel(one, "amplitude_damping", 0.2)
    assert expectation(out, Z1) == pytest.approx(-0.6, abs=1e-12)


def test_noise_channel_rejects_pure_and_bad_strength():
    with pytest.raises(SimulationError):
        apply_noise_channel(init_state(1), "depolarizing", 0.1)
    with pytest.raises(SimulationError):
        apply_noise_channel(init_state(1, "mixed"), "depolarizing", 1.5)


def _random_rho(n, rng):
    G = rng.normal(size=(2**n, 2**n)) + 1j * rng.normal(size=(2**n, 2**n))
    rho = G @ G.conj().T
    return QuantumState(rho / np.trace(rho), n, "mixed")


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 3), seed=st.integers(0, 10_000), p=st.floats(0, 1), gamma=st.floats(0, 1))
def test_channels_preserve_validity(n, seed, p, gamma):
    rng = np.random.default_rng(seed)
    rho = _random_rho(n, rng)
    out = apply_noise_channel(rho, "depolarizing", p)
    out.check(1e-12)
    assert np.allclose(out.data, (1 - p) * rho.data + p * np.eye(2**n) / 2**n, atol=1e-12)
    apply_noise_channel(rho, "depolarizing", p, qubits=[0]).check(1e-12)
    apply_noise_channel(rho, "amplitude_damping", gamma).check(1e-12)


def test_readout_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert np.allclose(apply_readout_error(p, np.eye(3)), p)
    M = np.array([[0.9, 0.1], [0.1, 0.9]])
    obs = apply_readout_error([1, 0], M)
    assert np.allclose(obs, [0.9, 0.1])
    assert obs[0] - obs[1] == pytest.approx(0.8)
    assert np.allclose(apply_readout_error([0.5, 0.5], M), [0.5, 0.5])


def test_readout_rejects_bad_input():
    with pytest.raises(SimulationError):
        apply_readout_error([1, 0], np.array([[0.9, 0.2], [0.1, 0.9]]))
    with pytest.raises(SimulationError):
        apply_readout_error([1, 0, 0], np.eye(2))
    with pytest.raises(SimulationError):
        apply_readout_error([0.7, 0.7], np.eye(2))


def test_noise_spec_validation():
    with pytest.raises(SimulationError):
        NoiseSpec(depolarizing_p=1.2)
    with pytest.raises(SimulationError):
        NoiseSpec(placement="sometimes")
    with pytest.raises(SimulationError):
        NoiseSpec(readout_matrix=np.array([[0.5, 0.5], [0.6, 0.5]]))


def _random_layers(n, rng, depth=3):
    layers, p = [], 0
    for _ in range(depth):
        layer = []
        for q in range(n):
            layer.append(GateOp(rng.choice(["RX", "RY", "RZ"]), (q,), param=p))
            p += 1
        layer += [GateOp("CZ", (q, q + 1)) for q in range(n - 1)]
        layers.append(layer)
    return layers, rng.uniform(-np.pi, np.pi, p)


def _random_product_batch(n, B, rng):
    from qdm.model import product_states
    return product_states(rng.uniform(0, np.pi, (B, n)))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_heisenberg_compilation_matches_direct(n):
    rng = np.random.default_rng(n)
    layers, theta = _random_layers(n, rng)
    psi = _random_product_batch(n, 7, rng)
    direct = simulate_z(psi, layers, n, theta)
    compiled = quadratic_expectations(heisenberg_z(layers, n, theta), psi)
    assert np.allclose(direct, compiled, atol=1e-12)
    noise = NoiseSpec(0.07, 0.03, np.array([[0.95, 0.02], [0.05, 0.98]]))
    direct = simulate_z(psi, layers, n, theta, noise)
    compiled = quadratic_expectations(heisenberg_z(layers, n, theta, noise), psi)
    assert np.allclose(direct, compiled, atol=1e-12)


def test_simulate_z_matches_single_state_api():
    rng = np.random.default_rng(3)
    layers, theta = _random_layers(2, rng)
    psi = _random_product_batch(2, 1, rng)
    state = QuantumState(psi[0], 2)
    for layer in layers:
        for g in layer:
            state = apply_gate(state, g, theta)
    want = [expectation(state, ObservableSpec.z(2, q)) for q in range(2)]
    assert np.allclose(simulate_z(psi, layers, 2, theta)[0], want, atol=1e-12)
