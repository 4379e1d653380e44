import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_expect_z, brute_state, central_diff, closed_form, embed
from qednet import qsim
from qednet.qsim import (
    ISING_XX,
    NOT,
    RX,
    RY,
    TOFFOLI,
    Circuit,
    ContractError,
    Gate,
    StateVector,
    apply_gate,
    decode_z,
    encode_angle,
    expect_z,
    gate_matrix,
    param_shift_grad,
    run_circuit,
)

ALL_KINDS = [RX, RY, ISING_XX, NOT, TOFFOLI, qsim.PAULI_Z]


def random_circuit(rng, n, n_gates, n_params=None):
    kinds = [RX, RY, ISING_XX, NOT, TOFFOLI] if n >= 3 else ([RX, RY, ISING_XX, NOT] if n == 2 else [RX, RY, NOT])
    n_params = n_params or n_gates
    gates, slot = [], 0
    for _ in range(n_gates):
        kind = kinds[rng.integers(len(kinds))]
        targets = tuple(rng.permutation(n)[: qsim.ARITY[kind]])
        if kind in qsim.PARAMETERIZED:
            gates.append(Gate(kind, targets, slot % n_params))
            slot += 1
        else:
            gates.append(Gate(kind, targets))
    readout = tuple(sorted(rng.permutation(n)[: rng.integers(1, n + 1)]))
    return Circuit(n, gates, n_params, readout)


# -- gate_matrix ---------------------------------------------------------------

def test_ry_zero_is_identity():
    assert np.array_equal(gate_matrix(RY, 0.0), np.eye(2))


def test_ry_pi():
    np.testing.assert_allclose(gate_matrix(RY, np.pi), [[0, -1], [1, 0]], atol=1e-15)


def test_toffoli_swaps_100_and_101():
    u = gate_matrix(TOFFOLI)
    for b in range(8):
        expected = {4: 5, 5: 4}.get(b, b)
        assert u[expected, b] == 1
        assert np.count_nonzero(u[:, b]) == 1


def test_ising_pi():
    u = gate_matrix(ISING_XX, np.pi)
    np.testing.assert_allclose(np.diag(u), 0, atol=1e-15)
    np.testing.assert_allclose(np.fliplr(u).diagonal(), -1j, atol=1e-15)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_matches_closed_form_and_unitary(kind, rng):
    for theta in rng.uniform(-2 * np.pi, 2 * np.pi, 200):
        u = gate_matrix(kind, theta)
        np.testing.assert_allclose(u, closed_form(kind, theta), atol=1e-15)
        assert np.linalg.norm(u.conj().T @ u - np.eye(len(u))) < 1e-12


def test_ry_composition(rng):
    for a, b in rng.uniform(-2 * np.pi, 2 * np.pi, (100, 2)):
        np.testing.assert_allclose(gate_matrix(RY, a) @ gate_matrix(RY, b), gate_matrix(RY, a + b), atol=1e-12)


# -- apply_gate ----------------------------------------------------------------

def test_apply_ry_pi():
    out = apply_gate(StateVector.zero(1), Gate(RY, (0,), 0), [np.pi])
    np.testing.assert_allclose(out.amplitudes, [0, 1], atol=1e-15)


def test_apply_toffoli_open_control():
    # c1 = q2 = 1, c0 = q1 = 0, t = q0 = 0  ->  t flips
    state = StateVector.basis(3, 0b100)
    out = apply_gate(state, Gate(TOFFOLI, (2, 1, 0)))
    assert out.amplitudes[0b101] == 1


def test_apply_ising_zero_unchanged(rng):
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    s = StateVector(2, v / np.linalg.norm(v))
    out = apply_gate(s, Gate(ISING_XX, (0, 1), 0), [0.0])
    np.testing.assert_allclose(out.amplitudes, s.amplitudes, atol=1e-15)


def test_target_out_of_range():
    with pytest.raises(ContractError):
        apply_gate(StateVector.zero(2), Gate(RY, (2,), 0), [0.1])
    with pytest.raises(ContractError):
        Circuit(2, [Gate(NOT, (3,))])


def test_gate_validation():
    with pytest.raises(ContractError):
        Gate(RY, (0,))
    with pytest.raises(ContractError):
        Gate(NOT, (0,), 0)
    with pytest.raises(ContractError):
        Gate(ISING_XX, (1, 1), 0)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_stride_walk_equals_full_matrix(n, rng):
    kinds = [k for k in (RX, RY, ISING_XX, NOT, TOFFOLI) if qsim.ARITY[k] <= n]
    basis = np.eye(2**n, dtype=complex)
    for kind in kinds:
        for _ in range(20):
            targets = tuple(rng.permutation(n)[: qsim.ARITY[kind]])
            theta = rng.uniform(-2 * np.pi, 2 * np.pi)
            full = embed(closed_form(kind, theta), targets, n)
            got = qsim.apply_gate_batch(basis, n, kind, targets, theta)
            # row b of `got` is the image of basis state b
            assert np.max(np.abs(got - full.T)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 4), n_gates=st.integers(0, 50))
def test_norm_preserved(seed, n, n_gates):
    rng = np.random.default_rng(seed)
    c = random_circuit(rng, n, n_gates, n_params=max(n_gates, 1))
    out = run_circuit(c, rng.uniform(-7, 7, c.n_params), rng.uniform(-4, 4, n))
    assert abs(out.norm_sq() - 1) < 1e-12


# -- run_circuit ---------------------------------------------------------------

def test_empty_circuit_zero_angles():
    out = run_circuit(Circuit(3), [], [0, 0, 0])
    np.testing.assert_allclose(out.amplitudes, np.eye(8)[0])


def test_empty_circuit_pi_on_qubit0():
    out = run_circuit(Circuit(2), [], [np.pi, 0])
    np.testing.assert_allclose(out.amplitudes, [0, 1, 0, 0], atol=1e-15)


def test_run_matches_brute_force(rng):
    for n in (1, 2, 3, 4):
        for _ in range(10):
            c = random_circuit(rng, n, 25)
            p, a = rng.uniform(-4, 4, c.n_params), rng.uniform(-4, 4, n)
            np.testing.assert_allclose(run_circuit(c, p, a).amplitudes, brute_state(c, p, a), atol=1e-12)
            gw = qsim.run_batch_gatewise(c, p, a[None])[0]
            np.testing.assert_allclose(gw, brute_state(c, p, a), atol=1e-12)


def test_length_mismatch():
    c = Circuit(2, [Gate(RY, (0,), 0)], 1, (0,))
    with pytest.raises(ContractError):
        run_circuit(c, [0.1, 0.2], [0, 0])
    with pytest.raises(ContractError):
        run_circuit(c, [0.1], [0, 0, 0])


# -- expect_z / encoding -----------------------------------------------------------

def test_expect_z_basis():
    assert expect_z(StateVector.zero(1), 0) == 1
    assert expect_z(StateVector.basis(1, 1), 0) == -1


def test_expect_z_equal_superposition():
    s = apply_gate(StateVector.zero(1), Gate(RY, (0,), 0), [np.pi / 2])
    assert abs(expect_z(s, 0)) < 1e-15


def test_expect_z_matches_operator(rng):
    for n in (1, 2, 3, 4):
        v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
        s = StateVector(n, v / np.linalg.norm(v))
        for q in range(n):
            assert abs(expect_z(s, q) - brute_expect_z(s.amplitudes, q, n)) < 1e-12


def test_encode_decode():
    assert encode_angle(0.0) == 0
    assert encode_angle(1.0) == np.pi
    assert decode_z(1.0) == 0 and decode_z(-1.0) == 1 and decode_z(0.0) == 0.5
    # clamped
    assert encode_angle(1.7) == np.pi and encode_angle(-0.2) == 0


def test_encode_roundtrip_is_sin_squared(rng):
    c = Circuit(1, [], 0, (0,))
    for x in rng.uniform(0, 1, 50):
        z = expect_z(run_circuit(c, [], [encode_angle(x)]), 0)
        assert abs(decode_z(z) - np.sin(np.pi * x / 2) ** 2) < 1e-12


# -- gradients -----------------------------------------------------------------

def test_single_ry_gradient():
    c = Circuit(1, [Gate(RY, (0,), 0)], 1, (0,))
    gp, _ = param_shift_grad(c, [0.0], [0.0], [1.0])
    assert abs(gp[0]) < 1e-15
    gp, _ = param_shift_grad(c, [np.pi / 2], [0.0], [1.0])
    assert abs(gp[0] + 1) < 1e-12


def _check_grad(c, params, angles, weights, tol):
    gp, ga = param_shift_grad(c, params, angles, weights)
    fp = central_diff(lambda p: qsim.objective(c, p, angles, weights), params)
    fa = central_diff(lambda a: qsim.objective(c, params, a, weights), angles)
    scale = max(np.max(np.abs(fp)), np.max(np.abs(fa)), 1e-3)
    err = max(np.max(np.abs(gp - fp)), np.max(np.abs(ga - fa))) / scale
    assert err < tol


def test_param_shift_random_circuits(rng):
    for _ in range(100):
        n = int(rng.integers(1, 5))
        c = random_circuit(rng, n, int(rng.integers(1, 20)))
        _check_grad(c, rng.uniform(-4, 4, c.n_params), rng.uniform(0, np.pi, n), rng.normal(size=len(c.readout)), 1e-4)


def test_shared_slot_gradient(rng):
    c = Circuit(2, [Gate(RY, (0,), 0), Gate(ISING_XX, (0, 1), 1), Gate(RX, (1,), 0)], 2, (0, 1))
    _check_grad(c, rng.uniform(-3, 3, 2), rng.uniform(0, 3, 2), [0.7, -1.3], 1e-4)


def test_vjp_batch_matches_single(rng):
    c = random_circuit(rng, 3, 15)
    p = rng.uniform(-3, 3, c.n_params)
    ang = rng.uniform(0, np.pi, (6, 3))
    cot = rng.normal(size=(6, len(c.readout)))
    gp, ga = qsim.circuit_vjp(c, p, ang, cot)
    acc = np.zeros_like(gp)
    for b in range(6):
        sp, sa = param_shift_grad(c, p, ang[b], cot[b])
        acc += sp
        np.testing.assert_allclose(ga[b], sa, atol=1e-12)
    np.testing.assert_allclose(gp, acc, atol=1e-12)
