"""Exact statevector simulation for the RX / RY / IsingXX / NOT / Toffoli gate set.

Qubit ordering is little-endian: qubit ``q`` is bit ``q`` of the basis index.
All batched routines work on arrays of shape ``(batch, 2**n)``; gates are
applied by walking amplitude pairs (or quads) through strided views, so the
full ``2**n x 2**n`` operator is never built.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import cos, pi, sin
from typing import Sequence

import numpy as np

RX = "RX"
RY = "RY"
ISING_XX = "IsingXX"
NOT = "NOT"
TOFFOLI = "Toffoli"
PAULI_Z = "PauliZ"  # measurement observable only, never placed in a circuit

PARAMETERIZED = frozenset({RX, RY, ISING_XX})
ARITY = {RX: 1, RY: 1, ISING_XX: 2, NOT: 1, TOFFOLI: 3}
MAX_QUBITS = 4

SHIFT = pi / 2


class ContractError(ValueError):
    """Raised when a caller violates a documented precondition."""


def gate_matrix(kind: str, theta: float = 0.0) -> np.ndarray:
    """Return the unitary of ``kind`` at angle ``theta``.

    Multi-qubit matrices are written in the gate's own target order, most
    significant target first: ``(a, b)`` for IsingXX and ``(c1, c0, t)`` for
    Toffoli, which flips ``t`` when ``c1 = 1`` and ``c0 = 0``.
    """
    d, g = cos(theta / 2), sin(theta / 2)
    if kind == RX:
        return np.array([[d, -1j * g], [-1j * g, d]], dtype=complex)
    if kind == RY:
        return np.array([[d, -g], [g, d]], dtype=complex)
    if kind == ISING_XX:
        return np.array(
            [
                [d, 0, 0, -1j * g],
                [0, d, -1j * g, 0],
                [0, -1j * g, d, 0],
                [-1j * g, 0, 0, d],
            ],
            dtype=complex,
        )
    if kind == NOT:
        return np.array([[0, 1], [1, 0]], dtype=complex)
    if kind == TOFFOLI:
        u = np.eye(8, dtype=complex)
        u[4:6, 4:6] = [[0, 1], [1, 0]]
        return u
    if kind == PAULI_Z:
        return np.array([[1, 0], [0, -1]], dtype=complex)
    raise ContractError(f"unknown gate kind {kind!r}")


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...]
    param_slot: int | None = None

    def __post_init__(self):
        if self.kind not in ARITY:
            raise ContractError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if len(self.targets) != ARITY[self.kind]:
            raise ContractError(f"{self.kind} takes {ARITY[self.kind]} targets, got {self.targets}")
        if len(set(self.targets)) != len(self.targets):
            raise ContractError(f"repeated target in {self.targets}")
        if (self.kind in PARAMETERIZED) != (self.param_slot is not None):
            raise ContractError(f"{self.kind} param_slot mismatch: {self.param_slot}")


@dataclass
class Circuit:
    n_qubits: int
    gates: list[Gate] = field(default_factory=list)
    n_params: int = 0
    readout: tuple[int, ...] = ()

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ContractError(f"n_qubits must be in [1, {MAX_QUBITS}]")
        self.readout = tuple(self.readout)
        for g in self.gates:
            if max(g.targets) >= self.n_qubits or min(g.targets) < 0:
                raise ContractError(f"gate {g} out of range for {self.n_qubits} qubits")
            if g.param_slot is not None and not 0 <= g.param_slot < self.n_params:
                raise ContractError(f"param_slot {g.param_slot} outside [0, {self.n_params})")
        if len(set(self.readout)) != len(self.readout):
            raise ContractError("readout qubits must be distinct")
        if any(not 0 <= q < self.n_qubits for q in self.readout):
            raise ContractError("readout qubit out of range")


@dataclass(frozen=True)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ContractError(f"n_qubits must be in [1, {MAX_QUBITS}]")
        if amps.shape != (2**self.n_qubits,):
            raise ContractError(f"expected {2**self.n_qubits} amplitudes, got {amps.shape}")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > 1e-10:
            raise ContractError(f"state not normalized (norm^2 = {norm})")
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zero(cls, n_qubits: int) -> StateVector:
        amps = np.zeros(2**n_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(n_qubits, amps)

    @classmethod
    def basis(cls, n_qubits: int, index: int) -> StateVector:
        amps = np.zeros(2**n_qubits, dtype=complex)
        amps[index] = 1.0
        return cls(n_qubits, amps)

    def norm_sq(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


# -- batched kernels ---------------------------------------------------------

def _axis(n: int, q: int) -> int:
    # (batch, 2, ..., 2) view: the last axis is qubit 0
    return n - q


def _sel(n: int, assign: dict[int, int]) -> tuple:
    idx: list = [slice(None)] * (n + 1)
    for q, bit in assign.items():
        idx[_axis(n, q)] = bit
    return tuple(idx)


def apply_gate_batch(amps: np.ndarray, n: int, kind: str, targets: Sequence[int], theta=0.0) -> np.ndarray:
    """Apply one gate to a batch of states; returns a new array.

    ``theta`` is a scalar or a per-element vector of length ``batch``.
    """
    batch = amps.shape[0]
    for t in targets:
        if not 0 <= t < n:
            raise ContractError(f"target {t} out of range for {n} qubits")
    psi = amps.reshape((batch,) + (2,) * n)
    out = psi.copy()

    def angles(k: int):
        t = np.asarray(theta, dtype=float)
        if t.ndim == 0:
            return cos(float(t) / 2), sin(float(t) / 2)
        t = t.reshape((batch,) + (1,) * k)
        return np.cos(t / 2), np.sin(t / 2)

    if kind in (RX, RY):
        (q,) = targets
        a0, a1 = psi[_sel(n, {q: 0})], psi[_sel(n, {q: 1})]
        d, g = angles(n - 1)
        if kind == RY:
            out[_sel(n, {q: 0})] = d * a0 - g * a1
            out[_sel(n, {q: 1})] = g * a0 + d * a1
        else:
            out[_sel(n, {q: 0})] = d * a0 - 1j * g * a1
            out[_sel(n, {q: 1})] = -1j * g * a0 + d * a1
    elif kind == ISING_XX:
        qa, qb = targets
        d, g = angles(n - 2)
        for (ba, bb) in ((0, 0), (0, 1)):
            s = _sel(n, {qa: ba, qb: bb})
            f = _sel(n, {qa: 1 - ba, qb: 1 - bb})
            out[s] = d * psi[s] - 1j * g * psi[f]
            out[f] = d * psi[f] - 1j * g * psi[s]
    elif kind == NOT:
        (q,) = targets
        out[_sel(n, {q: 0})] = psi[_sel(n, {q: 1})]
        out[_sel(n, {q: 1})] = psi[_sel(n, {q: 0})]
    elif kind == TOFFOLI:
        c1, c0, t = targets
        s0 = _sel(n, {c1: 1, c0: 0, t: 0})
        s1 = _sel(n, {c1: 1, c0: 0, t: 1})
        out[s0] = psi[s1]
        out[s1] = psi[s0]
    else:
        raise ContractError(f"unknown gate kind {kind!r}")
    return out.reshape(batch, 2**n)


def zero_states(n: int, batch: int) -> np.ndarray:
    amps = np.zeros((batch, 2**n), dtype=complex)
    amps[:, 0] = 1.0
    return amps


def _gate_angle(gate: Gate, params: np.ndarray) -> float:
    return float(params[gate.param_slot]) if gate.param_slot is not None else 0.0


def encode_states(n: int, input_angles: np.ndarray) -> np.ndarray:
    """States after RY(input_angles[:, q]) on every qubit q of |0...0>.

    The result is a real product state, so it is assembled from per-qubit
    factors (cos, sin) instead of being walked gate by gate.
    """
    half = np.asarray(input_angles, dtype=float) / 2
    c, s = np.cos(half), np.sin(half)
    batch = half.shape[0]
    amps = np.ones((batch, 1))
    # most significant qubit first so that qubit 0 ends up as the lowest bit
    for q in reversed(range(n)):
        amps = np.stack([amps * c[:, q : q + 1], amps * s[:, q : q + 1]], axis=2).reshape(batch, -1)
    return amps


def block_transfer(circuit: Circuit, params, shift: tuple[int, float] | None = None) -> np.ndarray:
    """Transfer matrix ``T`` of the gate list, with ``final = initial @ T``.

    Built by pushing every basis state through the stride kernels, so it is
    ``U.T`` for the circuit unitary ``U``. ``shift=(gate_index, delta)`` offsets
    the angle of one gate occurrence.
    """
    n = circuit.n_qubits
    amps = np.eye(2**n, dtype=complex)
    for i, g in enumerate(circuit.gates):
        theta = _gate_angle(g, params)
        if shift is not None and shift[0] == i:
            theta += shift[1]
        amps = apply_gate_batch(amps, n, g.kind, g.targets, theta)
    return amps


def _z_signs(n: int, qubits: Sequence[int]) -> np.ndarray:
    idx = np.arange(2**n)[:, None]
    return 1.0 - 2.0 * ((idx >> np.asarray(qubits, dtype=int)[None, :]) & 1)


def run_batch(circuit: Circuit, params, input_angles) -> np.ndarray:
    """Final states for a batch of encodings; ``input_angles`` is ``(batch, n)``.

    The trainable gates are shared by the whole batch, so they are composed
    once and applied to all encoded states with a single product.
    """
    params = _check_params(circuit, params)
    ang = _check_angles(circuit, input_angles)
    return encode_states(circuit.n_qubits, ang) @ block_transfer(circuit, params)


def run_batch_gatewise(circuit: Circuit, params, input_angles) -> np.ndarray:
    """Same as :func:`run_batch` but applies every gate to the batch directly."""
    params = _check_params(circuit, params)
    ang = _check_angles(circuit, input_angles)
    n = circuit.n_qubits
    amps = zero_states(n, ang.shape[0])
    for q in range(n):
        amps = apply_gate_batch(amps, n, RY, (q,), ang[:, q])
    for g in circuit.gates:
        amps = apply_gate_batch(amps, n, g.kind, g.targets, _gate_angle(g, params))
    return amps


def expect_z_batch(amps: np.ndarray, n: int, qubits: Sequence[int]) -> np.ndarray:
    """<Z_q> for each state and each requested qubit; shape ``(batch, len(qubits))``."""
    probs = amps.real**2 + amps.imag**2
    return probs @ _z_signs(n, qubits)


def _check_params(circuit: Circuit, params) -> np.ndarray:
    p = np.asarray(params, dtype=float).reshape(-1)
    if p.size != circuit.n_params:
        raise ContractError(f"expected {circuit.n_params} params, got {p.size}")
    if not np.all(np.isfinite(p)):
        raise ContractError("non-finite circuit parameter")
    return p


def _check_angles(circuit: Circuit, input_angles) -> np.ndarray:
    a = np.asarray(input_angles, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != circuit.n_qubits:
        raise ContractError(f"expected input angles of width {circuit.n_qubits}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractError("non-finite input angle")
    return a


# -- single-state API --------------------------------------------------------

def apply_gate(state: StateVector, gate: Gate, params=()) -> StateVector:
    if max(gate.targets) >= state.n_qubits:
        raise ContractError(f"gate {gate} out of range for {state.n_qubits} qubits")
    theta = float(np.asarray(params, dtype=float)[gate.param_slot]) if gate.param_slot is not None else 0.0
    amps = apply_gate_batch(state.amplitudes[None, :], state.n_qubits, gate.kind, gate.targets, theta)
    return StateVector(state.n_qubits, amps[0])


def run_circuit(circuit: Circuit, params, input_angles) -> StateVector:
    ang = np.asarray(input_angles, dtype=float)
    if ang.shape != (circuit.n_qubits,):
        raise ContractError(f"expected {circuit.n_qubits} input angles, got shape {ang.shape}")
    return StateVector(circuit.n_qubits, run_batch(circuit, params, ang[None, :])[0])


def expect_z(state: StateVector, qubit: int) -> float:
    if not 0 <= qubit < state.n_qubits:
        raise ContractError(f"qubit {qubit} out of range")
    return float(expect_z_batch(state.amplitudes[None, :], state.n_qubits, [qubit])[0, 0])


def encode_angle(x):
    """Map a value in [0, 1] to an RY angle; out-of-range values are clamped."""
    return np.pi * np.clip(x, 0.0, 1.0)


def decode_z(z):
    return (1.0 - np.asarray(z)) / 2.0


# -- gradients ---------------------------------------------------------------

def circuit_vjp(
    circuit: Circuit, params, input_angles, cotangent, input_grad: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Parameter-shift vector-Jacobian product of the readout expectations.

    The objective is ``sum_b sum_k cotangent[b, k] * <Z_{readout[k]}>_b``.
    Returns ``(grad_params, grad_angles)`` with shapes ``(n_params,)`` and
    ``(batch, n_qubits)``; with ``input_grad=False`` the encoding shifts are
    skipped and the angle gradient is left at zero.

    Every parameterized gate, encoding RYs included, is shifted by +-pi/2 on
    its own and the circuit re-evaluated, so a slot shared by several gates
    collects the sum over its occurrences.
    """
    params = _check_params(circuit, params)
    ang = _check_angles(circuit, input_angles)
    n = circuit.n_qubits
    w = np.asarray(cotangent, dtype=float).reshape(ang.shape[0], len(circuit.readout))
    signs = _z_signs(n, circuit.readout)

    def observables(transfer: np.ndarray) -> np.ndarray:
        # encoded states are real, so <Z_k> = psi^T Re(T diag(z_k) T^H) psi
        mats = [np.real((transfer * signs[:, k]) @ transfer.conj().T) for k in range(signs.shape[1])]
        return np.concatenate(mats, axis=1)

    def weighted(initial: np.ndarray, transfer: np.ndarray) -> np.ndarray:
        proj = (initial @ observables(transfer)).reshape(initial.shape[0], signs.shape[1], -1)
        return np.sum(np.einsum("bkj,bj->bk", proj, initial) * w, axis=1)

    psi = encode_states(n, ang)
    grad_p = np.zeros(circuit.n_params)
    for i, g in enumerate(circuit.gates):
        if g.kind not in PARAMETERIZED:
            continue
        plus = weighted(psi, block_transfer(circuit, params, (i, SHIFT)))
        minus = weighted(psi, block_transfer(circuit, params, (i, -SHIFT)))
        grad_p[g.param_slot] += float(np.sum(plus - minus)) / 2

    grad_a = np.zeros_like(ang)
    if input_grad:
        transfer = block_transfer(circuit, params)
        for q in range(n):
            shifted = ang.copy()
            shifted[:, q] += SHIFT
            plus = weighted(encode_states(n, shifted), transfer)
            shifted[:, q] -= 2 * SHIFT
            minus = weighted(encode_states(n, shifted), transfer)
            grad_a[:, q] = (plus - minus) / 2
    return grad_p, grad_a


def param_shift_grad(circuit: Circuit, params, input_angles, readout_weights) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``sum_k readout_weights[k] * <Z_readout[k]>`` for one input.

    Returns ``(d/dparams, d/dinput_angles)``.
    """
    ang = np.asarray(input_angles, dtype=float).reshape(1, -1)
    gp, ga = circuit_vjp(circuit, params, ang, np.asarray(readout_weights, dtype=float)[None, :])
    return gp, ga[0]


def objective(circuit: Circuit, params, input_angles, readout_weights) -> float:
    amps = run_batch(circuit, params, np.asarray(input_angles, dtype=float)[None, :])
    return float(expect_z_batch(amps, circuit.n_qubits, circuit.readout)[0] @ np.asarray(readout_weights, dtype=float))
