"""Independent reference implementations used only by the tests."""
from __future__ import annotations

from math import cos, sin

import numpy as np

from qednet.qsim import ISING_XX, NOT, RX, RY, TOFFOLI


def closed_form(kind, theta=0.0):
    """Gate unitaries written out entry by entry from the delta/gamma table."""
    d, g = cos(theta / 2), sin(theta / 2)
    if kind == RX:
        return np.array([[d, -1j * g], [-1j * g, d]])
    if kind == RY:
        return np.array([[d, -g], [g, d]], dtype=complex)
    if kind == ISING_XX:
        m = np.zeros((4, 4), dtype=complex)
        for i in range(4):
            m[i, i] = d
            m[i, 3 - i] = -1j * g
        return m
    if kind == NOT:
        return np.array([[0, 1], [1, 0]], dtype=complex)
    if kind == TOFFOLI:
        x = np.array([[0, 1], [1, 0]])
        return np.block([
            [np.eye(4), np.zeros((4, 2)), np.zeros((4, 2))],
            [np.zeros((2, 4)), x, np.zeros((2, 2))],
            [np.zeros((2, 4)), np.zeros((2, 2)), np.eye(2)],
        ]).astype(complex)
    if kind == "PauliZ":
        return np.diag([1, -1]).astype(complex)
    raise ValueError(kind)


def embed(local: np.ndarray, targets, n: int) -> np.ndarray:
    """Full-register operator; the first target is the most significant local bit."""
    m = len(targets)
    full = np.zeros((2**n, 2**n), dtype=complex)
    for b in range(2**n):
        col = sum(((b >> t) & 1) << (m - 1 - k) for k, t in enumerate(targets))
        for row in range(2**m):
            b2 = b
            for k, t in enumerate(targets):
                bit = (row >> (m - 1 - k)) & 1
                b2 = (b2 & ~(1 << t)) | (bit << t)
            full[b2, b] += local[row, col]
    return full


def circuit_unitary(circuit, params) -> np.ndarray:
    u = np.eye(2**circuit.n_qubits, dtype=complex)
    for g in circuit.gates:
        theta = params[g.param_slot] if g.param_slot is not None else 0.0
        u = embed(closed_form(g.kind, theta), g.targets, circuit.n_qubits) @ u
    return u


def brute_state(circuit, params, input_angles) -> np.ndarray:
    n = circuit.n_qubits
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = 1
    for q in range(n):
        psi = embed(closed_form(RY, input_angles[q]), [q], n) @ psi
    return circuit_unitary(circuit, params) @ psi


def brute_expect_z(psi: np.ndarray, qubit: int, n: int) -> float:
    z = embed(closed_form("PauliZ"), [qubit], n)
    return float(np.real(np.vdot(psi, z @ psi)))


def central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def cubic_weight(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


def direct_bicubic(img: np.ndarray, factor: int = 2) -> np.ndarray:
    """Per-output-pixel 4x4 kernel sum with clamped reads."""
    h, w = img.shape
    out = np.zeros((factor * h, factor * w))
    for i in range(factor * h):
        sy = (i + 0.5) / factor - 0.5
        y0 = int(np.floor(sy))
        for j in range(factor * w):
            sx = (j + 0.5) / factor - 0.5
            x0 = int(np.floor(sx))
            acc = 0.0
            for yy in range(y0 - 1, y0 + 3):
                wy = cubic_weight(sy - yy)
                for xx in range(x0 - 1, x0 + 3):
                    acc += wy * cubic_weight(sx - xx) * img[min(max(yy, 0), h - 1), min(max(xx, 0), w - 1)]
            out[i, j] = acc
    return out


def direct_conv(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Loop convolution over (H, W, Cin) with zero padding 1."""
    h, w, cin = x.shape
    cout = kernel.shape[0]
    out = np.zeros((h, w, cout))
    for i in range(h):
        for j in range(w):
            for o in range(cout):
                acc = bias[o]
                for di in range(3):
                    for dj in range(3):
                        ii, jj = i + di - 1, j + dj - 1
                        if 0 <= ii < h and 0 <= jj < w:
                            acc += kernel[o, :, di, dj] @ x[ii, jj]
                out[i, j, o] = acc
    return out
