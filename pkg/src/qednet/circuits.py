"""Quantum building blocks of the QNN branch.

Spatial encoder (2x2 patch -> 1 value), spectral encoder (4 channels -> 4),
quantum fusion module (3 -> 1), the feature fusion block that reduces 12
channels to one, and the batched branch forward/backward used in training.

Parameter layout (flat, 115 angles):

* spatial   7  = RY x4, IsingXX chain x3
* spectral 60  = 3 groups x (RY x4, IsingXX ring x4, RX x4, IsingXX ring x4, RY x4)
* ffb      48  = 4 fusion modules x (RY x3, IsingXX x2, RX x3, IsingXX x1, RY x3),
                 three group modules first, then the top module
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import qsim
from ._parallel import chunk_slices, ordered_map
from .qsim import ISING_XX, RX, RY, TOFFOLI, Circuit, ContractError, Gate

N_SPATIAL = 7
N_SPECTRAL_GROUP = 20
N_GROUPS = 3
N_QFM = 12
N_QNN_PARAMS = N_SPATIAL + N_GROUPS * N_SPECTRAL_GROUP + (N_GROUPS + 1) * N_QFM
N_BANDS = 12


def _toffoli_ring(n: int) -> list[Gate]:
    return [Gate(TOFFOLI, (i, (i + 1) % n, (i + 2) % n)) for i in range(n)]


@lru_cache(maxsize=None)
def spatial_circuit() -> Circuit:
    gates = [Gate(RY, (q,), q) for q in range(4)]
    gates += [Gate(ISING_XX, (q, q + 1), 4 + q) for q in range(3)]
    gates += _toffoli_ring(4)
    return Circuit(4, gates, N_SPATIAL, (3,))


@lru_cache(maxsize=None)
def spectral_circuit() -> Circuit:
    ring = [(q, (q + 1) % 4) for q in range(4)]
    gates = [Gate(RY, (q,), q) for q in range(4)]
    gates += [Gate(ISING_XX, pair, 4 + k) for k, pair in enumerate(ring)]
    gates += [Gate(RX, (q,), 8 + q) for q in range(4)]
    gates += [Gate(ISING_XX, pair, 12 + k) for k, pair in enumerate(ring)]
    gates += [Gate(RY, (q,), 16 + q) for q in range(4)]
    gates += _toffoli_ring(4)
    return Circuit(4, gates, N_SPECTRAL_GROUP, (0, 1, 2, 3))


@lru_cache(maxsize=None)
def qfm_circuit() -> Circuit:
    gates = [Gate(RY, (q,), q) for q in range(3)]
    gates += [Gate(ISING_XX, (0, 1), 3), Gate(ISING_XX, (1, 2), 4)]
    gates += [Gate(RX, (q,), 5 + q) for q in range(3)]
    gates += [Gate(ISING_XX, (2, 0), 8)]
    gates += [Gate(RY, (q,), 9 + q) for q in range(3)]
    gates += _toffoli_ring(3)
    return Circuit(3, gates, N_QFM, (2,))


@dataclass
class QnnParams:
    spatial: np.ndarray  # (7,)
    spectral: np.ndarray  # (3, 20)
    ffb_groups: np.ndarray  # (3, 12)
    ffb_top: np.ndarray  # (12,)

    def __post_init__(self):
        self.spatial = np.asarray(self.spatial, dtype=float).reshape(N_SPATIAL)
        self.spectral = np.asarray(self.spectral, dtype=float).reshape(N_GROUPS, N_SPECTRAL_GROUP)
        self.ffb_groups = np.asarray(self.ffb_groups, dtype=float).reshape(N_GROUPS, N_QFM)
        self.ffb_top = np.asarray(self.ffb_top, dtype=float).reshape(N_QFM)

    @classmethod
    def zeros(cls) -> QnnParams:
        return cls.from_flat(np.zeros(N_QNN_PARAMS))

    @classmethod
    def init(cls, rng: np.random.Generator, scale: float = 0.1) -> QnnParams:
        return cls.from_flat(rng.uniform(-scale, scale, N_QNN_PARAMS))

    @classmethod
    def from_flat(cls, v) -> QnnParams:
        v = np.asarray(v, dtype=float)
        if v.shape != (N_QNN_PARAMS,):
            raise ContractError(f"expected {N_QNN_PARAMS} QNN angles, got {v.shape}")
        a = N_SPATIAL
        b = a + N_GROUPS * N_SPECTRAL_GROUP
        c = b + N_GROUPS * N_QFM
        return cls(v[:a], v[a:b], v[b:c], v[c:])

    def flat(self) -> np.ndarray:
        return np.concatenate([self.spatial, self.spectral.ravel(), self.ffb_groups.ravel(), self.ffb_top])

    @property
    def size(self) -> int:
        return N_QNN_PARAMS


def _decode(z: np.ndarray) -> np.ndarray:
    # rounding can push |<Z>| a hair past 1
    return np.clip(qsim.decode_z(z), 0.0, 1.0)


def _readout(circuit: Circuit, params, values: np.ndarray) -> np.ndarray:
    """Decoded readouts for rows of ``values`` in [0, 1]; shape ``(rows, len(readout))``."""
    amps = qsim.run_batch(circuit, params, qsim.encode_angle(values))
    return _decode(qsim.expect_z_batch(amps, circuit.n_qubits, circuit.readout))


# -- single-sample API -------------------------------------------------------

def spatial_encode(patch, params) -> float:
    """Compress a 2x2 patch (row-major 4-vector) into one value in [0, 1]."""
    patch = np.asarray(patch, dtype=float).reshape(1, 4)
    return float(_readout(spatial_circuit(), params, patch)[0, 0])


def spectral_encode(group_values, group_index: int, params) -> np.ndarray:
    """Refine one 4-channel group; ``group_index`` is 1-based and picks the weight set."""
    if group_index not in (1, 2, 3):
        raise ContractError(f"group_index must be 1..3, got {group_index}")
    p = np.asarray(params, dtype=float).reshape(N_GROUPS, N_SPECTRAL_GROUP)[group_index - 1]
    vals = np.asarray(group_values, dtype=float).reshape(1, 4)
    return _readout(spectral_circuit(), p, vals)[0]


def qfm(inputs, params) -> float:
    vals = np.asarray(inputs, dtype=float).reshape(1, 3)
    return float(_readout(qfm_circuit(), params, vals)[0, 0])


def ffb(channels, params: QnnParams, shortcut: bool = True) -> float:
    """Fuse 12 channel values into one.

    Each group of four contributes ``(qfm(c1, c2, c3) + c4) / 2``; the three
    group values go through the top fusion module. ``shortcut=False`` drops the
    ``c4`` merge and is only meant for checking the wiring.
    """
    ch = np.asarray(channels, dtype=float).reshape(N_GROUPS, 4)
    z = np.empty(N_GROUPS)
    for g in range(N_GROUPS):
        q = qfm(ch[g, :3], params.ffb_groups[g])
        z[g] = (q + ch[g, 3]) / 2 if shortcut else q
    return qfm(z, params.ffb_top)


# -- bicubic upsampling ------------------------------------------------------

def cubic_kernel(x, a: float = -0.5):
    x = np.abs(np.asarray(x, dtype=float))
    near = ((a + 2) * x - (a + 3)) * x * x + 1
    far = ((a * x - 5 * a) * x + 8 * a) * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


@lru_cache(maxsize=64)
def _upsample_matrix(n: int, factor: int = 2) -> np.ndarray:
    """(factor*n, n) interpolation operator along one axis, half-pixel centres, clamped edges."""
    m = np.zeros((factor * n, n))
    for i in range(factor * n):
        src = (i + 0.5) / factor - 0.5
        base = int(np.floor(src))
        for k in range(base - 1, base + 3):
            m[i, min(max(k, 0), n - 1)] += cubic_kernel(src - k)
    m.setflags(write=False)
    return m


def bicubic_upsample(arr: np.ndarray, factor: int = 2) -> np.ndarray:
    """Catmull-Rom upsampling of the last two axes by ``factor``."""
    arr = np.asarray(arr, dtype=float)
    h, w = arr.shape[-2:]
    if h < 2 or w < 2:
        raise ContractError(f"bicubic upsampling needs at least 2x2, got {h}x{w}")
    uh, uw = _upsample_matrix(h, factor), _upsample_matrix(w, factor)
    return np.matmul(np.matmul(uh, arr), uw.T)


def bicubic_upsample_backward(grad_out: np.ndarray, factor: int = 2) -> np.ndarray:
    h, w = grad_out.shape[-2] // factor, grad_out.shape[-1] // factor
    uh, uw = _upsample_matrix(h, factor), _upsample_matrix(w, factor)
    return np.matmul(np.matmul(uh.T, grad_out), uw)


# -- batched branch ----------------------------------------------------------

def _run_rows(circuit: Circuit, params, values: np.ndarray, workers: int) -> np.ndarray:
    def job(sl):
        return _readout(circuit, params, values[sl])

    return np.concatenate(ordered_map(job, chunk_slices(len(values)), workers), axis=0)


def _vjp_rows(circuit, params, values, cot, workers, input_grad=True):
    """Parameter-shift VJP of decoded readouts w.r.t. params and raw [0, 1] inputs."""
    angles = qsim.encode_angle(values)
    # d decode / d<Z> = -1/2
    cz = -0.5 * cot

    def job(sl):
        return qsim.circuit_vjp(circuit, params, angles[sl], cz[sl], input_grad=input_grad)

    parts = ordered_map(job, chunk_slices(len(values)), workers)
    gp = np.zeros(circuit.n_params)
    for p, _ in parts:
        gp += p
    ga = np.concatenate([a for _, a in parts], axis=0)
    # d angle / dx = pi inside the clamp range
    inside = (values >= 0.0) & (values <= 1.0)
    return gp, ga * np.pi * inside


def _check_even(x: np.ndarray) -> None:
    if x.shape[-1] != N_BANDS:
        raise ContractError(f"QNN branch expects {N_BANDS} bands, got {x.shape[-1]}")
    if x.shape[-3] % 2 or x.shape[-2] % 2:
        raise ContractError(f"height and width must be even, got {x.shape[-3]}x{x.shape[-2]}")


def _patches(x: np.ndarray) -> np.ndarray:
    """(N, H, W, C) -> (N, H/2, W/2, C, 4) with row-major 2x2 ordering."""
    n, h, w, c = x.shape
    p = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    return p.reshape(n, h // 2, w // 2, c, 4)


def _unpatch(p: np.ndarray) -> np.ndarray:
    n, h2, w2, c, _ = p.shape
    return p.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)


def qnn_encode(x: np.ndarray, params: QnnParams, workers: int = 1, cache: dict | None = None) -> np.ndarray:
    """Pre-upsample QNN map: (N, H, W, 12) -> (N, H/2, W/2)."""
    n, h, w, c = x.shape
    h2, w2 = h // 2, w // 2
    patches = _patches(x).reshape(-1, 4)
    s = _run_rows(spatial_circuit(), params.spatial, patches, workers).reshape(n, h2, w2, c)

    e = np.empty_like(s)
    for g in range(N_GROUPS):
        rows = s[..., 4 * g : 4 * g + 4].reshape(-1, 4)
        e[..., 4 * g : 4 * g + 4] = _run_rows(spectral_circuit(), params.spectral[g], rows, workers).reshape(n, h2, w2, 4)

    z = np.empty((n, h2, w2, N_GROUPS))
    for g in range(N_GROUPS):
        rows = e[..., 4 * g : 4 * g + 3].reshape(-1, 3)
        q = _run_rows(qfm_circuit(), params.ffb_groups[g], rows, workers).reshape(n, h2, w2)
        z[..., g] = (q + e[..., 4 * g + 3]) / 2
    out = _run_rows(qfm_circuit(), params.ffb_top, z.reshape(-1, 3), workers).reshape(n, h2, w2)
    if cache is not None:
        cache.update(patches=patches, s=s, e=e, z=z)
    return out


def qnn_forward(x, params: QnnParams, workers: int = 1) -> np.ndarray:
    """QNN feature map for (H, W, 12) or (N, H, W, 12) input of even size."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 3
    if single:
        x = x[None]
    _check_even(x)
    out = bicubic_upsample(qnn_encode(x, params, workers))
    return out[0] if single else out


def qnn_forward_with_cache(x: np.ndarray, params: QnnParams, workers: int = 1):
    _check_even(x)
    cache: dict = {}
    out = bicubic_upsample(qnn_encode(x, params, workers, cache))
    return out, cache


def qnn_backward(grad_out: np.ndarray, params: QnnParams, cache: dict, workers: int = 1) -> QnnParams:
    """Gradient of a scalar loss w.r.t. all 115 angles given dL/dF_QNN of shape (N, H, W)."""
    s, e, z = cache["s"], cache["e"], cache["z"]
    n, h2, w2, c = s.shape
    g_top_out = bicubic_upsample_backward(grad_out).reshape(-1, 1)

    g_top, g_z = _vjp_rows(qfm_circuit(), params.ffb_top, z.reshape(-1, 3), g_top_out, workers)
    g_z = g_z.reshape(n, h2, w2, N_GROUPS)

    g_groups = np.zeros((N_GROUPS, N_QFM))
    g_e = np.zeros_like(e)
    for g in range(N_GROUPS):
        g_q = (g_z[..., g] / 2).reshape(-1, 1)
        g_e[..., 4 * g + 3] += g_z[..., g] / 2
        rows = e[..., 4 * g : 4 * g + 3].reshape(-1, 3)
        gp, ga = _vjp_rows(qfm_circuit(), params.ffb_groups[g], rows, g_q, workers)
        g_groups[g] = gp
        g_e[..., 4 * g : 4 * g + 3] += ga.reshape(n, h2, w2, 3)

    g_spec = np.zeros((N_GROUPS, N_SPECTRAL_GROUP))
    g_s = np.zeros_like(s)
    for g in range(N_GROUPS):
        rows = s[..., 4 * g : 4 * g + 4].reshape(-1, 4)
        cot = g_e[..., 4 * g : 4 * g + 4].reshape(-1, 4)
        gp, ga = _vjp_rows(spectral_circuit(), params.spectral[g], rows, cot, workers)
        g_spec[g] = gp
        g_s[..., 4 * g : 4 * g + 4] = ga.reshape(n, h2, w2, 4)

    g_spat, _ = _vjp_rows(
        spatial_circuit(), params.spatial, cache["patches"], g_s.reshape(-1, 1), workers, input_grad=False
    )
    return QnnParams(g_spat, g_spec, g_groups, g_top)


# -- expressibility check ----------------------------------------------------

@lru_cache(maxsize=None)
def rotation_chain() -> Circuit:
    """The RY-RX-RY single-qubit chain used inside the encoders, read out on qubit 0."""
    return Circuit(1, [Gate(RY, (0,), 0), Gate(RX, (0,), 1), Gate(RY, (0,), 2)], 3, (0,))


def _chain_z(params, angles: np.ndarray) -> np.ndarray:
    c = rotation_chain()
    return qsim.expect_z_batch(qsim.run_batch(c, params, angles[:, None]), 1, (0,))[:, 0]


def _chain_jacobian(params, angles: np.ndarray) -> np.ndarray:
    # each slot appears once, so the two-term shift rule is exact per sample
    cols = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = qsim.SHIFT
        cols.append((_chain_z(params + e, angles) - _chain_z(params - e, angles)) / 2)
    return np.stack(cols, axis=1)


def fit_rotation_chain(input_angles, target_z, rng: np.random.Generator, restarts: int = 8,
                       adam_steps: int = 400, polish_steps: int = 100, tol: float = 1e-12):
    """Fit the chain's <Z> response to ``target_z`` at ``input_angles``.

    Adam on the mean squared error with shift-rule gradients, followed by
    damped Gauss-Newton steps on the same Jacobian. Returns ``(params, mse)``
    of the best restart.
    """
    a = np.asarray(input_angles, dtype=float).reshape(-1)
    y = np.asarray(target_z, dtype=float).reshape(-1)
    if a.shape != y.shape:
        raise ContractError("input angles and targets differ in length")
    best_p, best_mse = None, np.inf
    for _ in range(restarts):
        p = rng.uniform(-np.pi, np.pi, 3)
        m, v = np.zeros(3), np.zeros(3)
        for t in range(1, adam_steps + 1):
            r = _chain_z(p, a) - y
            g = 2 * _chain_jacobian(p, a).T @ r / a.size
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            p = p - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        damping = 1e-3
        mse = float(np.mean((_chain_z(p, a) - y) ** 2))
        for _ in range(polish_steps):
            if mse < tol:
                break
            r = _chain_z(p, a) - y
            jac = _chain_jacobian(p, a)
            step = np.linalg.solve(jac.T @ jac + damping * np.eye(3), jac.T @ r)
            trial = p - step
            trial_mse = float(np.mean((_chain_z(trial, a) - y) ** 2))
            if trial_mse < mse:
                p, mse, damping = trial, trial_mse, damping / 3
            else:
                damping *= 5
        if mse < best_mse:
            best_p, best_mse = p, mse
        if best_mse < tol:
            break
    return best_p, best_mse
