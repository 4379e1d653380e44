"""Dual-branch composition, ablation variants and automatic thresholding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuits import N_QNN_PARAMS, QnnParams, qnn_backward, qnn_forward_with_cache
from .cnn import DEFAULT_WIDTH, CnnParams, cnn_backward, cnn_forward, n_cnn_params
from .qsim import ContractError

CNN_ONLY = "cnn_only"
CNN_CNN = "cnn_cnn"
CNN_QNN = "cnn_qnn"
VARIANTS = (CNN_ONLY, CNN_CNN, CNN_QNN)

OUTLIER_FRACTION = 0.10


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class ModelParams:
    variant: str
    cnn: CnnParams
    qnn: QnnParams | None = None
    cnn2: CnnParams | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}")
        if (self.variant == CNN_QNN) != (self.qnn is not None):
            raise ContractError("QNN parameters exist exactly for the cnn_qnn variant")
        if (self.variant == CNN_CNN) != (self.cnn2 is not None):
            raise ContractError("second CNN exists exactly for the cnn_cnn variant")
        if self.cnn2 is not None and self.cnn2.width != self.cnn.width:
            raise ContractError("both CNN tracks must share C_f")

    @classmethod
    def init(cls, variant: str = CNN_QNN, width: int = DEFAULT_WIDTH, seed: int = 0) -> ModelParams:
        rng = np.random.default_rng(seed)
        cnn = CnnParams.init(rng, width)
        qnn = QnnParams.init(rng) if variant == CNN_QNN else None
        cnn2 = CnnParams.init(rng, width) if variant == CNN_CNN else None
        return cls(variant, cnn, qnn, cnn2)

    @property
    def width(self) -> int:
        return self.cnn.width

    def flat(self) -> np.ndarray:
        parts = [self.cnn.flat()]
        if self.qnn is not None:
            parts.append(self.qnn.flat())
        if self.cnn2 is not None:
            parts.append(self.cnn2.flat())
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, variant: str, width: int, v) -> ModelParams:
        v = np.asarray(v, dtype=float)
        expected = n_params(variant, width)
        if v.shape != (expected,):
            raise ContractError(f"{variant} with C_f={width} has {expected} params, got {v.shape}")
        k = n_cnn_params(width)
        cnn = CnnParams.from_flat(v[:k], width)
        qnn = QnnParams.from_flat(v[k:]) if variant == CNN_QNN else None
        cnn2 = CnnParams.from_flat(v[k:], width) if variant == CNN_CNN else None
        return cls(variant, cnn, qnn, cnn2)

    def names(self) -> list[str]:
        """One name per flat entry, e.g. ``cnn.conv1.kernel`` or ``qnn``."""
        out = []
        for name, arr in self.cnn.arrays():
            out += [f"cnn.{name}"] * arr.size
        if self.qnn is not None:
            out += ["qnn"] * N_QNN_PARAMS
        if self.cnn2 is not None:
            for name, arr in self.cnn2.arrays():
                out += [f"cnn2.{name}"] * arr.size
        return out

    def decay_mask(self) -> np.ndarray:
        """True for CNN kernels and FCL weights; biases and QNN angles are not decayed."""
        return np.array([n.endswith(".kernel") or n.endswith(".weight") for n in self.names()])

    @property
    def size(self) -> int:
        return n_params(self.variant, self.width)


def n_params(variant: str, width: int = DEFAULT_WIDTH) -> int:
    extra = {CNN_ONLY: 0, CNN_QNN: N_QNN_PARAMS, CNN_CNN: n_cnn_params(width)}[variant]
    return n_cnn_params(width) + extra


def _batched(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ContractError(f"expected (H, W, C) or (N, H, W, C) input, got shape {x.shape}")
    return x, False


def _check_input(x: np.ndarray, params: ModelParams) -> None:
    if x.shape[-1] != 12:
        raise ContractError(f"model expects 12 bands, got {x.shape[-1]}")
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ContractError(f"height and width must be even, got {x.shape[1]}x{x.shape[2]}")


def logits(x, params: ModelParams, workers: int = 1, cache: dict | None = None) -> np.ndarray:
    """Pre-sigmoid map ``F_CNN + F_QNN`` (or the variant's equivalent)."""
    xb, single = _batched(x)
    _check_input(xb, params)
    c1: dict = {}
    out = cnn_forward(xb, params.cnn, c1)
    branch2 = None
    if params.variant == CNN_QNN:
        f2, branch2 = qnn_forward_with_cache(xb, params.qnn, workers)
        out = out + f2
    elif params.variant == CNN_CNN:
        branch2 = {}
        out = out + cnn_forward(xb, params.cnn2, branch2)
    if cache is not None:
        cache.update(cnn=c1, branch2=branch2)
    return out[0] if single else out


def forward(x, params: ModelParams, workers: int = 1) -> np.ndarray:
    """Sigmoid map in (0, 1), same spatial shape as the input."""
    return sigmoid(logits(x, params, workers))


def backward(grad_logits: np.ndarray, params: ModelParams, cache: dict, workers: int = 1) -> np.ndarray:
    """Flat gradient (in :meth:`ModelParams.flat` order) from dL/dlogits of a batched forward."""
    g = np.asarray(grad_logits, dtype=float)
    if g.ndim == 2:
        g = g[None]
    g_cnn, _ = cnn_backward(g, params.cnn, cache["cnn"])
    parts = [g_cnn.flat()]
    if params.variant == CNN_QNN:
        parts.append(qnn_backward(g, params.qnn, cache["branch2"], workers).flat())
    elif params.variant == CNN_CNN:
        g2, _ = cnn_backward(g, params.cnn2, cache["branch2"])
        parts.append(g2.flat())
    return np.concatenate(parts)


def threshold_value(values, valid=None) -> float:
    """Half of the largest value left after discarding the top tenth.

    The retained maximum is ``sorted[min(n - 1, floor(0.9 n))]``.
    """
    v = np.asarray(values, dtype=float)
    if valid is not None:
        v = v[np.asarray(valid, dtype=bool)]
    v = np.sort(v.ravel())
    if v.size == 0:
        raise ContractError("cannot threshold an empty map")
    idx = min(v.size - 1, (9 * v.size) // 10)
    return float(v[idx]) / 2.0


def auto_threshold(y, valid=None, return_threshold: bool = False):
    """Binary map: 1 where the sigmoid value strictly exceeds the automatic threshold."""
    y = np.asarray(y, dtype=float)
    t = threshold_value(y, valid)
    binary = (y > t).astype(np.uint8)
    return (binary, t) if return_threshold else binary
