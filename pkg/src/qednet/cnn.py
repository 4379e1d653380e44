"""Lightweight CNN branch: 3x3 embedding conv, two 3x3 convs with LeakyReLU, 1x1 head.

Tensors are channel-last, ``(N, H, W, C)``. Convolutions are stride 1 with one
pixel of zero padding, implemented as im2col + matmul with an explicit
backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .qsim import ContractError

NEG_SLOPE = 0.2
DEFAULT_WIDTH = 64
IN_BANDS = 12


@dataclass
class ConvLayer:
    kernel: np.ndarray  # (out, in, 3, 3)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.kernel.ndim != 4 or self.kernel.shape[2:] != (3, 3):
            raise ContractError(f"kernel must be (out, in, 3, 3), got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ContractError(f"bias shape {self.bias.shape} does not match {self.kernel.shape[0]} outputs")

    @property
    def in_ch(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_ch(self) -> int:
        return self.kernel.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, in_ch: int, out_ch: int) -> ConvLayer:
        std = np.sqrt(2.0 / (in_ch * 9))
        return cls(rng.normal(0.0, std, (out_ch, in_ch, 3, 3)), np.zeros(out_ch))


def _im2col(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(padded, (3, 3), axis=(1, 2))  # (N, H, W, C, 3, 3)
    return win.reshape(n * h * w, c * 9)


def conv2d_forward(x: np.ndarray, layer: ConvLayer, return_cols: bool = False):
    """3x3 cross-correlation with zero padding 1; ``x`` is (H, W, C) or (N, H, W, C)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[-1] != layer.in_ch:
        raise ContractError(f"layer expects {layer.in_ch} input channels, got {x.shape[-1]}")
    n, h, w, _ = x.shape
    cols = _im2col(x)
    out = (cols @ layer.kernel.reshape(layer.out_ch, -1).T + layer.bias).reshape(n, h, w, layer.out_ch)
    if single:
        out = out[0]
    return (out, cols) if return_cols else out


def conv2d_backward(grad_out: np.ndarray, x_shape: tuple, cols: np.ndarray, layer: ConvLayer):
    """Returns ``(grad_input, grad_kernel, grad_bias)`` for a forward that produced ``cols``."""
    single = len(x_shape) == 3
    if single:
        x_shape = (1,) + tuple(x_shape)
        grad_out = grad_out[None]
    n, h, w, c = x_shape
    g = grad_out.reshape(-1, layer.out_ch)
    grad_kernel = (g.T @ cols).reshape(layer.kernel.shape)
    grad_bias = g.sum(axis=0)
    gcols = (g @ layer.kernel.reshape(layer.out_ch, -1)).reshape(n, h, w, c, 3, 3)
    gpad = np.zeros((n, h + 2, w + 2, c))
    for di in range(3):
        for dj in range(3):
            gpad[:, di : di + h, dj : dj + w, :] += gcols[..., di, dj]
    grad_in = gpad[:, 1:-1, 1:-1, :]
    return (grad_in[0] if single else grad_in), grad_kernel, grad_bias


def leaky_relu(x):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, x, NEG_SLOPE * x)


def leaky_relu_backward(grad_out, x):
    # subgradient at 0 is 1
    return np.where(np.asarray(x) >= 0, grad_out, NEG_SLOPE * grad_out)


@dataclass
class CnnParams:
    embed: ConvLayer
    conv1: ConvLayer
    conv2: ConvLayer
    fcl_w: np.ndarray  # (C_f,)
    fcl_b: np.ndarray  # (1,)

    def __post_init__(self):
        self.fcl_w = np.asarray(self.fcl_w, dtype=float).reshape(-1)
        self.fcl_b = np.asarray(self.fcl_b, dtype=float).reshape(1)
        cf = self.embed.out_ch
        if self.embed.in_ch != IN_BANDS:
            raise ContractError(f"embedding must take {IN_BANDS} bands")
        for layer in (self.conv1, self.conv2):
            if (layer.in_ch, layer.out_ch) != (cf, cf):
                raise ContractError("encoder convs must map C_f -> C_f")
        if self.fcl_w.shape != (cf,):
            raise ContractError("FCL weight must have C_f entries")

    @property
    def width(self) -> int:
        return self.embed.out_ch

    @classmethod
    def init(cls, rng: np.random.Generator, width: int = DEFAULT_WIDTH) -> CnnParams:
        embed = ConvLayer.init(rng, IN_BANDS, width)
        conv1 = ConvLayer.init(rng, width, width)
        conv2 = ConvLayer.init(rng, width, width)
        fcl_w = rng.normal(0.0, np.sqrt(1.0 / width), width)
        return cls(embed, conv1, conv2, fcl_w, np.zeros(1))

    @classmethod
    def zeros(cls, width: int = DEFAULT_WIDTH) -> CnnParams:
        z = lambda i, o: ConvLayer(np.zeros((o, i, 3, 3)), np.zeros(o))  # noqa: E731
        return cls(z(IN_BANDS, width), z(width, width), z(width, width), np.zeros(width), np.zeros(1))

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        """Named views in flat order; kernels are flagged for weight decay by name."""
        return [
            ("embed.kernel", self.embed.kernel),
            ("embed.bias", self.embed.bias),
            ("conv1.kernel", self.conv1.kernel),
            ("conv1.bias", self.conv1.bias),
            ("conv2.kernel", self.conv2.kernel),
            ("conv2.bias", self.conv2.bias),
            ("fcl.weight", self.fcl_w),
            ("fcl.bias", self.fcl_b),
        ]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.arrays()])

    @classmethod
    def from_flat(cls, v, width: int = DEFAULT_WIDTH) -> CnnParams:
        v = np.asarray(v, dtype=float)
        if v.shape != (n_cnn_params(width),):
            raise ContractError(f"expected {n_cnn_params(width)} CNN params for width {width}, got {v.shape}")
        shapes = [(width, IN_BANDS, 3, 3), (width,), (width, width, 3, 3), (width,),
                  (width, width, 3, 3), (width,), (width,), (1,)]
        parts, i = [], 0
        for shp in shapes:
            k = int(np.prod(shp))
            parts.append(v[i : i + k].reshape(shp))
            i += k
        return cls(ConvLayer(parts[0], parts[1]), ConvLayer(parts[2], parts[3]),
                   ConvLayer(parts[4], parts[5]), parts[6], parts[7])

    @property
    def size(self) -> int:
        return n_cnn_params(self.width)


def n_cnn_params(width: int) -> int:
    return IN_BANDS * width * 9 + width + 2 * (width * width * 9 + width) + width + 1


def cnn_forward(x, params: CnnParams, cache: dict | None = None) -> np.ndarray:
    """F_CNN for (H, W, 12) or (N, H, W, 12) input; returns (H, W) or (N, H, W)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 3
    if single:
        x = x[None]
    e, cols_e = conv2d_forward(x, params.embed, return_cols=True)
    a1, cols_1 = conv2d_forward(e, params.conv1, return_cols=True)
    h1 = leaky_relu(a1)
    a2, cols_2 = conv2d_forward(h1, params.conv2, return_cols=True)
    h2 = leaky_relu(a2)
    out = h2 @ params.fcl_w + params.fcl_b[0]
    if cache is not None:
        cache.update(x_shape=x.shape, cols_e=cols_e, e_shape=e.shape, cols_1=cols_1, a1=a1,
                     h1_shape=h1.shape, cols_2=cols_2, a2=a2, h2=h2)
    return out[0] if single else out


def cnn_backward(grad_out: np.ndarray, params: CnnParams, cache: dict, need_input: bool = False):
    """Gradients for a batched forward; returns ``(CnnParams of grads, grad_input or None)``."""
    h2 = cache["h2"]
    g_fw = np.tensordot(grad_out, h2, axes=(tuple(range(grad_out.ndim)), tuple(range(grad_out.ndim))))
    g_fb = np.array([grad_out.sum()])
    g_h2 = grad_out[..., None] * params.fcl_w
    g_a2 = leaky_relu_backward(g_h2, cache["a2"])
    g_h1, g_k2, g_b2 = conv2d_backward(g_a2, cache["h1_shape"], cache["cols_2"], params.conv2)
    g_a1 = leaky_relu_backward(g_h1, cache["a1"])
    g_e, g_k1, g_b1 = conv2d_backward(g_a1, cache["e_shape"], cache["cols_1"], params.conv1)
    g_x, g_ke, g_be = conv2d_backward(g_e, cache["x_shape"], cache["cols_e"], params.embed)
    grads = CnnParams(ConvLayer(g_ke, g_be), ConvLayer(g_k1, g_b1), ConvLayer(g_k2, g_b2), g_fw, g_fb)
    return grads, (g_x if need_input else None)
