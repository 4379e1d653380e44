"""Raster/mask files, normalization, padding and tiling, and the synthetic scene generator."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import (
    BadMagicError,
    HeaderError,
    VersionError,
    atomic_write,
    pack,
    unpack,
)
from .qsim import ContractError

MAGIC = b"MQRASTR1"
FORMAT_VERSION = 1
DEFAULT_SCALE = 10000.0

BAND_NAMES = [
    "Aerosols", "Blue", "Green", "Red", "RedEdge1", "RedEdge2",
    "RedEdge3", "NIR", "RedEdge4", "WaterVapor", "SWIR1", "SWIR2",
]


@dataclass
class Raster:
    """H x W x C band stack; ``scale`` is the divisor that maps stored values to reflectance.

    Values are float32 unless float64 is passed in; files always store float32.
    """

    values: np.ndarray
    band_names: list[str] = field(default_factory=lambda: list(BAND_NAMES))
    scale: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values)
        self.values = values if values.dtype == np.float64 else values.astype(np.float32)
        if self.values.ndim != 3:
            raise ContractError(f"raster values must be H x W x C, got {self.values.shape}")
        self.band_names = list(self.band_names)
        if len(self.band_names) != self.values.shape[2]:
            raise ContractError(f"{self.values.shape[2]} bands but {len(self.band_names)} band names")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]


# -- file I/O ----------------------------------------------------------------

def _check_magic(blob: bytes) -> None:
    if blob[:7] == MAGIC[:7] and blob[:8] != MAGIC:
        raise VersionError(f"unsupported container version {blob[7:8]!r}")
    if blob[:8] != MAGIC:
        raise BadMagicError(f"not a raster container (magic {blob[:8]!r})")


def _payload_size(header: dict) -> int:
    version = header.get("version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported format version {version}")
    try:
        h, w, c = int(header["height"]), int(header["width"]), int(header["bands"])
        names = header["band_names"]
        dtype = header["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise HeaderError(f"incomplete header: {exc}") from exc
    if header.get("layout", "bsq") != "bsq":
        raise HeaderError(f"unsupported layout {header.get('layout')!r}")
    if min(h, w, c) < 1 or len(names) != c:
        raise HeaderError(f"header declares {c} bands with {len(names)} names ({h}x{w})")
    itemsize = {"f32le": 4, "u8": 1}.get(dtype)
    if itemsize is None:
        raise HeaderError(f"unsupported dtype {dtype!r}")
    return h * w * c * itemsize


def _header(h: int, w: int, names: list[str], dtype: str, scale: float) -> dict:
    return {
        "version": FORMAT_VERSION,
        "height": h,
        "width": w,
        "bands": len(names),
        "band_names": list(names),
        "dtype": dtype,
        "layout": "bsq",
        "scale": scale,
    }


def encode_raster(raster: Raster) -> bytes:
    bsq = np.ascontiguousarray(raster.values.transpose(2, 0, 1)).astype("<f4")
    head = _header(raster.height, raster.width, raster.band_names, "f32le", float(raster.scale))
    return pack(MAGIC, head, bsq.tobytes())


def decode_raster(blob: bytes) -> Raster:
    _check_magic(blob)
    header, payload = unpack(blob, MAGIC, _payload_size)
    if header["dtype"] != "f32le":
        raise HeaderError(f"raster payload must be f32le, got {header['dtype']!r}")
    h, w, c = header["height"], header["width"], header["bands"]
    vals = np.frombuffer(payload, dtype="<f4").reshape(c, h, w).transpose(1, 2, 0)
    return Raster(vals.astype(np.float32), header["band_names"], header.get("scale", 1.0))


def write_raster(path, raster: Raster) -> None:
    atomic_write(path, encode_raster(raster))


def read_raster(path) -> Raster:
    return decode_raster(Path(path).read_bytes())


def encode_mask(mask) -> bytes:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ContractError(f"mask must be H x W, got {m.shape}")
    if not np.isin(m, (0, 1)).all():
        raise ContractError("mask values must be 0 or 1")
    return pack(MAGIC, _header(m.shape[0], m.shape[1], ["mask"], "u8", 1.0), m.astype(np.uint8).tobytes())


def decode_mask(blob: bytes) -> np.ndarray:
    _check_magic(blob)
    header, payload = unpack(blob, MAGIC, _payload_size)
    if header["dtype"] != "u8" or header["bands"] != 1:
        raise HeaderError("mask must be a single u8 band")
    m = np.frombuffer(payload, dtype=np.uint8).reshape(header["height"], header["width"]).copy()
    if not np.isin(m, (0, 1)).all():
        raise HeaderError("mask payload is not binary")
    return m


def write_mask(path, mask) -> None:
    atomic_write(path, encode_mask(mask))


def read_mask(path) -> np.ndarray:
    return decode_mask(Path(path).read_bytes())


def scene_paths(base) -> tuple[Path, Path]:
    base = Path(base)
    if base.suffix in (".mqr", ".mqm"):
        base = base.with_suffix("")
    return base.with_name(base.name + ".mqr"), base.with_name(base.name + ".mqm")


def load_scene_dir(directory) -> list[tuple[str, Raster, np.ndarray]]:
    """All ``name.mqr`` + ``name.mqm`` pairs in ``directory``, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such directory: {directory}")
    scenes = []
    for r in sorted(directory.glob("*.mqr")):
        m = r.with_suffix(".mqm")
        if not m.exists():
            raise FileNotFoundError(f"raster {r} has no mask {m}")
        scenes.append((r.stem, read_raster(r), read_mask(m)))
    if not scenes:
        raise FileNotFoundError(f"no .mqr scenes in {directory}")
    return scenes


# -- preprocessing -----------------------------------------------------------

def normalize(raster: Raster, scale: float = DEFAULT_SCALE) -> tuple[Raster, int]:
    """Divide by ``scale`` and clamp to [0, 1]; returns the raster and the number of clamped values."""
    if scale <= 0:
        raise ContractError("scale must be positive")
    v = raster.values.astype(np.float64) / scale
    clamped = int(np.count_nonzero((v < 0) | (v > 1)))
    out = np.clip(v, 0.0, 1.0).astype(np.float32)
    return Raster(out, raster.band_names, 1.0), clamped


def _reflect(arr: np.ndarray, pad_h: int, pad_w: int) -> np.ndarray:
    pads = [(0, pad_h), (0, pad_w)] + [(0, 0)] * (arr.ndim - 2)
    if arr.shape[0] == 1 or arr.shape[1] == 1:
        return np.pad(arr, pads, mode="symmetric")
    return np.pad(arr, pads, mode="reflect")


def pad_even(raster: Raster) -> Raster:
    """Reflect-pad the bottom/right edge so that height and width are even."""
    if raster.height < 2 or raster.width < 2:
        raise ContractError("raster must be at least 2x2")
    vals = _reflect(raster.values, raster.height % 2, raster.width % 2)
    return Raster(vals, raster.band_names, raster.scale)


@dataclass
class Patch:
    x: np.ndarray  # (size, size, C) float32
    mask: np.ndarray  # (size, size) uint8
    valid: np.ndarray  # (size, size) bool; False on padding
    origin: tuple[int, int]


def extract_patches(raster: Raster, mask=None, size: int = 256, stride: int | None = None) -> list[Patch]:
    """Tile the raster into ``size`` x ``size`` patches in row-major order.

    The raster is first padded to even size, then edge tiles are reflect-padded
    to full size. Pixels that do not exist in the input are marked invalid.
    """
    if size % 2 or size < 2:
        raise ContractError("patch size must be a positive even number")
    stride = stride or size
    if raster.height < 2 or raster.width < 2:
        raise ContractError("raster must be at least 2x2")
    h, w = raster.height, raster.width
    m = np.zeros((h, w), dtype=np.uint8) if mask is None else np.asarray(mask, dtype=np.uint8)
    if m.shape != (h, w):
        raise ContractError(f"mask shape {m.shape} does not match raster {h}x{w}")
    valid = np.ones((h, w), dtype=bool)
    he, we = h + h % 2, w + w % 2
    rows = list(range(0, max(he - size, 0) + 1, stride))
    cols = list(range(0, max(we - size, 0) + 1, stride))
    if rows[-1] + size < he:
        rows.append(rows[-1] + stride)
    if cols[-1] + size < we:
        cols.append(cols[-1] + stride)
    full_h, full_w = rows[-1] + size, cols[-1] + size
    vals = _reflect(raster.values, full_h - h, full_w - w)
    mm = _reflect(m, full_h - h, full_w - w)
    vv = np.pad(valid, ((0, full_h - h), (0, full_w - w)), constant_values=False)
    out = []
    for r in rows:
        for c in cols:
            out.append(Patch(vals[r : r + size, c : c + size].copy(), mm[r : r + size, c : c + size].copy(),
                             vv[r : r + size, c : c + size].copy(), (r, c)))
    return out


def stitch_patches(patches: list[Patch], field_name: str = "x") -> np.ndarray:
    """Reassemble non-overlapping patches into the padded array they came from."""
    size = patches[0].x.shape[0]
    full_h = max(p.origin[0] for p in patches) + size
    full_w = max(p.origin[1] for p in patches) + size
    sample = getattr(patches[0], field_name)
    out = np.zeros((full_h, full_w) + sample.shape[2:], dtype=sample.dtype)
    for p in patches:
        r, c = p.origin
        out[r : r + size, c : c + size] = getattr(p, field_name)
    return out


# -- synthetic scenes --------------------------------------------------------

MANGROVE, WATER, UPLAND, SOIL = "mangrove", "water", "upland", "soil"

# mangrove: high NIR, moderate green, low SWIR1; all values are fixed fixtures
DEFAULT_TEMPLATES = {
    MANGROVE: [0.03, 0.04, 0.08, 0.04, 0.12, 0.26, 0.31, 0.34, 0.35, 0.10, 0.11, 0.05],
    WATER: [0.08, 0.09, 0.10, 0.06, 0.04, 0.03, 0.02, 0.02, 0.02, 0.01, 0.01, 0.01],
    UPLAND: [0.04, 0.06, 0.11, 0.07, 0.18, 0.38, 0.46, 0.50, 0.52, 0.16, 0.33, 0.19],
    SOIL: [0.12, 0.14, 0.19, 0.24, 0.26, 0.28, 0.29, 0.30, 0.31, 0.12, 0.40, 0.36],
}


@dataclass
class SynthSpec:
    seed: int = 0
    height: int = 64
    width: int = 64
    noise_std: float = 0.03
    n_blobs: int = 14
    radius_range: tuple[float, float] = (0.08, 0.25)  # fraction of the shorter side
    smoothness: float = 0.25  # relative amplitude of the boundary wobble
    background: str = SOIL
    class_weights: dict[str, float] = field(
        default_factory=lambda: {MANGROVE: 0.6, WATER: 0.2, UPLAND: 0.2}
    )
    templates: dict[str, list[float]] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_TEMPLATES.items()})

    def __post_init__(self):
        if self.noise_std < 0:
            raise ContractError("noise_std must be non-negative")
        for name, t in self.templates.items():
            t = np.asarray(t, dtype=float)
            if t.shape != (12,) or (t < 0).any() or (t > 1).any():
                raise ContractError(f"template {name!r} must be 12 values in [0, 1]")
        if MANGROVE not in self.templates or self.background not in self.templates:
            raise ContractError("templates must include mangrove and the background class")


def class_map(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Label image (index into ``sorted(spec.templates)``) built from wobbly discs."""
    names = sorted(spec.templates)
    labels = np.full((spec.height, spec.width), names.index(spec.background), dtype=np.int64)
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width].astype(float)
    side = min(spec.height, spec.width)
    classes = list(spec.class_weights)
    probs = np.array([spec.class_weights[c] for c in classes], dtype=float)
    probs /= probs.sum()
    for _ in range(spec.n_blobs):
        cls = classes[rng.choice(len(classes), p=probs)]
        cy, cx = rng.uniform(0, spec.height), rng.uniform(0, spec.width)
        r0 = rng.uniform(*spec.radius_range) * side
        harm = rng.normal(0, spec.smoothness / 3, size=(3, 2))
        phase = np.arctan2(yy - cy, xx - cx)
        wobble = 1 + sum(a * np.cos((k + 2) * phase) + b * np.sin((k + 2) * phase) for k, (a, b) in enumerate(harm))
        inside = np.hypot(yy - cy, xx - cx) <= r0 * wobble
        labels[inside] = names.index(cls)
    return labels


def synth_scene(spec: SynthSpec) -> tuple[Raster, np.ndarray]:
    """Seeded scene: template spectra per class region plus clamped Gaussian noise."""
    rng = np.random.default_rng(spec.seed)
    names = sorted(spec.templates)
    labels = class_map(spec, rng)
    templates = np.array([spec.templates[n] for n in names], dtype=float)
    vals = templates[labels]
    if spec.noise_std > 0:
        vals = vals + rng.normal(0.0, spec.noise_std, vals.shape)
    vals = np.clip(vals, 0.0, 1.0).astype(np.float32)
    mask = (labels == names.index(MANGROVE)).astype(np.uint8)
    return Raster(vals, list(BAND_NAMES), 1.0), mask


def nearest_template(raster: Raster, templates: dict[str, list[float]] | None = None) -> np.ndarray:
    """Mangrove mask from assigning every pixel to its nearest template (L2)."""
    templates = templates or DEFAULT_TEMPLATES
    names = sorted(templates)
    t = np.array([templates[n] for n in names], dtype=float)
    d = ((raster.values[..., None, :].astype(float) - t) ** 2).sum(axis=-1)
    return (np.argmin(d, axis=-1) == names.index(MANGROVE)).astype(np.uint8)


_ALNUM = re.compile(r"[^a-z0-9]")


def canonical_band(name: str) -> str:
    return _ALNUM.sub("", name.lower())
