"""Spectral index baselines: NDVI, MNDWI, MMRI, MVI and EMVI.

Pixels with a zero denominator get the value 0 and are counted as flagged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Raster, canonical_band
from .qsim import ContractError

# name -> aliases (compared after lower-casing and stripping non-alphanumerics)
_ALIASES = {
    "green": ("green", "b3"),
    "red": ("red", "b4"),
    "nir": ("nir", "b8"),
    "swir1": ("swir1", "b11"),
    "swir2": ("swir2", "b12"),
}

DEFAULT_THRESHOLDS = {
    "ndvi": (0.33, "above"),
    "mmri": (-0.27, "above"),
    "mvi": (2.6, "above"),
}
INDEX_NAMES = ("ndvi", "mndwi", "mmri", "mvi", "emvi")


@dataclass(frozen=True)
class BandSet:
    green: int
    red: int
    nir: int
    swir1: int
    swir2: int

    @classmethod
    def from_names(cls, band_names) -> BandSet:
        canon = [canonical_band(n) for n in band_names]
        found = {}
        for key, aliases in _ALIASES.items():
            hits = [i for i, c in enumerate(canon) if c in aliases]
            if not hits:
                raise ContractError(f"band {key!r} not found in {list(band_names)}")
            found[key] = hits[0]
        return cls(**found)


def _bands(raster: Raster) -> tuple[BandSet, np.ndarray]:
    v = raster.values.astype(np.float64)
    if not np.all(np.isfinite(v)):
        raise ContractError("raster contains non-finite values")
    return BandSet.from_names(raster.band_names), v


def _ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, int]:
    zero = den == 0
    out = np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=~zero)
    return out, int(zero.sum())


def _ndvi(b: BandSet, v):
    nir, red = v[..., b.nir], v[..., b.red]
    return _ratio(nir - red, nir + red)


def _mndwi(b: BandSet, v):
    green, swir1 = v[..., b.green], v[..., b.swir1]
    return _ratio(green - swir1, green + swir1)


def _mmri(b: BandSet, v):
    nd, f1 = _ndvi(b, v)
    mw, f2 = _mndwi(b, v)
    out, f3 = _ratio(np.abs(mw) - np.abs(nd), np.abs(mw) + np.abs(nd))
    return out, f1 + f2 + f3


def _mvi(b: BandSet, v):
    green = v[..., b.green]
    return _ratio(v[..., b.nir] - green, v[..., b.swir1] - green)


def _emvi(b: BandSet, v):
    green = v[..., b.green]
    return _ratio(green - v[..., b.swir2], v[..., b.swir1] - green)


_FORMULAS = {"ndvi": _ndvi, "mndwi": _mndwi, "mmri": _mmri, "mvi": _mvi, "emvi": _emvi}


def compute_index(name: str, raster: Raster) -> tuple[np.ndarray, int]:
    """Return ``(index map, number of zero-denominator pixels)``."""
    try:
        fn = _FORMULAS[name.lower()]
    except KeyError:
        raise ContractError(f"unknown index {name!r}; choose from {', '.join(INDEX_NAMES)}") from None
    return fn(*_bands(raster))


def ndvi(raster: Raster) -> np.ndarray:
    return compute_index("ndvi", raster)[0]


def mndwi(raster: Raster) -> np.ndarray:
    return compute_index("mndwi", raster)[0]


def mmri(raster: Raster) -> np.ndarray:
    return compute_index("mmri", raster)[0]


def mvi(raster: Raster) -> np.ndarray:
    return compute_index("mvi", raster)[0]


def emvi(raster: Raster) -> np.ndarray:
    return compute_index("emvi", raster)[0]


def classify_index(values, threshold: float, direction: str = "above") -> np.ndarray:
    """1 where the index is strictly above (or below) ``threshold``."""
    if not np.isfinite(threshold):
        raise ContractError("threshold must be finite")
    values = np.asarray(values)
    if direction == "above":
        return (values > threshold).astype(np.uint8)
    if direction == "below":
        return (values < threshold).astype(np.uint8)
    raise ContractError(f"direction must be 'above' or 'below', got {direction!r}")


def default_threshold(name: str) -> tuple[float, str]:
    """Literature threshold for ``name``; EMVI has none and must be given explicitly."""
    try:
        return DEFAULT_THRESHOLDS[name.lower()]
    except KeyError:
        raise ContractError(f"no default threshold for {name!r}; pass one explicitly") from None
