"""Scalar-to-rgb colormaps backed by embedded 256-entry tables."""

from __future__ import annotations

import numpy as np

from ._colormap_data import INFERNO, VIRIDIS
from .errors import InvalidInputError

_TABLES = {
    "inferno": np.asarray(INFERNO, dtype=np.float64),
    "viridis": np.asarray(VIRIDIS, dtype=np.float64),
    "grayscale": np.repeat(np.linspace(0.0, 1.0, 256)[:, None], 3, axis=1),
}
COLORMAPS = tuple(_TABLES)


def colormap_table(name: str) -> np.ndarray:
    try:
        return _TABLES[name]
    except KeyError:
        raise InvalidInputError(f"unknown colormap {name!r}; expected one of {COLORMAPS}") from None


def apply_colormap(v, name: str = "inferno") -> np.ndarray:
    """Map values to rgb with linear interpolation between table entries.

    Accepts a scalar (returns shape ``(3,)``) or any array (appends an rgb
    axis).  Values are clamped to ``[0, 1]``; NaN maps to 0.
    """
    table = colormap_table(name)
    x = np.nan_to_num(np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)) * (len(table) - 1)
    lo = np.minimum(np.floor(x).astype(np.int64), len(table) - 2)
    frac = (x - lo)[..., None]
    return (1.0 - frac) * table[lo] + frac * table[lo + 1]


def luminance(rgb) -> np.ndarray:
    """Rec. 709 relative luminance."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb @ np.array([0.2126, 0.7152, 0.0722])


def to_uint8(rgb) -> np.ndarray:
    return np.round(np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
