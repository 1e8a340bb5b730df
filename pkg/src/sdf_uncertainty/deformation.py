"""Single-level grid deformation field.

Offsets live on a dense ``(R+1)^3`` vertex lattice (``R = 2**level``) over
the scene box and are expressed in normalized box coordinates.  A query
point is normalized into ``[0, 1]^3``, scaled by ``R``, and the stored
vectors of the enclosing cell's eight corners are blended with trilinear
weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .errors import InvalidInputError
from .geometry import _CORNER_BITS, Aabb, _cell_coords, trilinear_weights

_F = npt.NDArray[np.float64]

DEFAULT_LEVEL = 5


def normalize_coords(x, aabb: Aabb) -> _F:
    """Map world points to ``[0, 1]^3`` relative to ``aabb``; points outside are clamped."""
    lo = np.asarray(aabb.min, dtype=np.float64)
    hi = np.asarray(aabb.max, dtype=np.float64)
    if np.any(hi <= lo):
        raise InvalidInputError("degenerate aabb")
    return np.clip((np.asarray(x, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


@dataclass
class CornerFootprint:
    """Eight lattice corners (as ``(i, j, k)`` rows) and their trilinear weights."""

    corners: npt.NDArray[np.int64]  # (8, 3)
    weights: _F  # (8,)


@dataclass
class DeformationGrid:
    level: int
    aabb: Aabb
    offsets: _F | None = None  # (R+1, R+1, R+1, 3)

    def __post_init__(self):
        if int(self.level) < 1:
            raise InvalidInputError("deformation level must be positive")
        self.level = int(self.level)
        shape = (self.resolution + 1,) * 3 + (3,)
        if self.offsets is None:
            self.offsets = np.zeros(shape)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        if self.offsets.shape != shape:
            raise InvalidInputError(f"offsets must have shape {shape}, got {self.offsets.shape}")
        if not np.all(np.isfinite(self.offsets)):
            raise InvalidInputError("offsets must be finite")

    @property
    def resolution(self) -> int:
        return 2 ** self.level

    @property
    def n_vertices(self) -> int:
        return (self.resolution + 1) ** 3

    def flat_index(self, ijk: npt.NDArray[np.int64]) -> npt.NDArray[np.int64]:
        """x-fastest linear index of lattice corners."""
        n = self.resolution + 1
        ijk = np.asarray(ijk)
        return ijk[..., 0] + n * (ijk[..., 1] + n * ijk[..., 2])

    def unflatten(self, flat) -> npt.NDArray[np.int64]:
        n = self.resolution + 1
        flat = np.asarray(flat, dtype=np.int64)
        return np.stack([flat % n, (flat // n) % n, flat // (n * n)], axis=-1)

    def footprints(self, x: _F) -> tuple[npt.NDArray[np.int64], _F]:
        """Batched footprints: corner lattice indices (M, 8, 3) and weights (M, 8)."""
        u = normalize_coords(x, self.aabb) * self.resolution
        base, frac, _ = _cell_coords(u, self.resolution)
        w, _ = trilinear_weights(frac)
        return base[:, None, :] + _CORNER_BITS[None, :, :], w

    def query(self, x: _F) -> _F:
        """Batched ``d(x)`` for ``(M, 3)`` points, in normalized units."""
        corners, w = self.footprints(x)
        vec = self.offsets[corners[..., 0], corners[..., 1], corners[..., 2]]  # (M, 8, 3)
        return np.einsum("mc,mcd->md", w, vec)

    def world_displacement(self, x: _F) -> _F:
        """``d(x)`` converted to world units (scaled by the box extent)."""
        return self.query(x) * self.aabb.extent

    def __add__(self, other: "DeformationGrid") -> "DeformationGrid":
        if other.level != self.level or other.aabb != self.aabb:
            raise InvalidInputError("can only add grids with equal level and aabb")
        return DeformationGrid(self.level, self.aabb, self.offsets + other.offsets)

    def is_zero(self) -> bool:
        return not np.any(self.offsets)


def footprint(grid: DeformationGrid, x) -> CornerFootprint:
    pt = np.asarray(x, dtype=np.float64).reshape(1, 3)
    if not np.all(np.isfinite(pt)):
        raise InvalidInputError("query point is not finite")
    corners, w = grid.footprints(pt)
    return CornerFootprint(corners[0], w[0])


def query_deformation(grid: DeformationGrid, x) -> _F:
    """``d(x)``: weighted blend of the footprint's corner offsets."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("query point is not finite")
    out = grid.query(np.atleast_2d(arr).reshape(-1, 3))
    return out[0] if arr.ndim == 1 else out
