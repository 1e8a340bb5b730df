"""Per-vertex accumulation of squared colour sensitivities and the derived uncertainty.

Each touched corner of the deformation lattice receives
``sum_dim (dr/dd_dim)^2 + (dg/dd_dim)^2 + (db/dd_dim)^2`` per ray.  The
pointwise uncertainty is the square root of the accumulated value at the
nearest lattice vertex.

Binary file layout (little-endian)::

    magic      4 bytes  b"BSDF"
    version    uint32
    level      uint32
    aabb       6 x float64  (min xyz, max xyz)
    iterations uint64
    values     (2**level + 1)**3 x float64, x-fastest
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import numpy.typing as npt

from .camera import Camera, generate_rays
from .deformation import DeformationGrid, normalize_coords
from .errors import ConfigurationError, FormatError, InvalidInputError
from .geometry import Aabb, Field, _CORNER_BITS, _cell_coords, trilinear_weights
from .gradients import BatchJacobian, CornerJacobian, ray_jacobians
from .renderer import RenderOptions, pixel_uniforms

_F = npt.NDArray[np.float64]

MAGIC = b"BSDF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sII6dQ")
ACCUMULATION_CHUNK = 2048


@dataclass
class HessianGrid:
    level: int
    aabb: Aabb
    values: _F | None = None  # (R+1, R+1, R+1), indexed [i, j, k]
    iterations: int = 0

    def __post_init__(self):
        self.level = int(self.level)
        if self.level < 1:
            raise InvalidInputError("hessian level must be positive")
        shape = (self.resolution + 1,) * 3
        if self.values is None:
            self.values = np.zeros(shape)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != shape:
            raise InvalidInputError(f"hessian values must have shape {shape}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise InvalidInputError("hessian values must be finite and nonnegative")

    @property
    def resolution(self) -> int:
        return 2 ** self.level

    @property
    def n_vertices(self) -> int:
        return (self.resolution + 1) ** 3

    @classmethod
    def like(cls, grid: DeformationGrid) -> "HessianGrid":
        return cls(grid.level, grid.aabb)

    def flat_values(self) -> _F:
        """Values in x-fastest order."""
        return self.values.ravel(order="F")

    def add_flat(self, flat: _F) -> None:
        self.values += flat.reshape(self.values.shape, order="F")

    def vertex_positions(self) -> _F:
        n = self.resolution + 1
        axes = [np.linspace(self.aabb.min[d], self.aabb.max[d], n) for d in range(3)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def sigma_at(self, points: _F, mode: str = "nearest") -> _F:
        """Batched uncertainty for ``(M, 3)`` points."""
        u = normalize_coords(points, self.aabb) * self.resolution
        if mode == "nearest":
            idx = np.minimum(np.floor(u + 0.5).astype(np.int64), self.resolution)
            return np.sqrt(self.values[idx[:, 0], idx[:, 1], idx[:, 2]])
        if mode == "trilinear":
            base, frac, _ = _cell_coords(u, self.resolution)
            w, _ = trilinear_weights(frac)
            c = base[:, None, :] + _CORNER_BITS[None, :, :]
            return np.einsum("mc,mc->m", w, np.sqrt(self.values[c[..., 0], c[..., 1], c[..., 2]]))
        raise InvalidInputError(f"unknown sigma mode {mode!r}")

    def copy(self) -> "HessianGrid":
        return HessianGrid(self.level, self.aabb, self.values.copy(), self.iterations)

    def __eq__(self, other):
        if not isinstance(other, HessianGrid):
            return NotImplemented
        return (self.level == other.level and self.aabb == other.aabb
                and self.iterations == other.iterations and np.array_equal(self.values, other.values))


def accumulate(hessian: HessianGrid, jac: CornerJacobian | BatchJacobian) -> HessianGrid:
    """Add one Jacobian's squared entries to the grid in place and return it.

    A :class:`BatchJacobian` counts as one pass per distinct ray.
    """
    if isinstance(jac, CornerJacobian):
        corners = np.asarray(jac.corners, dtype=np.int64).reshape(-1, 3)
        if corners.size and (corners.min() < 0 or corners.max() > hessian.resolution):
            raise ConfigurationError("jacobian corner index out of range for this hessian grid")
        n = hessian.resolution + 1
        flat = corners[:, 0] + n * (corners[:, 1] + n * corners[:, 2])
        sq = np.einsum("kcd,kcd->k", jac.matrices, jac.matrices)
        passes = 1
    else:
        flat = jac.corner
        if flat.size and (flat.min() < 0 or flat.max() >= hessian.n_vertices):
            raise ConfigurationError("jacobian corner index out of range for this hessian grid")
        sq = jac.squared_norms()
        passes = len(np.unique(jac.ray))
    hessian.add_flat(np.bincount(flat, weights=sq, minlength=hessian.n_vertices))
    hessian.iterations += passes
    return hessian


def select_pixels(n_pixels: int, rays_per_camera: int, seed: int, camera_index: int,
                  offset: int = 0) -> npt.NDArray[np.int64]:
    """Deterministic pixel subset: a seeded permutation, sliced at ``offset``."""
    perm = np.random.default_rng([seed, camera_index]).permutation(n_pixels)
    sel = perm[offset:offset + rays_per_camera]
    return np.sort(sel)


def _camera_partial(field: Field, grid: DeformationGrid, camera: Camera, index: int,
                    rays_per_camera: int, opts: RenderOptions, seed: int, offset: int) -> tuple[_F, int]:
    origins, dirs, near, far = generate_rays(camera)
    uniforms = pixel_uniforms(opts.seed, len(origins), opts)
    sel = select_pixels(len(origins), rays_per_camera, seed, index, offset)
    partial = np.zeros(grid.n_vertices)
    for start in range(0, len(sel), ACCUMULATION_CHUNK):
        s = sel[start:start + ACCUMULATION_CHUNK]
        bj = ray_jacobians(field, grid, origins[s], dirs[s], near[s], far[s], opts, uniforms[s])
        partial += np.bincount(bj.corner, weights=bj.squared_norms(), minlength=grid.n_vertices)
    return partial, len(sel)


def run_accumulation(field: Field, grid: DeformationGrid, cameras: Sequence[Camera], rays_per_camera: int,
                     opts: RenderOptions, seed: int, ray_offset: int = 0, threads: int = 1,
                     bit_exact: bool = True) -> HessianGrid:
    """Accumulate squared colour Jacobians over a subsample of every camera's rays.

    Each camera contributes a partial grid.  In bit-exact mode partials are
    merged in camera order regardless of ``threads``; otherwise they are
    merged as they complete.
    """
    if not cameras:
        raise InvalidInputError("run_accumulation needs at least one camera")
    if rays_per_camera < 1:
        raise InvalidInputError("rays_per_camera must be >= 1")
    if grid.aabb != field.aabb:
        raise ConfigurationError("deformation grid aabb does not match the field aabb")
    hessian = HessianGrid.like(grid)
    args = [(field, grid, cam, i, rays_per_camera, opts, seed, ray_offset) for i, cam in enumerate(cameras)]
    if threads <= 1:
        results = [_camera_partial(*a) for a in args]
        order = results
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_camera_partial, *a) for a in args]
            if bit_exact:
                order = [f.result() for f in futures]
            else:
                order = [f.result() for f in as_completed(futures)]
    for partial, n_rays in order:
        hessian.add_flat(partial)
        hessian.iterations += n_rays
    return hessian


def sigma(hessian: HessianGrid, x, mode: str = "nearest"):
    """Uncertainty at ``x``: square root of the value at the nearest lattice vertex."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("query point is not finite")
    out = hessian.sigma_at(np.atleast_2d(arr).reshape(-1, 3), mode)
    return float(out[0]) if arr.ndim == 1 else out


def normalize_uncertainty(values) -> _F:
    """Min-max rescale to ``[0, 1]``; a constant input maps to zeros."""
    v = np.asarray(values, dtype=np.float64)
    finite = np.isfinite(v)
    if not finite.any():
        raise InvalidInputError("normalize_uncertainty needs at least one finite value")
    lo, hi = v[finite].min(), v[finite].max()
    if hi == lo:
        return np.where(finite, 0.0, v)
    return (v - lo) / (hi - lo)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_hessian(hessian: HessianGrid, path: str | Path) -> None:
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, hessian.level, *hessian.aabb.min, *hessian.aabb.max,
                          hessian.iterations)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(hessian.flat_values().astype("<f8").tobytes())


def load_hessian(path: str | Path, expected_level: int | None = None) -> HessianGrid:
    """Read a grid written by :func:`save_hessian`.

    Raises :class:`FormatError` naming the offending field on any mismatch.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes)", field="header")
    magic, version, level, *rest = _HEADER.unpack_from(data)
    bounds, iterations = rest[:6], rest[6]
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", field="magic")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", field="version")
    if not 1 <= level <= 16:
        raise FormatError(f"{path}: implausible level {level}", field="level")
    if expected_level is not None and level != expected_level:
        raise FormatError(f"{path}: dimension mismatch, file has level {level} but run expects "
                          f"{expected_level}", field="level")
    n = (2 ** level + 1) ** 3
    payload = data[_HEADER.size:]
    if len(payload) != 8 * n:
        raise FormatError(f"{path}: expected {n} values, found {len(payload) / 8:g}", field="values")
    try:
        aabb = Aabb(bounds[:3], bounds[3:])
    except InvalidInputError as exc:
        raise FormatError(f"{path}: {exc}", field="aabb") from None
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(flat)) or np.any(flat < 0):
        raise FormatError(f"{path}: values must be finite and nonnegative", field="values")
    side = 2 ** level + 1
    return HessianGrid(level, aabb, flat.reshape((side,) * 3, order="F"), int(iterations))
