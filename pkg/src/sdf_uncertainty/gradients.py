"""Jacobians of rendered ray colour with respect to deformation-grid corner offsets.

Sample distances are frozen at the sampler's output; only the field
evaluation path ``x -> x + d(x) -> (f, c) -> alpha -> composite`` is
differentiated.  The reverse sweep runs once per colour channel, each with
a freshly zeroed corner-gradient buffer.

The transmittance coupling is handled with the back-to-front accumulator
``B_i = sum_{k>i} alpha_k c_k prod_{i<j<k} (1 - alpha_j)``, which gives
``dC/dalpha_i = T_i (c_i - B_i)`` without dividing by ``1 - alpha_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import numpy.typing as npt

from .deformation import DeformationGrid
from .errors import InvalidInputError
from .geometry import Field
from .renderer import RayTrace, RenderOptions, pixel_uniforms, prepare_rays, sample_batch, trace_fixed

_F = npt.NDArray[np.float64]

FD_STEP_FACTOR = 1e-4


@dataclass
class CornerJacobian:
    """Per-corner 3x3 blocks ``J[channel, dim] = dC_channel / d offset_dim``.

    ``corners`` holds lattice indices ``(i, j, k)`` of every corner touched by
    a sample footprint, in ascending x-fastest order.
    """

    corners: npt.NDArray[np.int64]  # (K, 3)
    matrices: _F  # (K, 3, 3)

    @property
    def entries(self) -> dict[tuple[int, int, int], _F]:
        return {tuple(int(v) for v in c): m for c, m in zip(self.corners, self.matrices)}

    def __len__(self) -> int:
        return len(self.corners)


@dataclass
class BatchJacobian:
    """Jacobians for many rays, stored sparsely as (ray, flat corner, block) triples."""

    ray: npt.NDArray[np.int64]  # (K,)
    corner: npt.NDArray[np.int64]  # (K,) x-fastest flat lattice index
    matrices: _F  # (K, 3, 3)

    def squared_norms(self) -> _F:
        """``sum_{channel, dim} J^2`` for every (ray, corner) entry."""
        return np.einsum("kcd,kcd->k", self.matrices, self.matrices)


def _back_accumulator(alpha: _F, rgb: _F) -> _F:
    """``B`` of shape (R, N, 3), colour composited strictly behind each sample."""
    n = alpha.shape[1]
    B = np.zeros_like(rgb)
    for i in range(n - 2, -1, -1):
        a = alpha[:, i + 1, None]
        B[:, i] = a * rgb[:, i + 1] + (1.0 - a) * B[:, i + 1]
    return B


def backward(trace: RayTrace, grid: DeformationGrid, channel_order=(0, 1, 2)) -> BatchJacobian:
    """Reverse sweep over a recorded forward pass, one channel at a time."""
    n_rays, n = trace.t.shape
    rgb = trace.sample.rgb.reshape(n_rays, n, 3)
    grad_f = trace.sample.sdf_grad.reshape(n_rays, n, 3)
    grad_c = trace.sample.rgb_grad.reshape(n_rays, n, 3, 3)
    B = _back_accumulator(trace.alpha, rgb)

    corners, cw = grid.footprints(trace.x.reshape(-1, 3))  # (R*N, 8, 3), (R*N, 8)
    flat = grid.flat_index(corners)
    ray_of = np.repeat(np.arange(n_rays, dtype=np.int64), n * 8)
    keys = ray_of * grid.n_vertices + flat.ravel()
    uniq, inverse = np.unique(keys, return_inverse=True)
    extent = grid.aabb.extent

    matrices = np.empty((len(uniq), 3, 3))
    for ch in channel_order:
        # fresh buffer per channel; nothing carries over from the previous pass
        buf = np.zeros((len(uniq), 3))
        adj_alpha = trace.T * (rgb[..., ch] - B[..., ch])
        adj_f = adj_alpha * trace.dalpha_df
        adj_y = adj_f[..., None] * grad_f + trace.weights[..., None] * grad_c[:, :, ch, :]
        adj_d = (adj_y * extent).reshape(-1, 3)  # normalized offsets map to world by the extent
        contrib = cw[..., None] * adj_d[:, None, :]  # (R*N, 8, 3)
        for dim in range(3):
            buf[:, dim] = np.bincount(inverse, weights=contrib[..., dim].ravel(), minlength=len(uniq))
        matrices[:, ch, :] = buf
    return BatchJacobian(uniq // grid.n_vertices, uniq % grid.n_vertices, matrices)


def _differentiable_opts(opts: RenderOptions) -> RenderOptions:
    return opts if opts.apply_deformation else replace(opts, apply_deformation=True)


def ray_jacobians(field: Field, grid: DeformationGrid, origins: _F, dirs: _F, near: _F, far: _F,
                  opts: RenderOptions, uniforms: _F, channel_order=(0, 1, 2)) -> BatchJacobian:
    """Sample, render and differentiate a batch of rays."""
    opts = _differentiable_opts(opts)
    t0, t1, valid = prepare_rays(field, origins, dirs, near, far)
    t = sample_batch(field, grid, origins, dirs, t0, t1, opts, uniforms)
    trace = trace_fixed(field, grid, origins, dirs, t, opts, valid)
    return backward(trace, grid, channel_order)


def _single_ray(field: Field, grid: DeformationGrid, ray, opts: RenderOptions):
    origin, direction, near, far = ray
    if not near < far:
        raise InvalidInputError("ray needs near < far")
    o = np.asarray(origin, dtype=np.float64).reshape(1, 3)
    d = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    t0, t1, valid = prepare_rays(field, o, d, np.array([float(near)]), np.array([float(far)]))
    if not valid[0]:
        t0, t1 = np.array([float(near)]), np.array([float(far)])
    u = pixel_uniforms(opts.seed, 1, opts)
    t = sample_batch(field, grid, o, d, t0, t1, opts, u)
    return o, d, t


def color_jacobian(field: Field, grid: DeformationGrid, ray, opts: RenderOptions,
                   channel_order=(0, 1, 2)) -> CornerJacobian:
    """Exact reverse-mode Jacobian of one ray's composited colour.

    ``ray`` is ``(origin, direction, near, far)``; samples are drawn exactly as
    :func:`~sdf_uncertainty.renderer.sample_ray` draws them.
    """
    opts = _differentiable_opts(opts)
    o, d, t = _single_ray(field, grid, ray, opts)
    trace = trace_fixed(field, grid, o, d, t, opts)
    bj = backward(trace, grid, channel_order)
    return CornerJacobian(grid.unflatten(bj.corner), bj.matrices)


def ray_color_fixed(field: Field, grid: DeformationGrid, ray, t: _F, opts: RenderOptions) -> _F:
    """Composited colour of one ray at frozen sample distances ``t``."""
    o = np.asarray(ray[0], dtype=np.float64).reshape(1, 3)
    d = np.asarray(ray[1], dtype=np.float64).reshape(1, 3)
    return trace_fixed(field, grid, o, d, np.asarray(t).reshape(1, -1), _differentiable_opts(opts)).rgb[0]


def fd_jacobian(field: Field, grid: DeformationGrid, ray, opts: RenderOptions,
                h: float | None = None) -> CornerJacobian:
    """Central-difference Jacobian: perturb each touched stored offset by ``+-h`` and re-render.

    ``h`` is in normalized offset units; the default is ``1e-4`` of a cell edge.
    """
    opts = _differentiable_opts(opts)
    if h is None:
        h = FD_STEP_FACTOR / grid.resolution
    if not h > 0:
        raise InvalidInputError("finite-difference step must be positive")
    o, d, t = _single_ray(field, grid, ray, opts)
    x = o + t[0][:, None] * d
    corners, _ = grid.footprints(x)
    flat = np.unique(grid.flat_index(corners).ravel())
    touched = grid.unflatten(flat)

    work = DeformationGrid(grid.level, grid.aabb, grid.offsets.copy())
    mats = np.zeros((len(touched), 3, 3))
    for n, (i, j, k) in enumerate(touched):
        for dim in range(3):
            orig = work.offsets[i, j, k, dim]
            work.offsets[i, j, k, dim] = orig + h
            plus = ray_color_fixed(field, work, (o, d), t, opts)
            work.offsets[i, j, k, dim] = orig - h
            minus = ray_color_fixed(field, work, (o, d), t, opts)
            work.offsets[i, j, k, dim] = orig
            mats[n, :, dim] = (plus - minus) / (2 * h)
    return CornerJacobian(touched, mats)
