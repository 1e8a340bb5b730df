"""Sigmoid-opacity volume rendering of signed distance fields.

Per ray: a stratified coarse pass, an importance-sampled fine pass driven by
the coarse compositing weights, then front-to-back alpha compositing of the
field's albedo.  When deformation is enabled every sample is evaluated at
``x + d(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.special import expit

from .camera import Camera, generate_rays
from .deformation import DeformationGrid
from .errors import ConfigurationError, InvalidInputError
from .geometry import Field, FieldSample

_F = npt.NDArray[np.float64]

DEPTH_WEIGHT_EPS = 1e-6
DEGENERATE_WEIGHT_EPS = 1e-12
CHUNK_RAYS = 4096


@dataclass(frozen=True)
class RenderOptions:
    s: float = 64.0
    n_coarse: int = 48
    n_fine: int = 32
    apply_deformation: bool = True
    seed: int = 0
    literal_sigmoid: bool = False
    sigma_mode: str = "nearest"

    def __post_init__(self):
        if not self.s > 0:
            raise InvalidInputError("sigmoid sharpness s must be positive")
        if self.n_coarse < 2 or self.n_fine < 0:
            raise InvalidInputError("need n_coarse >= 2 and n_fine >= 0")
        if self.sigma_mode not in ("nearest", "trilinear"):
            raise InvalidInputError(f"unknown sigma_mode {self.sigma_mode!r}")

    @property
    def n_samples(self) -> int:
        return self.n_coarse + self.n_fine


@dataclass
class RaySample:
    t: float
    x: _F
    delta: float


@dataclass
class RenderOutput:
    rgb: _F  # (H, W, 3)
    depth: _F  # (H, W)
    uncertainty: _F  # (H, W)
    weight_sum: _F  # (H, W)


def opacity(sdf_value, s: float):
    """``1 / (1 + exp(-s * f))``, evaluated without overflow."""
    if not s > 0:
        raise InvalidInputError("s must be positive")
    return expit(s * np.asarray(sdf_value, dtype=np.float64))


def _alpha_and_slope(f: _F, opts: RenderOptions) -> tuple[_F, _F]:
    """Per-sample opacity and its derivative with respect to the signed distance.

    The renderer's default orientation is ``opacity(-f)``, which is opaque
    inside the surface; ``literal_sigmoid`` switches to ``opacity(f)``.
    """
    sign = 1.0 if opts.literal_sigmoid else -1.0
    a = expit(sign * opts.s * f)
    return a, sign * opts.s * a * (1.0 - a)


def composite(alphas, colors, ts) -> tuple[_F, float, float]:
    """Front-to-back compositing of one ray's samples.

    Returns ``(rgb, depth, weight_sum)``; depth is the weight-normalized mean
    sample distance, or 0 on a (nearly) transparent ray.
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    ts = np.asarray(ts, dtype=np.float64)
    rgb, depth, wsum, _, _ = composite_batch(alphas[None], colors[None], ts[None])
    return rgb[0], float(depth[0]), float(wsum[0])


def transmittance(alphas: _F) -> _F:
    """``T_i = prod_{j<i} (1 - alpha_j)`` along the last axis."""
    alphas = np.asarray(alphas, dtype=np.float64)
    T = np.cumprod(1.0 - alphas, axis=-1)
    return np.concatenate([np.ones_like(T[..., :1]), T[..., :-1]], axis=-1)


def composite_batch(alpha: _F, rgb: _F, t: _F):
    """Composite ``R`` rays at once; returns ``(rgb, depth, weight_sum, weights, T)``."""
    T = transmittance(alpha)
    w = T * alpha
    # the weights telescope to 1 - prod(1 - alpha); this form never exceeds 1 and keeps small sums accurate
    with np.errstate(divide="ignore"):
        wsum = -np.expm1(np.log1p(-alpha).sum(axis=-1))
    color = np.einsum("rn,rnk->rk", w, rgb)
    norm = w.sum(axis=-1)
    ok = wsum > DEPTH_WEIGHT_EPS
    depth = np.where(ok, (w * t).sum(axis=-1) / np.where(ok, norm, 1.0), 0.0)
    return color, depth, wsum, w, T


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def pixel_uniforms(seed: int, n_rays: int, opts: RenderOptions) -> _F:
    """Jitter/inverse-CDF uniforms for every pixel of a view, shape ``(n_rays, n_samples)``.

    Drawn for the whole view so that any subset of rays sees the same samples
    it would in a full render.
    """
    return np.random.default_rng(seed).random((n_rays, opts.n_samples))


def _eval_points(field: Field, grid: DeformationGrid | None, x: _F, opts: RenderOptions) -> tuple[_F, FieldSample]:
    flat = x.reshape(-1, 3)
    if opts.apply_deformation and grid is not None:
        y = flat + grid.world_displacement(flat)
    else:
        y = flat
    return y, field.evaluate(y)


def sample_batch(field: Field, grid: DeformationGrid | None, origins: _F, dirs: _F,
                 t0: _F, t1: _F, opts: RenderOptions, uniforms: _F) -> _F:
    """Hierarchical sample distances ``(R, n_coarse + n_fine)``, sorted per ray."""
    n_rays = len(origins)
    nc, nf = opts.n_coarse, opts.n_fine
    span = (t1 - t0)[:, None]
    k = np.arange(nc)[None, :]
    t_c = t0[:, None] + (k + uniforms[:, :nc]) * span / nc
    if nf == 0:
        return t_c
    x = origins[:, None, :] + t_c[..., None] * dirs[:, None, :]
    _, sample = _eval_points(field, grid, x, opts)
    alpha, _ = _alpha_and_slope(sample.sdf.reshape(n_rays, nc), opts)
    w = transmittance(alpha) * alpha
    # weight of sample i covers the interval since the previous sample
    left = np.concatenate([t0[:, None], t_c[:, :-1]], axis=1)
    total = w.sum(axis=1)
    degenerate = total < DEGENERATE_WEIGHT_EPS
    pdf = np.where(degenerate[:, None], 1.0 / nc, w / np.where(degenerate, 1.0, total)[:, None])
    cdf = np.cumsum(pdf, axis=1)
    cdf[:, -1] = 1.0
    u = uniforms[:, nc:]
    idx = np.minimum((cdf[:, None, :] <= u[:, :, None]).sum(axis=-1), nc - 1)
    c_lo = np.take_along_axis(np.concatenate([np.zeros((n_rays, 1)), cdf[:, :-1]], axis=1), idx, axis=1)
    p = np.take_along_axis(pdf, idx, axis=1)
    frac = np.clip((u - c_lo) / np.where(p > 0, p, 1.0), 0.0, 1.0)
    a = np.take_along_axis(left, idx, axis=1)
    b = np.take_along_axis(t_c, idx, axis=1)
    t_f = a + frac * (b - a)
    t_f = np.where(degenerate[:, None], t0[:, None] + u * span, t_f)
    return np.sort(np.concatenate([t_c, t_f], axis=1), axis=1)


def sample_ray(field: Field, ray, opts: RenderOptions, grid: DeformationGrid | None = None) -> list[RaySample]:
    """Coarse-then-fine samples along one ``(origin, direction, near, far)`` ray.

    The interval is first clipped to the field's box, as in :func:`render_view`.
    """
    origin, direction, near, far = ray
    if not near < far:
        raise InvalidInputError("ray needs near < far")
    o = np.asarray(origin, dtype=np.float64).reshape(1, 3)
    d = np.asarray(direction, dtype=np.float64).reshape(1, 3)
    u = pixel_uniforms(opts.seed, 1, opts)
    t0, t1, valid = prepare_rays(field, o, d, np.array([float(near)]), np.array([float(far)]))
    if not valid[0]:
        t0, t1 = np.array([float(near)]), np.array([float(far)])
    t = sample_batch(field, grid, o, d, t0, t1, opts, u)[0]
    delta = np.append(np.diff(t), t1[0] - t[-1])
    return [RaySample(float(ti), o[0] + ti * d[0], float(di)) for ti, di in zip(t, delta)]


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


@dataclass
class RayTrace:
    """Forward-pass intermediates for ``R`` rays with ``N`` samples each."""

    t: _F  # (R, N)
    x: _F  # (R, N, 3) undeformed sample positions
    sample: FieldSample  # flattened (R*N)
    alpha: _F  # (R, N)
    dalpha_df: _F  # (R, N)
    T: _F  # (R, N)
    weights: _F  # (R, N)
    rgb: _F  # (R, 3)
    depth: _F  # (R,)
    weight_sum: _F  # (R,)
    valid: npt.NDArray[np.bool_]  # (R,)


def trace_fixed(field: Field, grid: DeformationGrid | None, origins: _F, dirs: _F, t: _F,
                opts: RenderOptions, valid: npt.NDArray[np.bool_] | None = None) -> RayTrace:
    """Evaluate and composite rays at given sample distances (no resampling)."""
    n_rays, n = t.shape
    if valid is None:
        valid = np.ones(n_rays, dtype=bool)
    x = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    _, sample = _eval_points(field, grid, x, opts)
    alpha, slope = _alpha_and_slope(sample.sdf.reshape(n_rays, n), opts)
    alpha = np.where(valid[:, None], alpha, 0.0)
    slope = np.where(valid[:, None], slope, 0.0)
    rgb, depth, wsum, w, T = composite_batch(alpha, sample.rgb.reshape(n_rays, n, 3), t)
    return RayTrace(t, x, sample, alpha, slope, T, w, rgb, depth, wsum, valid)


def prepare_rays(field: Field, origins: _F, dirs: _F, near: _F, far: _F):
    """Clip rays to the field's box; returns ``(t0, t1, valid)`` with safe bounds on invalid rays."""
    t0, t1 = field.aabb.clip_rays(origins, dirs, near, far)
    valid = t1 > t0
    t0 = np.where(valid, t0, near)
    t1 = np.where(valid, t1, near + 1.0)
    return t0, t1, valid


def trace_rays(field: Field, grid: DeformationGrid | None, origins: _F, dirs: _F, near: _F, far: _F,
               opts: RenderOptions, uniforms: _F) -> RayTrace:
    t0, t1, valid = prepare_rays(field, origins, dirs, near, far)
    t = sample_batch(field, grid, origins, dirs, t0, t1, opts, uniforms)
    return trace_fixed(field, grid, origins, dirs, t, opts, valid)


def render_view(field: Field, grid: DeformationGrid, hessian, camera: Camera,
                opts: RenderOptions) -> RenderOutput:
    """Render rgb, depth, uncertainty and accumulated weight for one camera.

    ``hessian`` may be ``None``; the uncertainty image is then all zeros.
    """
    if grid is not None and grid.aabb != field.aabb:
        raise ConfigurationError("deformation grid aabb does not match the field aabb")
    if hessian is not None and hessian.aabb != field.aabb:
        raise ConfigurationError("hessian grid aabb does not match the field aabb")
    origins, dirs, near, far = generate_rays(camera)
    n_rays = len(origins)
    uniforms = pixel_uniforms(opts.seed, n_rays, opts)
    rgb = np.zeros((n_rays, 3))
    depth = np.zeros(n_rays)
    unc = np.zeros(n_rays)
    wsum = np.zeros(n_rays)
    for start in range(0, n_rays, CHUNK_RAYS):
        sl = slice(start, min(start + CHUNK_RAYS, n_rays))
        tr = trace_rays(field, grid, origins[sl], dirs[sl], near[sl], far[sl], opts, uniforms[sl])
        rgb[sl] = tr.rgb
        depth[sl] = tr.depth
        wsum[sl] = tr.weight_sum
        if hessian is not None:
            sig = hessian.sigma_at(tr.x.reshape(-1, 3), opts.sigma_mode).reshape(tr.t.shape)
            unc[sl] = (tr.weights * sig).sum(axis=1)
    h, w = camera.height, camera.width
    return RenderOutput(np.clip(rgb, 0.0, 1.0).reshape(h, w, 3), depth.reshape(h, w),
                        unc.reshape(h, w), np.clip(wsum, 0.0, 1.0).reshape(h, w))


def composite_per_sample(field: Field, grid: DeformationGrid | None, camera: Camera, opts: RenderOptions,
                         value_fn) -> tuple[_F, RenderOutput]:
    """Render a view and composite an extra per-sample scalar ``value_fn(x)`` with the same weights.

    Returns ``(image, render_output)``; used for the ensemble-variance baseline.
    """
    origins, dirs, near, far = generate_rays(camera)
    n_rays = len(origins)
    uniforms = pixel_uniforms(opts.seed, n_rays, opts)
    extra = np.zeros(n_rays)
    rgb = np.zeros((n_rays, 3))
    depth = np.zeros(n_rays)
    wsum = np.zeros(n_rays)
    for start in range(0, n_rays, CHUNK_RAYS):
        sl = slice(start, min(start + CHUNK_RAYS, n_rays))
        tr = trace_rays(field, grid, origins[sl], dirs[sl], near[sl], far[sl], opts, uniforms[sl])
        vals = value_fn(tr.x.reshape(-1, 3)).reshape(tr.t.shape)
        extra[sl] = (tr.weights * vals).sum(axis=1)
        rgb[sl], depth[sl], wsum[sl] = tr.rgb, tr.depth, tr.weight_sum
    h, w = camera.height, camera.width
    out = RenderOutput(np.clip(rgb, 0.0, 1.0).reshape(h, w, 3), depth.reshape(h, w),
                       np.zeros((h, w)), np.clip(wsum, 0.0, 1.0).reshape(h, w))
    return extra.reshape(h, w), out
