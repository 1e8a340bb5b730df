"""Signed distance scenes: analytic CSG primitives and baked voxel fields.

Every field object exposes ``aabb`` and ``evaluate(points)``; the latter
returns a :class:`FieldSample` holding the signed distance, its spatial
gradient, the albedo and the albedo's spatial Jacobian for a batch of
``(M, 3)`` points.  The renderer and the gradient engine only talk to
fields through that method, so analytic scenes and voxel bakes are
interchangeable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np
import numpy.typing as npt

from .errors import ConfigurationError, InvalidInputError

_F = npt.NDArray[np.float64]

SHAPES = ("sphere", "box", "torus", "plane")
CSG_OPS = ("union", "intersection", "subtraction")

SURFACE_TOL_FACTOR = 1e-4
MAX_TRACE_ITERATIONS = 256


def _as_points(x) -> tuple[_F, bool]:
    """Return ``(points (M, 3), was_single)``; raise on non-finite input."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if pts.shape[-1] != 3:
        raise InvalidInputError(f"expected 3-vectors, got shape {arr.shape}")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("query point is not finite")
    return pts.reshape(-1, 3), single


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box in world units."""

    min: _F
    max: _F

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise InvalidInputError("aabb bounds must be finite")
        if np.any(hi <= lo):
            raise InvalidInputError(f"degenerate aabb: min={lo.tolist()} max={hi.tolist()}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self) -> _F:
        return self.max - self.min

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    @property
    def center(self) -> _F:
        return 0.5 * (self.min + self.max)

    def __eq__(self, other):
        if not isinstance(other, Aabb):
            return NotImplemented
        return bool(np.array_equal(self.min, other.min) and np.array_equal(self.max, other.max))

    def __hash__(self):
        return hash((tuple(self.min), tuple(self.max)))

    def contains(self, x) -> npt.NDArray[np.bool_]:
        pts = np.asarray(x, dtype=np.float64)
        return np.all((pts >= self.min) & (pts <= self.max), axis=-1)

    def clip_rays(self, origins: _F, dirs: _F, near, far) -> tuple[_F, _F]:
        """Slab test.  Returns ``(t0, t1)``; rays missing the box get ``t0 >= t1``."""
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            ta = (self.min - origins) * inv
            tb = (self.max - origins) * inv
        lo = np.where(np.isnan(ta), -np.inf, np.minimum(ta, tb))
        hi = np.where(np.isnan(tb), np.inf, np.maximum(ta, tb))
        t0 = np.maximum(np.max(lo, axis=-1), near)
        t1 = np.minimum(np.min(hi, axis=-1), far)
        return t0, t1

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}


@dataclass
class FieldSample:
    """Batched field evaluation (``M`` points)."""

    sdf: _F  # (M,)
    sdf_grad: _F  # (M, 3)
    rgb: _F  # (M, 3)
    rgb_grad: _F  # (M, 3 channels, 3 dims)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Texture:
    """Procedural albedo modulation ``amplitude * prod_axis sin(frequency * x_axis + phase_ch)``.

    Results are clipped to ``[0, 1]``.  Used to give desk-scale scenes the
    kind of appearance variation a trained colour network would carry.
    """

    amplitude: float
    frequency: float
    phase: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def apply(self, base: _F, p: _F) -> tuple[_F, _F]:
        ph = np.asarray(self.phase, dtype=np.float64)
        arg = self.frequency * p[:, None, :] + ph[None, :, None]  # (M, ch, dim)
        s = np.sin(arg)
        c = np.cos(arg)
        prod = np.prod(s, axis=-1)
        rgb = base[None, :] + self.amplitude * prod
        grad = np.empty(arg.shape)
        for d in range(3):
            others = np.prod(np.delete(s, d, axis=-1), axis=-1)
            grad[..., d] = self.amplitude * self.frequency * c[..., d] * others
        clipped = (rgb < 0.0) | (rgb > 1.0)
        grad[clipped] = 0.0
        return np.clip(rgb, 0.0, 1.0), grad


@dataclass(frozen=True)
class Primitive:
    """One analytic shape with an albedo.

    ``params`` keys per shape:

    * sphere: ``center``, ``radius``
    * box: ``center``, ``half_extents``
    * torus: ``center``, ``major_radius``, ``minor_radius`` (ring in the xz-plane)
    * plane: ``normal``, ``offset`` (surface where ``normal . x == offset``)
    """

    shape: str
    params: dict
    albedo: tuple[float, float, float]
    texture: Texture | None = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise InvalidInputError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        alb = tuple(float(a) for a in self.albedo)
        if len(alb) != 3 or not all(0.0 <= a <= 1.0 for a in alb):
            raise InvalidInputError(f"albedo must be an rgb triple in [0,1], got {self.albedo}")
        object.__setattr__(self, "albedo", alb)
        p = {k: (np.asarray(v, dtype=np.float64) if isinstance(v, (list, tuple, np.ndarray)) else float(v))
             for k, v in self.params.items()}
        required = {
            "sphere": ("center", "radius"),
            "box": ("center", "half_extents"),
            "torus": ("center", "major_radius", "minor_radius"),
            "plane": ("normal", "offset"),
        }[self.shape]
        for key in required:
            if key not in p:
                raise InvalidInputError(f"{self.shape} primitive is missing parameter {key!r}")
        if self.shape == "plane":
            n = p["normal"]
            norm = np.linalg.norm(n)
            if norm == 0:
                raise InvalidInputError("plane normal must be nonzero")
            p["normal"] = n / norm
        object.__setattr__(self, "params", p)

    def distance(self, pts: _F) -> tuple[_F, _F]:
        """Signed distance and gradient at ``pts`` (M, 3)."""
        p = self.params
        if self.shape == "sphere":
            q = pts - p["center"]
            r = np.linalg.norm(q, axis=-1)
            safe = np.where(r > 0, r, 1.0)
            grad = np.where((r > 0)[:, None], q / safe[:, None], np.array([1.0, 0.0, 0.0]))
            return r - p["radius"], grad
        if self.shape == "box":
            rel = pts - p["center"]
            q = np.abs(rel) - p["half_extents"]
            qpos = np.maximum(q, 0.0)
            outside = np.linalg.norm(qpos, axis=-1)
            qmax = np.max(q, axis=-1)
            f = outside + np.minimum(qmax, 0.0)
            sgn = np.where(rel >= 0, 1.0, -1.0)
            grad = np.zeros_like(pts)
            out = outside > 0
            grad[out] = sgn[out] * qpos[out] / outside[out, None]
            inside = ~out
            axis = np.argmax(q[inside], axis=-1)
            grad[np.flatnonzero(inside), axis] = sgn[inside, axis]
            return f, grad
        if self.shape == "torus":
            rel = pts - p["center"]
            rho = np.hypot(rel[:, 0], rel[:, 2])
            q0 = rho - p["major_radius"]
            q1 = rel[:, 1]
            qn = np.hypot(q0, q1)
            f = qn - p["minor_radius"]
            safe_rho = np.where(rho > 0, rho, 1.0)
            safe_qn = np.where(qn > 0, qn, 1.0)
            drho = np.stack([rel[:, 0] / safe_rho, np.zeros_like(rho), rel[:, 2] / safe_rho], axis=-1)
            grad = (q0[:, None] * drho + q1[:, None] * np.array([0.0, 1.0, 0.0])) / safe_qn[:, None]
            return f, grad
        n = p["normal"]
        return pts @ n - p["offset"], np.broadcast_to(n, pts.shape).copy()

    def color(self, pts: _F) -> tuple[_F, _F]:
        base = np.asarray(self.albedo)
        if self.texture is None:
            return np.broadcast_to(base, pts.shape).copy(), np.zeros((len(pts), 3, 3))
        return self.texture.apply(base, pts)


CsgNode = Union[int, dict]


def _validate_csg(node: CsgNode, n_prims: int) -> None:
    if isinstance(node, (int, np.integer)) and not isinstance(node, bool):
        if not 0 <= node < n_prims:
            raise InvalidInputError(f"CSG tree references primitive {node}, scene has {n_prims}")
        return
    if not isinstance(node, dict):
        raise InvalidInputError(f"CSG node must be an index or an op dict, got {node!r}")
    op = node.get("op")
    children = node.get("children")
    if op not in CSG_OPS:
        raise InvalidInputError(f"unknown CSG op {op!r}")
    if not isinstance(children, list) or not children:
        raise InvalidInputError(f"CSG {op} needs a non-empty children list")
    if op == "subtraction" and len(children) != 2:
        raise InvalidInputError("CSG subtraction takes exactly two children")
    for child in children:
        _validate_csg(child, n_prims)


@dataclass
class SdfScene:
    """Analytic CSG scene.  Without an explicit tree all primitives are unioned."""

    primitives: list[Primitive]
    aabb: Aabb
    csg: CsgNode | None = None

    def __post_init__(self):
        if not self.primitives:
            raise InvalidInputError("scene needs at least one primitive")
        if self.csg is None:
            self.csg = {"op": "union", "children": list(range(len(self.primitives)))}
        _validate_csg(self.csg, len(self.primitives))

    def _eval_node(self, node: CsgNode, pts: _F) -> tuple[_F, _F, npt.NDArray[np.int64]]:
        if not isinstance(node, dict):
            f, g = self.primitives[int(node)].distance(pts)
            return f, g, np.full(len(pts), int(node), dtype=np.int64)
        op = node["op"]
        if op == "subtraction":
            fa, ga, oa = self._eval_node(node["children"][0], pts)
            fb, gb, _ = self._eval_node(node["children"][1], pts)
            take_b = -fb > fa
            f = np.where(take_b, -fb, fa)
            g = np.where(take_b[:, None], -gb, ga)
            # carved surface keeps the albedo of the solid being carved
            return f, g, oa
        f, g, o = self._eval_node(node["children"][0], pts)
        for child in node["children"][1:]:
            fc, gc, oc = self._eval_node(child, pts)
            take = fc < f if op == "union" else fc > f
            f = np.where(take, fc, f)
            g = np.where(take[:, None], gc, g)
            o = np.where(take, oc, o)
        return f, g, o

    def evaluate(self, pts: _F) -> FieldSample:
        f, g, owner = self._eval_node(self.csg, pts)
        rgb = np.empty_like(pts)
        rgb_grad = np.zeros((len(pts), 3, 3))
        for idx in np.unique(owner):
            sel = owner == idx
            rgb[sel], rgb_grad[sel] = self.primitives[idx].color(pts[sel])
        return FieldSample(f, g, rgb, rgb_grad)


# ---------------------------------------------------------------------------
# Voxel fields
# ---------------------------------------------------------------------------


def _cell_coords(u: _F, n_cells: int) -> tuple[npt.NDArray[np.int64], _F, npt.NDArray[np.bool_]]:
    """Split lattice coordinates ``u`` (already scaled to ``[0, n_cells]``) into cell base and fraction.

    Also returns a mask of axes that were clamped, whose derivative is zero.
    """
    clamped = (u < 0.0) | (u > n_cells)
    u = np.clip(u, 0.0, float(n_cells))
    base = np.minimum(np.floor(u).astype(np.int64), n_cells - 1)
    return base, u - base, clamped


def lattice_points(aabb: Aabb, n: int) -> _F:
    """World positions of an ``n^3`` vertex lattice spanning ``aabb``, shape (n, n, n, 3)."""
    axes = [np.linspace(aabb.min[d], aabb.max[d], n) for d in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


_CORNER_BITS = np.array([[(c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)], dtype=np.int64)


def trilinear_weights(frac: _F) -> tuple[_F, _F]:
    """Corner weights (M, 8) and their derivative w.r.t. the fraction (M, 8, 3)."""
    bits = _CORNER_BITS[None, :, :]
    fr = frac[:, None, :]
    lin = np.where(bits == 1, fr, 1.0 - fr)  # (M, 8, 3)
    dlin = np.where(bits == 1, 1.0, -1.0) * np.ones_like(lin)
    w = np.prod(lin, axis=-1)
    dw = np.empty_like(lin)
    dw[..., 0] = dlin[..., 0] * lin[..., 1] * lin[..., 2]
    dw[..., 1] = lin[..., 0] * dlin[..., 1] * lin[..., 2]
    dw[..., 2] = lin[..., 0] * lin[..., 1] * dlin[..., 2]
    return w, dw


@dataclass
class VoxelSdf:
    """Signed distances and albedos on an ``n^3`` vertex lattice spanning ``aabb``.

    Queries outside the box clamp to the boundary.
    """

    resolution: int
    values: _F  # (n, n, n), indexed [ix, iy, iz]
    albedo_values: _F  # (n, n, n, 3)
    aabb: Aabb

    def __post_init__(self):
        n = int(self.resolution)
        if n < 2:
            raise InvalidInputError("voxel resolution must be >= 2")
        self.resolution = n
        self.values = np.asarray(self.values, dtype=np.float64)
        self.albedo_values = np.asarray(self.albedo_values, dtype=np.float64)
        if self.values.shape != (n, n, n) or self.albedo_values.shape != (n, n, n, 3):
            raise InvalidInputError(
                f"voxel arrays must have shapes {(n,) * 3} and {(n,) * 3 + (3,)}, got "
                f"{self.values.shape} and {self.albedo_values.shape}"
            )
        if not (np.all(np.isfinite(self.values)) and np.all(np.isfinite(self.albedo_values))):
            raise InvalidInputError("voxel values must be finite")

    def lattice_points(self) -> _F:
        return lattice_points(self.aabb, self.resolution)

    def evaluate(self, pts: _F) -> FieldSample:
        n_cells = self.resolution - 1
        spacing = self.aabb.extent / n_cells
        u = (pts - self.aabb.min) / spacing
        base, frac, clamped = _cell_coords(u, n_cells)
        w, dw = trilinear_weights(frac)
        idx = base[:, None, :] + _CORNER_BITS[None, :, :]
        ix, iy, iz = idx[..., 0], idx[..., 1], idx[..., 2]
        corner_f = self.values[ix, iy, iz]  # (M, 8)
        corner_c = self.albedo_values[ix, iy, iz]  # (M, 8, 3)
        f = np.einsum("mc,mc->m", w, corner_f)
        scale = np.where(clamped, 0.0, 1.0 / spacing)  # (M, 3)
        grad = np.einsum("mcd,mc->md", dw, corner_f) * scale
        rgb = np.einsum("mc,mck->mk", w, corner_c)
        rgb_grad = np.einsum("mcd,mck->mkd", dw, corner_c) * scale[:, None, :]
        return FieldSample(f, grad, rgb, rgb_grad)


Field = Union[SdfScene, VoxelSdf]


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def eval_sdf(field: Field, x) -> float | _F:
    """Signed distance at ``x`` (a 3-vector or an ``(M, 3)`` array)."""
    pts, single = _as_points(x)
    f = field.evaluate(pts).sdf
    return float(f[0]) if single else f


def eval_color(field: Field, x) -> _F:
    """Albedo at ``x``; shape ``(3,)`` for a single point else ``(M, 3)``."""
    pts, single = _as_points(x)
    rgb = field.evaluate(pts).rgb
    return rgb[0] if single else rgb


def sphere_trace_batch(field: Field, origins: _F, dirs: _F, t_near, t_far,
                       surface_tol: float | None = None,
                       max_iterations: int = MAX_TRACE_ITERATIONS) -> _F:
    """Sphere-trace many rays at once.  Returns hit distances, ``nan`` on a miss.

    After the march reports a hit, the root is polished by bisection when a
    sign change can be bracketed just behind the hit point.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = len(origins)
    t_near = np.broadcast_to(np.asarray(t_near, dtype=np.float64), (n,)).copy()
    t_far = np.broadcast_to(np.asarray(t_far, dtype=np.float64), (n,)).copy()
    tol = SURFACE_TOL_FACTOR * field.aabb.diagonal if surface_tol is None else surface_tol

    def sdf_at(t, sel):
        return field.evaluate(origins[sel] + t[:, None] * dirs[sel]).sdf

    t = t_near.copy()
    active = np.ones(n, dtype=bool)
    hit = np.zeros(n, dtype=bool)
    for _ in range(max_iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        f = sdf_at(t[idx], idx)
        done = np.abs(f) < tol
        hit[idx[done]] = True
        active[idx[done]] = False
        t[idx[~done]] += f[~done]
        gone = t > t_far
        active &= ~gone
    hit &= t <= t_far

    idx = np.flatnonzero(hit)
    if idx.size:
        lo = t[idx].copy()
        f_lo = sdf_at(lo, idx)
        hi = lo.copy()
        found = np.zeros(idx.size, dtype=bool)
        for k in (0.5, 1.0, 2.0, 4.0):
            cand = lo + k * tol
            fc = sdf_at(cand, idx)
            newly = ~found & (np.sign(fc) != np.sign(f_lo)) & (f_lo != 0)
            hi[newly] = cand[newly]
            found |= newly
        sel = np.flatnonzero(found)
        if sel.size:
            a, b = lo[sel], hi[sel]
            fa = f_lo[sel]
            for _ in range(60):
                m = 0.5 * (a + b)
                fm = sdf_at(m, idx[sel])
                same = np.sign(fm) == np.sign(fa)
                a = np.where(same, m, a)
                fa = np.where(same, fm, fa)
                b = np.where(same, b, m)
            t[idx[sel]] = 0.5 * (a + b)
    return np.where(hit, t, np.nan)


def sphere_trace(field: Field, origin, direction, t_near: float, t_far: float,
                 surface_tol: float | None = None,
                 max_iterations: int = MAX_TRACE_ITERATIONS) -> float | None:
    """Distance to the first surface hit along a ray, or ``None`` on a miss."""
    o, _ = _as_points(origin)
    d, _ = _as_points(direction)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise InvalidInputError("ray direction must be unit length")
    if not t_near < t_far:
        raise InvalidInputError("need t_near < t_far")
    t = sphere_trace_batch(field, o, d, t_near, t_far, surface_tol, max_iterations)[0]
    return None if np.isnan(t) else float(t)


def bake_voxel_sdf(scene: SdfScene, resolution: int) -> VoxelSdf:
    """Sample an analytic scene's distance and albedo on a vertex lattice."""
    if resolution < 2:
        raise InvalidInputError("bake resolution must be >= 2")
    pts = lattice_points(scene.aabb, resolution).reshape(-1, 3)
    sample = scene.evaluate(pts)
    shape = (resolution,) * 3
    return VoxelSdf(resolution, sample.sdf.reshape(shape), sample.rgb.reshape(shape + (3,)), scene.aabb)


def corrupt_voxel_sdf(voxel: VoxelSdf, regions: Sequence[tuple[Sequence[float], float]],
                      magnitude: float, seed: int) -> VoxelSdf:
    """Add uniform noise in ``[-magnitude, magnitude]`` to lattice values inside spherical regions.

    The noise field is drawn for the full lattice from ``seed`` and then
    masked, so the values a region receives do not depend on which other
    regions are listed.
    """
    if magnitude < 0:
        raise InvalidInputError("corruption magnitude must be nonnegative")
    pts = voxel.lattice_points()
    mask = np.zeros(voxel.values.shape, dtype=bool)
    for center, radius in regions:
        if radius <= 0:
            raise InvalidInputError("corruption radius must be positive")
        c = np.asarray(center, dtype=np.float64)
        mask |= np.linalg.norm(pts - c, axis=-1) <= radius
    noise = np.random.default_rng(seed).uniform(-magnitude, magnitude, size=voxel.values.shape)
    values = voxel.values.copy()
    values[mask] += noise[mask]
    return replace(voxel, values=values, albedo_values=voxel.albedo_values.copy())


def region_mask(points: _F, regions: Sequence[tuple[Sequence[float], float]]) -> npt.NDArray[np.bool_]:
    """True where a point lies inside any of the spherical regions."""
    mask = np.zeros(points.shape[:-1], dtype=bool)
    for center, radius in regions:
        mask |= np.linalg.norm(points - np.asarray(center, dtype=np.float64), axis=-1) <= radius
    return mask


def check_same_aabb(a: Aabb, b: Aabb, what: str = "aabb") -> None:
    if a != b:
        raise ConfigurationError(f"{what} mismatch: {a.to_dict()} vs {b.to_dict()}")
