"""Pinhole cameras, ray generation and camera trajectories.

Cameras follow the OpenGL convention: the camera looks down its local
``-z`` axis with ``+y`` up, and ``rotation`` maps camera axes to world axes
(camera-to-world).  ``translation`` is the camera centre in world units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import numpy.typing as npt
from scipy.spatial.transform import Rotation, Slerp

from .errors import InvalidInputError

_F = npt.NDArray[np.float64]


@dataclass(frozen=True)
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: _F
    translation: _F
    near: float
    far: float

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("camera needs positive width and height")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-9:
            raise InvalidInputError("camera rotation is not orthonormal")
        if not 0 < self.near < self.far:
            raise InvalidInputError(f"need 0 < near < far, got near={self.near} far={self.far}")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @property
    def forward(self) -> _F:
        return -self.rotation[:, 2]

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return (
            (self.width, self.height, self.fx, self.fy, self.cx, self.cy, self.near, self.far)
            == (other.width, other.height, other.fx, other.fy, other.cx, other.cy, other.near, other.far)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def to_dict(self) -> dict:
        return {
            "width": self.width, "height": self.height,
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
            "near": self.near, "far": self.far,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(int(d["width"]), int(d["height"]), float(d["fx"]), float(d["fy"]),
                   float(d["cx"]), float(d["cy"]), d["rotation"], d["translation"],
                   float(d["near"]), float(d["far"]))


def look_at_rotation(eye, target, up=(0.0, 1.0, 0.0)) -> _F:
    eye = np.asarray(eye, dtype=np.float64)
    back = eye - np.asarray(target, dtype=np.float64)
    if np.linalg.norm(back) == 0:
        raise InvalidInputError("eye and target coincide")
    z = back / np.linalg.norm(back)
    x = np.cross(np.asarray(up, dtype=np.float64), z)
    if np.linalg.norm(x) < 1e-9:
        # up parallel to the view axis; pick any perpendicular
        x = np.cross(np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 0.0, 1.0]), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def look_at_camera(eye, target, width: int, height: int, fov_deg: float = 40.0,
                   near: float = 0.1, far: float = 20.0, up=(0.0, 1.0, 0.0)) -> Camera:
    focal = 0.5 * width / np.tan(0.5 * np.radians(fov_deg))
    return Camera(width, height, focal, focal, width / 2.0, height / 2.0,
                  look_at_rotation(eye, target, up), np.asarray(eye, dtype=np.float64), near, far)


def orbit_cameras(n: int, radius: float, width: int, height: int, elevation_deg: float = 20.0,
                  target=(0.0, 0.0, 0.0), fov_deg: float = 40.0, near: float = 0.1,
                  far: float = 20.0) -> list[Camera]:
    """``n`` cameras evenly spaced in azimuth on a ring, all aimed at ``target``."""
    target = np.asarray(target, dtype=np.float64)
    cams = []
    el = np.radians(elevation_deg)
    for k in range(n):
        az = 2 * np.pi * k / n
        eye = target + radius * np.array([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])
        cams.append(look_at_camera(eye, target, width, height, fov_deg, near, far))
    return cams


def generate_rays(camera: Camera) -> tuple[_F, _F, _F, _F]:
    """Rays through pixel centres, row-major over the image.

    Returns ``(origins, directions, near, far)`` with shapes ``(H*W, 3)``,
    ``(H*W, 3)``, ``(H*W,)``, ``(H*W,)``.
    """
    u = np.arange(camera.width) + 0.5
    v = np.arange(camera.height) + 0.5
    uu, vv = np.meshgrid(u, v, indexing="xy")
    d_cam = np.stack([(uu - camera.cx) / camera.fx, -(vv - camera.cy) / camera.fy,
                      -np.ones_like(uu)], axis=-1).reshape(-1, 3)
    dirs = d_cam @ camera.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    n = len(dirs)
    origins = np.broadcast_to(camera.translation, (n, 3)).copy()
    return origins, dirs, np.full(n, camera.near), np.full(n, camera.far)


def spiral_path(reference: Camera, n_frames: int, radius: float, rotations: float = 1.0,
                focus_distance: float | None = None, depth_amplitude: float | None = None) -> list[Camera]:
    """Spiral sweep around the reference view axis.

    Frame ``k`` sits at angle ``theta = 2*pi*rotations*k/n_frames`` on a circle of
    ``radius`` in the reference image plane, pushed along the view axis by
    ``depth_amplitude * sin(theta / 2)``, and looks at the reference focus point.
    """
    if n_frames < 1:
        raise InvalidInputError("spiral needs n_frames >= 1")
    if not radius > 0:
        raise InvalidInputError("spiral radius must be positive")
    rot = reference.rotation
    centre = reference.translation
    fwd = reference.forward
    if focus_distance is None:
        focus_distance = float(-centre @ fwd)
        if focus_distance <= 0:
            focus_distance = 1.0
    if depth_amplitude is None:
        depth_amplitude = 0.5 * radius
    focus = centre + focus_distance * fwd
    up = rot[:, 1]
    cams = []
    for k in range(n_frames):
        theta = 2 * np.pi * rotations * k / n_frames
        eye = (centre + radius * (np.cos(theta) * rot[:, 0] + np.sin(theta) * rot[:, 1])
               - depth_amplitude * np.sin(0.5 * theta) * fwd)
        cams.append(replace(reference, rotation=look_at_rotation(eye, focus, up), translation=eye))
    return cams


def interpolate_path(a: Camera, b: Camera, n_frames: int) -> list[Camera]:
    """Lerp translation and intrinsics, slerp rotation; endpoints are ``a`` and ``b`` themselves."""
    if n_frames < 2:
        raise InvalidInputError("interpolation needs n_frames >= 2")
    if (a.width, a.height) != (b.width, b.height):
        raise InvalidInputError("cannot interpolate cameras with different image sizes")
    slerp = Slerp([0.0, 1.0], Rotation.from_matrix(np.stack([a.rotation, b.rotation])))
    same_rot = np.array_equal(a.rotation, b.rotation)
    frames = [a]
    for k in range(1, n_frames - 1):
        s = k / (n_frames - 1)
        rot = a.rotation if same_rot else slerp([s]).as_matrix()[0]

        def lerp(p, q):
            return (1 - s) * p + s * q

        frames.append(Camera(a.width, a.height, lerp(a.fx, b.fx), lerp(a.fy, b.fy), lerp(a.cx, b.cx),
                             lerp(a.cy, b.cy), rot, lerp(a.translation, b.translation),
                             lerp(a.near, b.near), lerp(a.far, b.far)))
    frames.append(b)
    return frames


def keyframe_camera(d: dict, defaults: dict) -> Camera:
    merged = {**defaults, **d}
    if "rotation" in merged and "translation" in merged:
        return Camera.from_dict(merged)
    eye = merged["position"]
    target = merged.get("look_at", (0.0, 0.0, 0.0))
    w, h = int(merged["width"]), int(merged["height"])
    cam = look_at_camera(eye, target, w, h, float(merged.get("fov_deg", 40.0)),
                         float(merged.get("near", 0.1)), float(merged.get("far", 20.0)),
                         merged.get("up", (0.0, 1.0, 0.0)))
    return cam


def load_camera_path(path: str | Path) -> list[Camera]:
    """Read keyframes from JSON and expand them into a smooth trajectory.

    The file holds ``{"defaults": {...}, "frames_per_segment": k, "keyframes": [...]}``.
    Each keyframe gives either ``rotation``/``translation`` or ``position``
    (and optional ``look_at``); missing intrinsics come from ``defaults``.
    With ``frames_per_segment`` absent or 1 the keyframes are returned as-is.
    """
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    try:
        defaults = data.get("defaults", {})
        keys = [keyframe_camera(k, defaults) for k in data["keyframes"]]
    except KeyError as exc:
        raise InvalidInputError(f"{path}: camera keyframe is missing field {exc.args[0]!r}") from None
    if not keys:
        raise InvalidInputError(f"{path}: no keyframes")
    per_seg = int(data.get("frames_per_segment", 1))
    if per_seg <= 1 or len(keys) == 1:
        return keys
    out = [keys[0]]
    for a, b in zip(keys[:-1], keys[1:]):
        out.extend(interpolate_path(a, b, per_seg + 1)[1:])
    return out


def save_camera_path(cameras: list[Camera], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"keyframes": [c.to_dict() for c in cameras]}, fh, indent=2)
