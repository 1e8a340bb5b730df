"""Run configuration: one JSON file plus command-line overrides.

Relative paths inside a config resolve against the config file's directory.
Every validation failure raises :class:`ConfigurationError` naming the
offending field with a dotted path, e.g. ``render.n_coarse``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any

from .camera import Camera, interpolate_path, keyframe_camera, load_camera_path, orbit_cameras, spiral_path
from .colormaps import COLORMAPS
from .errors import ConfigurationError, InvalidInputError
from .evaluation import DEFAULT_FRACTIONS
from .renderer import RenderOptions

MIN_LEVEL, MAX_LEVEL = 2, 8
CAMERA_SOURCES = ("orbit", "path", "interpolate", "spiral")


class InputFileError(ConfigurationError):
    """A path named in the config does not exist."""

    def __init__(self, message: str, path: str):
        super().__init__(message)
        self.path = path


def _get(d: dict, key: str, kind, where: str, default: Any = ...):
    if key not in d:
        if default is ...:
            raise ConfigurationError(f"{where}{key}: required field is missing")
        return default
    value = d[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    wrong_type = not isinstance(value, kind)
    if wrong_type or (isinstance(value, bool) and kind in (int, float)):
        name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ConfigurationError(f"{where}{key}: expected {name}, got {type(value).__name__}")
    return value


def _section(d: dict, key: str, where: str = "") -> dict:
    return _get(d, key, dict, where, {})


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else (base / path)


@dataclass
class CorruptionSpec:
    regions: list[tuple[list[float], float]]
    magnitude: float
    seed: int = 0

    def to_dict(self) -> dict:
        return {"regions": [{"center": list(c), "radius": r} for c, r in self.regions],
                "magnitude": self.magnitude, "seed": self.seed}


@dataclass
class FieldSpec:
    """How the rendered field is derived from the analytic scene.

    ``voxel_resolution`` of ``None`` renders the analytic scene directly.
    """

    voxel_resolution: int | None = None
    corruption: CorruptionSpec | None = None

    def to_dict(self) -> dict:
        return {"voxel_resolution": self.voxel_resolution,
                "corruption": self.corruption.to_dict() if self.corruption else None}


@dataclass
class EvalSpec:
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    ensemble_size: int = 5
    ensemble_noise: float = 0.02
    ensemble_resolution: int | None = None
    ause_mode: str = "oracle"
    inject_oracle: bool = False
    plot: bool = False

    def to_dict(self) -> dict:
        return {"fractions": list(self.fractions), "ensemble_size": self.ensemble_size,
                "ensemble_noise": self.ensemble_noise, "ensemble_resolution": self.ensemble_resolution,
                "ause_mode": self.ause_mode, "inject_oracle": self.inject_oracle, "plot": self.plot}


@dataclass
class SceneEntry:
    name: str
    scene: Path
    field: FieldSpec
    hessian: Path | None = None


@dataclass
class RunConfig:
    scene: Path
    level: int
    render: RenderOptions
    cameras: dict
    out: Path
    hessian: Path | None = None
    seed: int = 0
    rays_per_camera: int = 1024
    threads: int = 1
    bit_exact: bool = True
    field: FieldSpec = dc_field(default_factory=FieldSpec)
    eval: EvalSpec = dc_field(default_factory=EvalSpec)
    colormap: str = "inferno"
    depth_colormap: str = "viridis"
    scenes: list[SceneEntry] = dc_field(default_factory=list)
    base_dir: Path = Path(".")

    def to_dict(self) -> dict:
        """Fully resolved form; loading it back reproduces the run."""
        r = self.render
        return {
            "scene": str(self.scene),
            "level": self.level,
            "render": {"s": r.s, "n_coarse": r.n_coarse, "n_fine": r.n_fine, "seed": r.seed,
                       "literal_sigmoid": r.literal_sigmoid, "sigma_mode": r.sigma_mode},
            "cameras": self.cameras,
            "out": str(self.out),
            "hessian": str(self.hessian) if self.hessian else None,
            "seed": self.seed,
            "rays_per_camera": self.rays_per_camera,
            "threads": self.threads,
            "bit_exact": self.bit_exact,
            "field": self.field.to_dict(),
            "eval": self.eval.to_dict(),
            "colormap": self.colormap,
            "depth_colormap": self.depth_colormap,
            "scenes": [{"name": s.name, "scene": str(s.scene), "field": s.field.to_dict(),
                        "hessian": str(s.hessian) if s.hessian else None} for s in self.scenes],
        }

    def build_cameras(self) -> list[Camera]:
        return build_cameras(self.cameras, self.base_dir)


def _parse_corruption(d: dict | None, where: str) -> CorruptionSpec | None:
    if d is None:
        return None
    regions = []
    for n, reg in enumerate(_get(d, "regions", list, where)):
        w = f"{where}regions[{n}]."
        if not isinstance(reg, dict):
            raise ConfigurationError(f"{w[:-1]}: expected object")
        center = _get(reg, "center", list, w)
        if len(center) != 3 or not all(isinstance(c, (int, float)) for c in center):
            raise ConfigurationError(f"{w}center: expected three numbers")
        radius = _get(reg, "radius", float, w)
        if radius <= 0:
            raise ConfigurationError(f"{w}radius: must be positive")
        regions.append(([float(c) for c in center], radius))
    magnitude = _get(d, "magnitude", float, where)
    if magnitude < 0:
        raise ConfigurationError(f"{where}magnitude: must be nonnegative")
    return CorruptionSpec(regions, magnitude, _get(d, "seed", int, where, 0))


def _parse_field(d: dict, where: str) -> FieldSpec:
    res = _get(d, "voxel_resolution", (int, type(None)), where, None)
    if res is not None and res < 2:
        raise ConfigurationError(f"{where}voxel_resolution: must be >= 2")
    corr = _parse_corruption(_get(d, "corruption", (dict, type(None)), where, None), where + "corruption.")
    if corr is not None and res is None:
        raise ConfigurationError(f"{where}corruption: requires voxel_resolution")
    return FieldSpec(res, corr)


def _parse_eval(d: dict) -> EvalSpec:
    w = "eval."
    fr = _get(d, "fractions", list, w, list(DEFAULT_FRACTIONS))
    if not fr or not all(isinstance(f, (int, float)) and 0 <= f < 1 for f in fr):
        raise ConfigurationError("eval.fractions: expected a nonempty list of numbers in [0, 1)")
    if any(b <= a for a, b in zip(fr[:-1], fr[1:])):
        raise ConfigurationError("eval.fractions: must be strictly increasing")
    mode = _get(d, "ause_mode", str, w, "oracle")
    if mode not in ("oracle", "raw"):
        raise ConfigurationError("eval.ause_mode: expected 'oracle' or 'raw'")
    size = _get(d, "ensemble_size", int, w, 5)
    if size < 2:
        raise ConfigurationError("eval.ensemble_size: must be >= 2")
    noise = _get(d, "ensemble_noise", float, w, 0.02)
    if noise < 0:
        raise ConfigurationError("eval.ensemble_noise: must be nonnegative")
    return EvalSpec(tuple(float(f) for f in fr), size, noise,
                    _get(d, "ensemble_resolution", (int, type(None)), w, None), mode,
                    _get(d, "inject_oracle", bool, w, False), _get(d, "plot", bool, w, False))


def _check_camera_source(cams: dict) -> None:
    src = _get(cams, "source", str, "cameras.")
    if src not in CAMERA_SOURCES:
        raise ConfigurationError(f"cameras.source: expected one of {CAMERA_SOURCES}, got {src!r}")
    need = {"orbit": ("n", "radius", "width", "height"), "path": ("file",),
            "interpolate": ("start", "end", "n_frames"), "spiral": ("reference", "n_frames", "radius")}[src]
    for key in need:
        if key not in cams:
            raise ConfigurationError(f"cameras.{key}: required for source {src!r}")


def build_cameras(cams: dict, base: Path) -> list[Camera]:
    """Expand a ``cameras`` config block into concrete cameras."""
    src = cams["source"]
    try:
        if src == "orbit":
            return orbit_cameras(int(cams["n"]), float(cams["radius"]), int(cams["width"]), int(cams["height"]),
                                 float(cams.get("elevation_deg", 20.0)), cams.get("target", (0.0, 0.0, 0.0)),
                                 float(cams.get("fov_deg", 40.0)), float(cams.get("near", 0.1)),
                                 float(cams.get("far", 20.0)))
        if src == "path":
            return load_camera_path(_resolve(base, cams["file"]))
        defaults = cams.get("defaults", {})
        if src == "interpolate":
            a = keyframe_camera(cams["start"], defaults)
            b = keyframe_camera(cams["end"], defaults)
            return interpolate_path(a, b, int(cams["n_frames"]))
        ref = keyframe_camera(cams["reference"], defaults)
        return spiral_path(ref, int(cams["n_frames"]), float(cams["radius"]), float(cams.get("rotations", 1.0)),
                           cams.get("focus_distance"), cams.get("depth_amplitude"))
    except KeyError as exc:
        raise ConfigurationError(f"cameras: keyframe is missing field {exc.args[0]!r}") from None
    except (InvalidInputError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"cameras: {exc}") from None


def _input_path(base: Path, value: str, name: str) -> Path:
    p = _resolve(base, value)
    if not p.exists():
        raise InputFileError(f"{name}: input file not found: {p}", str(p))
    return p


def parse_config(data: dict, base_dir: Path, overrides: dict | None = None,
                 require_hessian: bool = False) -> RunConfig:
    """Validate a config dict.  ``overrides`` holds flag values (``None`` means not given)."""
    if not isinstance(data, dict):
        raise ConfigurationError("config: top level must be a JSON object")
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]  # a run manifest wraps the resolved config
    ov = {k: v for k, v in (overrides or {}).items() if v is not None}

    seed = ov.get("seed", _get(data, "seed", int, "", 0))
    level = _get(data, "level", int, "", 5)
    if not MIN_LEVEL <= level <= MAX_LEVEL:
        raise ConfigurationError(f"level: must be in [{MIN_LEVEL}, {MAX_LEVEL}], got {level}")

    rd = _section(data, "render")
    try:
        render = RenderOptions(
            s=_get(rd, "s", float, "render.", 64.0),
            n_coarse=_get(rd, "n_coarse", int, "render.", 48),
            n_fine=_get(rd, "n_fine", int, "render.", 32),
            seed=ov.get("seed", _get(rd, "seed", int, "render.", seed)),
            literal_sigmoid=ov.get("literal_sigmoid", _get(rd, "literal_sigmoid", bool, "render.", False)),
            sigma_mode=_get(rd, "sigma_mode", str, "render.", "nearest"),
        )
    except InvalidInputError as exc:
        raise ConfigurationError(f"render: {exc}") from None

    cams = _get(data, "cameras", dict, "")
    _check_camera_source(cams)
    if cams["source"] == "path":
        _input_path(base_dir, cams["file"], "cameras.file")

    rays = _get(data, "rays_per_camera", int, "", 1024)
    if rays < 1:
        raise ConfigurationError("rays_per_camera: must be >= 1")
    threads = ov.get("threads", _get(data, "threads", int, "", 1))
    if threads < 1:
        raise ConfigurationError("threads: must be >= 1")

    hessian = _get(data, "hessian", (str, type(None)), "", None)
    hessian_path = _resolve(base_dir, hessian) if hessian else None
    if require_hessian:
        if hessian_path is None:
            raise ConfigurationError("hessian: required for this command")
        _input_path(base_dir, hessian, "hessian")

    scenes = []
    for n, entry in enumerate(_get(data, "scenes", list, "", [])):
        w = f"scenes[{n}]."
        if not isinstance(entry, dict):
            raise ConfigurationError(f"scenes[{n}]: expected object")
        name = _get(entry, "name", str, w)
        sp = _input_path(base_dir, _get(entry, "scene", str, w), w + "scene")
        h = _get(entry, "hessian", (str, type(None)), w, None)
        scenes.append(SceneEntry(name, sp, _parse_field(_section(entry, "field", w), w + "field."),
                                 _resolve(base_dir, h) if h else None))

    scene_value = _get(data, "scene", str, "", None) if scenes else _get(data, "scene", str, "")
    scene_path = _input_path(base_dir, scene_value, "scene") if scene_value else scenes[0].scene

    cmap = _get(data, "colormap", str, "", "inferno")
    dcmap = _get(data, "depth_colormap", str, "", "viridis")
    for key, val in (("colormap", cmap), ("depth_colormap", dcmap)):
        if val not in COLORMAPS:
            raise ConfigurationError(f"{key}: expected one of {COLORMAPS}, got {val!r}")

    out = ov.get("out")
    out_path = Path(out) if out else _resolve(base_dir, _get(data, "out", str, "", "out"))
    bit_exact = True if ov.get("bit_exact") else _get(data, "bit_exact", bool, "", True)

    return RunConfig(
        scene=scene_path.resolve(), level=level, render=render, cameras=cams, out=out_path.resolve(),
        hessian=hessian_path.resolve() if hessian_path else None, seed=seed, rays_per_camera=rays,
        threads=threads, bit_exact=bit_exact, field=_parse_field(_section(data, "field"), "field."),
        eval=_parse_eval(_section(data, "eval")), colormap=cmap, depth_colormap=dcmap, scenes=scenes,
        base_dir=base_dir.resolve(),
    )


def load_config(path: str | Path, overrides: dict | None = None, require_hessian: bool = False) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise InputFileError(f"config: file not found: {p}", str(p))
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(data, p.parent, overrides, require_hessian)
