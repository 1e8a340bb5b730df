"""JSON scene descriptions.

Schema (see ``docs/scene_format.md``)::

    {
      "aabb": {"min": [x, y, z], "max": [x, y, z]},
      "primitives": [
        {"shape": "sphere", "center": [0, 0, 0], "radius": 1.0,
         "albedo": [0.8, 0.3, 0.2],
         "texture": {"amplitude": 0.2, "frequency": 6.0, "phase": [0, 1, 2]}},
        ...
      ],
      "csg": {"op": "union", "children": [0, {"op": "subtraction", "children": [1, 2]}]}
    }

``texture`` and ``csg`` are optional.  Without ``csg`` all primitives are
unioned.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .geometry import Aabb, Primitive, SdfScene, Texture

_RESERVED = {"shape", "albedo", "texture"}


def scene_from_dict(data: dict) -> SdfScene:
    try:
        aabb = Aabb(data["aabb"]["min"], data["aabb"]["max"])
        prims = []
        for i, entry in enumerate(data["primitives"]):
            tex = entry.get("texture")
            texture = None
            if tex is not None:
                texture = Texture(float(tex["amplitude"]), float(tex["frequency"]),
                                  tuple(float(p) for p in tex.get("phase", (0.0, 0.0, 0.0))))
            params = {k: v for k, v in entry.items() if k not in _RESERVED}
            prims.append(Primitive(entry["shape"], params, tuple(entry["albedo"]), texture))
    except KeyError as exc:
        raise InvalidInputError(f"scene description is missing field {exc.args[0]!r}") from None
    except TypeError as exc:
        raise InvalidInputError(f"malformed scene description: {exc}") from None
    return SdfScene(prims, aabb, data.get("csg"))


def _jsonable(v):
    return v.tolist() if isinstance(v, np.ndarray) else v


def scene_to_dict(scene: SdfScene) -> dict:
    prims = []
    for p in scene.primitives:
        entry = {"shape": p.shape, **{k: _jsonable(v) for k, v in p.params.items()},
                 "albedo": list(p.albedo)}
        if p.texture is not None:
            entry["texture"] = {"amplitude": p.texture.amplitude, "frequency": p.texture.frequency,
                                "phase": list(p.texture.phase)}
        prims.append(entry)
    return {"aabb": scene.aabb.to_dict(), "primitives": prims, "csg": scene.csg}


def load_scene(path: str | Path) -> SdfScene:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: not valid JSON ({exc})") from None
    return scene_from_dict(data)


def save_scene(scene: SdfScene, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)
