import contextlib
from pathlib import Path

import numpy as np
import pytest

from sdf_uncertainty.geometry import Aabb, Primitive, SdfScene, Texture

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

RED = (1.0, 0.0, 0.0)
BLUE = (0.0, 0.0, 1.0)
GRAY = (0.5, 0.5, 0.5)


def sphere(center=(0.0, 0.0, 0.0), radius=1.0, albedo=GRAY, texture=None):
    return Primitive("sphere", {"center": list(center), "radius": radius}, albedo, texture)


def unit_sphere_scene(half=2.0, texture=None):
    return SdfScene([sphere(texture=texture)], Aabb([-half] * 3, [half] * 3))


def textured_scene():
    """Sphere plus box with procedural albedo; used where colour must depend on position."""
    tex = Texture(0.25, 4.0, (0.0, 2.1, 4.2))
    prims = [
        sphere((0.0, 0.0, 0.0), 0.8, (0.6, 0.4, 0.3), tex),
        Primitive("box", {"center": [0.6, -0.3, 0.2], "half_extents": [0.35, 0.3, 0.4]}, (0.3, 0.5, 0.7),
                  Texture(0.2, 5.0, (1.0, 3.0, 5.0))),
    ]
    return SdfScene(prims, Aabb([-1.5] * 3, [1.5] * 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def scene_zoo():
    """Analytic scenes for gradient checks: textured, CSG, and flat-coloured variants."""
    box = Aabb([-1.5] * 3, [1.5] * 3)
    tex_a = Texture(0.25, 4.0, (0.0, 2.1, 4.2))
    tex_b = Texture(0.2, 5.0, (1.0, 3.0, 5.0))
    return [
        textured_scene(),
        SdfScene([Primitive("torus", {"center": [0, 0, 0], "major_radius": 0.8, "minor_radius": 0.3},
                            (0.7, 0.4, 0.3), tex_a)], box),
        SdfScene([sphere((0, 0, 0), 0.9, (0.6, 0.6, 0.2), tex_a), sphere((0.5, 0.3, 0.4), 0.6, (0.2, 0.3, 0.8), tex_b)],
                 box, {"op": "subtraction", "children": [0, 1]}),
        SdfScene([sphere((-0.4, 0, 0), 0.6, (0.9, 0.1, 0.1)), sphere((0.5, 0.1, 0), 0.5, (0.1, 0.2, 0.9))], box),
    ]


def random_ray(rng, radius=3.0, spread=0.6):
    """A ray from a random point on a sphere aimed near the origin."""
    o = rng.normal(size=3)
    o = radius * o / np.linalg.norm(o)
    target = rng.uniform(-spread, spread, size=3)
    d = target - o
    return o, d / np.linalg.norm(d), 0.1, 6.0


_CRITERIA: dict[int, tuple[str, bool, str]] = {}


class CriterionResult:
    def __init__(self):
        self.detail = ""


@pytest.fixture
def criterion():
    """``with criterion(n, title) as c:`` records PASS, or FAIL if the block raises."""

    @contextlib.contextmanager
    def block(number: int, title: str):
        result = CriterionResult()
        try:
            yield result
        except BaseException:
            _CRITERIA[number] = (title, False, result.detail)
            raise
        _CRITERIA[number] = (title, True, result.detail)

    return block


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}{suffix}")
