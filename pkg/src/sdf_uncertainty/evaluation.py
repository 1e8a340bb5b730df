"""Depth-error sparsification, AUSE, and the ensemble-variance baseline."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import numpy.typing as npt

from .camera import Camera, generate_rays
from .deformation import DeformationGrid
from .errors import ConfigurationError, InvalidInputError
from .geometry import Field, SdfScene, VoxelSdf, bake_voxel_sdf, sphere_trace_batch
from .renderer import RenderOptions, composite_per_sample, render_view

_F = npt.NDArray[np.float64]

DEFAULT_FRACTIONS = tuple(np.round(np.arange(20) * 0.05, 10))
BACKGROUND_WEIGHT = 1e-3
CURVE_HEADER = ("fraction", "dmae_uncertainty", "dmae_baseline", "dmae_oracle", "diff")


@dataclass
class SparsificationCurve:
    fractions: _F
    dmae_uncertainty: _F
    dmae_baseline: _F  # nan-filled when no baseline was given
    dmae_oracle: _F

    def __post_init__(self):
        n = len(self.fractions)
        if not (len(self.dmae_uncertainty) == len(self.dmae_baseline) == len(self.dmae_oracle) == n):
            raise InvalidInputError("sparsification curve columns differ in length")
        if n > 1 and np.any(np.diff(self.fractions) <= 0):
            raise InvalidInputError("fractions must be strictly increasing")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for row in zip(self.fractions, self.dmae_uncertainty, self.dmae_baseline, self.dmae_oracle,
                       self.dmae_uncertainty - self.dmae_baseline):
            writer.writerow([f"{v:.10g}" for v in row])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def delta_mae(pred_depth, gt_depth, keep_mask) -> float:
    """Mean absolute depth error over the kept pixels."""
    pred = np.asarray(pred_depth, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    keep = np.asarray(keep_mask, dtype=bool)
    if pred.shape != gt.shape or keep.shape != pred.shape:
        raise InvalidInputError("delta_mae inputs must share dimensions")
    if not keep.any():
        raise InvalidInputError("delta_mae needs at least one kept pixel")
    return float(np.mean(np.abs(pred[keep] - gt[keep])))


def ranking(scores) -> npt.NDArray[np.int64]:
    """Pixel order, most uncertain first; ties go to the lower row-major index."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    return np.lexsort((np.arange(s.size), -s))


def removal_counts(fractions, n: int) -> npt.NDArray[np.int64]:
    k = np.floor(np.asarray(fractions, dtype=np.float64) * n + 1e-9).astype(np.int64)
    return np.clip(k, 0, n - 1)


def _curve_for_order(err: _F, order: npt.NDArray[np.int64], counts: npt.NDArray[np.int64]) -> _F:
    # exactly rounded sums keep the oracle curve pointwise minimal in floating point too
    ordered = err[order]
    n = err.size
    return np.array([math.fsum(ordered[k:]) / (n - k) for k in counts], dtype=np.float64)


def sparsification_curve(abs_error, uncertainty, baseline_uncertainty=None,
                         fractions: Sequence[float] = DEFAULT_FRACTIONS, mask=None) -> SparsificationCurve:
    """Remainder MAE after removing the top fraction of pixels under three rankings.

    ``mask`` optionally restricts evaluation to a subset of pixels (e.g.
    foreground); ranking ties break by row-major pixel index.
    """
    err = np.asarray(abs_error, dtype=np.float64)
    unc = np.asarray(uncertainty, dtype=np.float64)
    if unc.shape != err.shape:
        raise InvalidInputError("error and uncertainty images must share dimensions")
    base = None if baseline_uncertainty is None else np.asarray(baseline_uncertainty, dtype=np.float64)
    if base is not None and base.shape != err.shape:
        raise InvalidInputError("baseline image must share dimensions with the error image")
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.size == 0 or fr.min() < 0 or fr.max() >= 1:
        raise InvalidInputError("fractions must lie in [0, 1)")
    keep = np.ones(err.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    e = err[keep].ravel()
    if e.size == 0:
        raise InvalidInputError("no pixels left to evaluate")
    counts = removal_counts(fr, e.size)
    dmae_u = _curve_for_order(e, ranking(unc[keep]), counts)
    dmae_b = (np.full(fr.size, np.nan) if base is None
              else _curve_for_order(e, ranking(base[keep]), counts))
    dmae_o = _curve_for_order(e, ranking(e), counts)
    return SparsificationCurve(fr, dmae_u, dmae_b, dmae_o)


def ause(curve: SparsificationCurve, which: str = "uncertainty", mode: str = "oracle") -> float:
    """Area under the sparsification error.

    ``mode="oracle"`` (default): trapezoidal area between the chosen curve and
    the oracle curve, divided by the full-image MAE.  ``mode="raw"``: plain
    trapezoidal area under the chosen curve.
    """
    if which == "uncertainty":
        y = curve.dmae_uncertainty
    elif which == "baseline":
        y = curve.dmae_baseline
    elif which == "oracle":
        y = curve.dmae_oracle
    else:
        raise InvalidInputError(f"unknown curve {which!r}")
    x = curve.fractions
    if mode == "raw":
        return float(np.trapezoid(y, x))
    if mode != "oracle":
        raise InvalidInputError(f"unknown AUSE mode {mode!r}")
    scale = curve.dmae_oracle[0]
    if not scale > 0:
        return 0.0
    return float(np.trapezoid(y - curve.dmae_oracle, x) / scale)


# ---------------------------------------------------------------------------
# Ensemble baseline
# ---------------------------------------------------------------------------


def ensemble_fit(scene: SdfScene, n_members: int, noise: float, resolution: int,
                 seeds: Sequence[int]) -> list[VoxelSdf]:
    """Independent noisy bakes of ``scene`` standing in for separately trained models."""
    if n_members < 2:
        raise InvalidInputError("an ensemble needs at least two members")
    if len(seeds) != n_members:
        raise InvalidInputError("need one seed per ensemble member")
    if noise < 0:
        raise InvalidInputError("ensemble noise must be nonnegative")
    clean = bake_voxel_sdf(scene, resolution)
    members = []
    for s in seeds:
        jitter = np.random.default_rng(s).uniform(-noise, noise, size=clean.values.shape)
        members.append(VoxelSdf(resolution, clean.values + jitter, clean.albedo_values.copy(), clean.aabb))
    return members


def ensemble_variance(members: Sequence[VoxelSdf], x) -> float | _F:
    """Population variance (divide by N) of the members' signed distances at ``x``."""
    if len(members) < 2:
        raise InvalidInputError("ensemble variance needs at least two members")
    for m in members[1:]:
        if m.aabb != members[0].aabb:
            raise ConfigurationError("ensemble members have different aabbs")
    arr = np.asarray(x, dtype=np.float64)
    pts = np.atleast_2d(arr).reshape(-1, 3)
    vals = np.stack([m.evaluate(pts).sdf for m in members])
    var = np.mean((vals - vals.mean(axis=0)) ** 2, axis=0)
    return float(var[0]) if arr.ndim == 1 else var


# ---------------------------------------------------------------------------
# Method comparison
# ---------------------------------------------------------------------------


@dataclass
class ViewResult:
    camera_index: int
    curve: SparsificationCurve
    ause_hessian: float
    ause_ensemble: float
    n_pixels: int
    informative: bool
    mae: float


@dataclass
class ComparisonReport:
    scene: str
    views: list[ViewResult] = field(default_factory=list)

    def _mean(self, attr: str) -> float:
        vals = [getattr(v, attr) for v in self.views if v.informative]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def mean_ause_hessian(self) -> float:
        return self._mean("ause_hessian")

    @property
    def mean_ause_ensemble(self) -> float:
        return self._mean("ause_ensemble")

    def rows(self) -> list[tuple[str, str, float]]:
        return [("Ensemble", self.scene, self.mean_ause_ensemble),
                ("Hessian", self.scene, self.mean_ause_hessian),
                ("Oracle", self.scene, 0.0)]


METHODS = ("Ensemble", "Hessian", "Oracle")


def report_csv(reports: Sequence[ComparisonReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("method", "scene", "ause"))
    for rep in reports:
        for method, scene, value in rep.rows():
            writer.writerow((method, scene, f"{value:.6f}"))
    return buf.getvalue()


def report_table(reports: Sequence[ComparisonReport]) -> str:
    """Method x scene table, one row per method."""
    scenes = [r.scene for r in reports]
    width = max([10] + [len(s) for s in scenes])
    lines = ["Method".ljust(10) + "".join(s.rjust(width + 2) for s in scenes)]
    for m_idx, method in enumerate(METHODS):
        cells = "".join(f"{r.rows()[m_idx][2]:.3f}".rjust(width + 2) for r in reports)
        lines.append(method.ljust(10) + cells)
    flagged = [(r.scene, v.camera_index) for r in reports for v in r.views if not v.informative]
    if flagged:
        lines.append("uninformative views (excluded from means): "
                     + ", ".join(f"{s}#{i}" for s, i in flagged))
    return "\n".join(lines) + "\n"


def ground_truth_depth(scene: SdfScene, camera: Camera) -> _F:
    """Sphere-traced depth of the clean analytic scene (``nan`` where rays miss)."""
    origins, dirs, near, far = generate_rays(camera)
    t0, t1 = scene.aabb.clip_rays(origins, dirs, near, far)
    hit_box = t1 > t0
    depth = np.full(len(origins), np.nan)
    if hit_box.any():
        depth[hit_box] = sphere_trace_batch(scene, origins[hit_box], dirs[hit_box], t0[hit_box], t1[hit_box])
    return depth.reshape(camera.height, camera.width)


def evaluate_view(pred_depth: _F, weight_sum: _F, gt_depth: _F, uncertainty: _F,
                  baseline: _F | None, fractions, camera_index: int = 0,
                  ause_mode: str = "oracle") -> ViewResult:
    """Sparsify one view over foreground pixels (rendered weight and ground-truth hit)."""
    mask = (weight_sum >= BACKGROUND_WEIGHT) & np.isfinite(gt_depth)
    err = np.abs(pred_depth - np.nan_to_num(gt_depth))
    if not mask.any():
        empty = np.asarray(fractions, dtype=np.float64)
        z = np.zeros(empty.size)
        return ViewResult(camera_index, SparsificationCurve(empty, z, z, z), 0.0, 0.0, 0, False, 0.0)
    curve = sparsification_curve(err, uncertainty, baseline, fractions, mask=mask)
    unc_vals = uncertainty[mask]
    informative = bool(curve.dmae_oracle[0] > 1e-9 and np.ptp(unc_vals) > 0)
    a_h = ause(curve, "uncertainty", ause_mode)
    a_e = ause(curve, "baseline", ause_mode) if baseline is not None else float("nan")
    return ViewResult(camera_index, curve, a_h, a_e, int(mask.sum()), informative, float(curve.dmae_oracle[0]))


def compare_methods(scene: SdfScene, corrupted_field: Field, grid: DeformationGrid, hessian,
                    ensemble_members: Sequence[VoxelSdf], cameras: Sequence[Camera],
                    fractions=DEFAULT_FRACTIONS, opts: RenderOptions | None = None,
                    scene_name: str = "scene", ause_mode: str = "oracle",
                    uncertainty_override=None) -> ComparisonReport:
    """Per-view sparsification of Hessian uncertainty versus ensemble variance.

    Depth and the Hessian uncertainty come from rendering ``corrupted_field``;
    the ensemble variance is composited with the clean ``scene``'s weights;
    ground truth is sphere-traced on ``scene``.  ``uncertainty_override``
    (a callable ``(camera_index, abs_error) -> image``) replaces the Hessian
    uncertainty, which is how oracle injection is tested.
    """
    opts = opts or RenderOptions()
    report = ComparisonReport(scene_name)
    if scene.aabb != corrupted_field.aabb:
        raise ConfigurationError("clean scene aabb does not match the evaluated field")
    if ensemble_members:
        for m in ensemble_members:
            if m.aabb != corrupted_field.aabb:
                raise ConfigurationError("ensemble member aabb does not match the evaluated field")
    for i, cam in enumerate(cameras):
        out = render_view(corrupted_field, grid, hessian, cam, opts)
        if ensemble_members:
            # members are perturbations of the clean scene, so their variance is weighted by its render
            base, _ = composite_per_sample(scene, grid, cam, opts,
                                           lambda pts: ensemble_variance(ensemble_members, pts))
        else:
            base = None
        gt = ground_truth_depth(scene, cam)
        unc = out.uncertainty
        if uncertainty_override is not None:
            unc = uncertainty_override(i, np.abs(out.depth - np.nan_to_num(gt)))
        report.views.append(evaluate_view(out.depth, out.weight_sum, gt, unc, base, fractions, i, ause_mode))
    return report
