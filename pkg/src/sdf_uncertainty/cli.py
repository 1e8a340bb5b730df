"""Command-line entry point: ``render``, ``hessian``, ``eval`` and ``compare``.

Exit codes: 0 success, 2 configuration error, 3 input-file error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .colormaps import apply_colormap, to_uint8
from .config import FieldSpec, InputFileError, RunConfig, SceneEntry, load_config
from .deformation import DeformationGrid
from .errors import ConfigurationError, FormatError, InvalidInputError
from .evaluation import (BACKGROUND_WEIGHT, ComparisonReport, compare_methods, ensemble_fit, report_csv,
                         report_table)
from .geometry import Field, SdfScene, bake_voxel_sdf, corrupt_voxel_sdf
from .hessian import HessianGrid, load_hessian, run_accumulation, save_hessian
from .renderer import render_view
from .scenefile import load_scene

EXIT_OK, EXIT_CONFIG, EXIT_INPUT = 0, 2, 3


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def build_field(scene: SdfScene, spec: FieldSpec) -> Field:
    """The field that is rendered: the analytic scene, or a (possibly corrupted) voxel bake of it."""
    if spec.voxel_resolution is None:
        return scene
    vox = bake_voxel_sdf(scene, spec.voxel_resolution)
    if spec.corruption is not None:
        c = spec.corruption
        vox = corrupt_voxel_sdf(vox, c.regions, c.magnitude, c.seed)
    return vox


def _load_scene(path: Path) -> SdfScene:
    try:
        return load_scene(path)
    except FileNotFoundError:
        raise InputFileError(f"scene: input file not found: {path}", str(path)) from None
    except (InvalidInputError, KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"scene: {path}: {exc}") from None


def _load_hessian_for(path: Path, level: int, field: Field) -> HessianGrid:
    if not path.exists():
        raise InputFileError(f"hessian: input file not found: {path}", str(path))
    try:
        hessian = load_hessian(path, expected_level=level)
    except FormatError as exc:
        if exc.field == "level":
            raise ConfigurationError(f"level: {exc}") from None
        raise
    if hessian.aabb != field.aabb:
        raise ConfigurationError(f"hessian.aabb: {path} covers {hessian.aabb.to_dict()} but the scene covers "
                                 f"{field.aabb.to_dict()}")
    return hessian


def _ensemble_seeds(seed: int, n: int) -> list[int]:
    return [int(v) for v in np.random.SeedSequence([seed, 1]).generate_state(n)]


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def compose_frame(rgb: np.ndarray, uncertainty: np.ndarray, depth: np.ndarray, weight_sum: np.ndarray,
                  unc_scale: float, depth_range: tuple[float, float], colormap: str = "inferno",
                  depth_colormap: str = "viridis") -> np.ndarray:
    """Side-by-side ``rgb | uncertainty | depth`` panel as uint8 ``(H, 3W, 3)``.

    Uncertainty is divided by ``unc_scale`` (zero scale gives an all-zero
    panel).  Depth is rescaled to ``depth_range``; background is black.
    """
    unc = uncertainty / unc_scale if unc_scale > 0 else np.zeros_like(uncertainty)
    lo, hi = depth_range
    d = (depth - lo) / (hi - lo) if hi > lo else np.zeros_like(depth)
    depth_rgb = apply_colormap(d, depth_colormap)
    depth_rgb[weight_sum < BACKGROUND_WEIGHT] = 0.0
    return to_uint8(np.concatenate([rgb, apply_colormap(unc, colormap), depth_rgb], axis=1))


def _save_png(path: Path, img: np.ndarray) -> None:
    Image.fromarray(img, mode="RGB").save(path, format="PNG", optimize=False)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_render(cfg: RunConfig) -> int:
    scene = _load_scene(cfg.scene)
    field = build_field(scene, cfg.field)
    hessian = _load_hessian_for(cfg.hessian, cfg.level, field) if cfg.hessian else None
    grid = DeformationGrid(cfg.level, field.aabb)
    cameras = cfg.build_cameras()
    outs = [render_view(field, grid, hessian, cam, cfg.render) for cam in cameras]

    unc_scale = max(float(o.uncertainty.max()) for o in outs)
    fg = np.concatenate([o.depth[o.weight_sum >= BACKGROUND_WEIGHT] for o in outs])
    depth_range = (float(fg.min()), float(fg.max())) if fg.size else (0.0, 1.0)

    cfg.out.mkdir(parents=True, exist_ok=True)
    frames = []
    for i, o in enumerate(outs):
        name = f"frame_{i:04d}.png"
        _save_png(cfg.out / name, compose_frame(o.rgb, o.uncertainty, o.depth, o.weight_sum, unc_scale,
                                                depth_range, cfg.colormap, cfg.depth_colormap))
        frames.append({"file": name, "camera": cameras[i].to_dict()})
    _write_json(cfg.out / "manifest.json", {
        "command": "render", "config": cfg.to_dict(), "frames": frames,
        "panels": ["rgb", "uncertainty", "depth"], "uncertainty_scale": unc_scale,
        "depth_range": list(depth_range),
    })
    print(f"wrote {len(frames)} frames to {cfg.out}")
    return EXIT_OK


def hessian_summary(hessian: HessianGrid) -> dict:
    v = hessian.values
    return {"min": float(v.min()), "max": float(v.max()), "mean": float(v.mean()),
            "touched_corners": int(np.count_nonzero(v)), "vertices": hessian.n_vertices,
            "iterations": hessian.iterations}


def _accumulate(cfg: RunConfig, field: Field) -> HessianGrid:
    grid = DeformationGrid(cfg.level, field.aabb)
    return run_accumulation(field, grid, cfg.build_cameras(), cfg.rays_per_camera, cfg.render, cfg.seed,
                            threads=cfg.threads, bit_exact=cfg.bit_exact)


def cmd_hessian(cfg: RunConfig) -> int:
    field = build_field(_load_scene(cfg.scene), cfg.field)
    hessian = _accumulate(cfg, field)
    path = cfg.hessian or cfg.out / "hessian.bin"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_hessian(hessian, path)
    s = hessian_summary(hessian)
    cfg.out.mkdir(parents=True, exist_ok=True)
    _write_json(cfg.out / "manifest.json", {"command": "hessian", "config": cfg.to_dict(), "hessian": str(path),
                                            "summary": s})
    print(f"hessian: {path}")
    print(f"  min {s['min']:.6g}  max {s['max']:.6g}  mean {s['mean']:.6g}")
    print(f"  touched corners {s['touched_corners']} / {s['vertices']}  rays {s['iterations']}")
    return EXIT_OK


def _evaluate_scene(cfg: RunConfig, name: str, scene: SdfScene, spec: FieldSpec, hessian: HessianGrid,
                    out_dir: Path) -> ComparisonReport:
    field = build_field(scene, spec)
    ev = cfg.eval
    res = ev.ensemble_resolution or spec.voxel_resolution or 64
    members = ensemble_fit(scene, ev.ensemble_size, ev.ensemble_noise, res,
                           _ensemble_seeds(cfg.seed, ev.ensemble_size))
    if members[0].aabb != field.aabb:
        raise ConfigurationError("eval: ensemble aabb does not match the scene aabb")
    override = (lambda i, err: err) if ev.inject_oracle else None
    report = compare_methods(scene, field, DeformationGrid(cfg.level, field.aabb), hessian, members,
                             cfg.build_cameras(), ev.fractions, cfg.render, name, ev.ause_mode, override)
    curve_dir = out_dir / "curves"
    curve_dir.mkdir(parents=True, exist_ok=True)
    for v in report.views:
        v.curve.write_csv(curve_dir / f"{name}_view{v.camera_index:03d}.csv")
    return report


def _write_reports(cfg: RunConfig, reports: list[ComparisonReport], command: str) -> None:
    (cfg.out / "ause_report.csv").write_text(report_csv(reports), encoding="utf-8")
    table = report_table(reports)
    (cfg.out / "ause_report.txt").write_text(table, encoding="utf-8")
    per_view = {r.scene: [{"camera": v.camera_index, "ause_hessian": v.ause_hessian,
                           "ause_ensemble": v.ause_ensemble, "pixels": v.n_pixels,
                           "informative": v.informative, "mae": v.mae} for v in r.views] for r in reports}
    _write_json(cfg.out / "manifest.json", {"command": command, "config": cfg.to_dict(), "views": per_view})
    if cfg.eval.plot:
        _plot_curves(reports, cfg.out / "sparsification.png")
    print(table, end="")


def _plot_curves(reports: list[ComparisonReport], path: Path) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib not installed; skipping sparsification plot", file=sys.stderr)
        return
    fig, axes = plt.subplots(1, len(reports), figsize=(4 * len(reports), 3.2), squeeze=False)
    for ax, rep in zip(axes[0], reports):
        views = [v for v in rep.views if v.informative] or rep.views
        frac = views[0].curve.fractions
        for attr, label, color in (("dmae_oracle", "Oracle", "tab:red"),
                                   ("dmae_uncertainty", "Hessian", "tab:blue"),
                                   ("dmae_baseline", "Ensemble", "tab:purple")):
            ax.plot(frac, np.mean([getattr(v.curve, attr) for v in views], axis=0), label=label, color=color)
        ax.set_title(rep.scene)
        ax.set_xlabel("fraction removed")
        ax.set_ylabel("delta MAE")
    axes[0][0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def cmd_eval(cfg: RunConfig) -> int:
    scene = _load_scene(cfg.scene)
    hessian = _load_hessian_for(cfg.hessian, cfg.level, build_field(scene, cfg.field))
    cfg.out.mkdir(parents=True, exist_ok=True)
    report = _evaluate_scene(cfg, cfg.scene.stem, scene, cfg.field, hessian, cfg.out)
    _write_reports(cfg, [report], "eval")
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    entries = cfg.scenes or [SceneEntry(cfg.scene.stem, cfg.scene, cfg.field, cfg.hessian)]
    cfg.out.mkdir(parents=True, exist_ok=True)
    reports = []
    for entry in entries:
        scene = _load_scene(entry.scene)
        field = build_field(scene, entry.field)
        if entry.hessian is not None and entry.hessian.exists():
            hessian = _load_hessian_for(entry.hessian, cfg.level, field)
        else:
            hessian = _accumulate(cfg, field)
            if entry.hessian is not None:
                save_hessian(hessian, entry.hessian)
        reports.append(_evaluate_scene(cfg, entry.name, scene, entry.field, hessian, cfg.out))
    _write_reports(cfg, reports, "compare")
    return EXIT_OK


COMMANDS = {"render": cmd_render, "hessian": cmd_hessian, "eval": cmd_eval, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdf-uncertainty",
                                     description="Render, accumulate and evaluate surface uncertainty for SDF scenes.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("render", "render rgb | uncertainty | depth frames"),
                            ("hessian", "accumulate and save the per-vertex hessian"),
                            ("eval", "sparsification curves and AUSE for one scene"),
                            ("compare", "AUSE table of Hessian versus ensemble over several scenes")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON run configuration (or a run manifest)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=None, help="worker threads for accumulation")
        p.add_argument("--bit-exact", action="store_true", default=None,
                       help="merge partial results in a fixed order")
        p.add_argument("--literal-sigmoid", action="store_true", default=None,
                       help="use opacity(f) verbatim (high opacity outside the surface)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {"seed": args.seed, "out": args.out, "threads": args.threads, "bit_exact": args.bit_exact,
                 "literal_sigmoid": args.literal_sigmoid}
    try:
        cfg = load_config(args.config, overrides, require_hessian=args.command == "eval")
        return COMMANDS[args.command](cfg)
    except InputFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FormatError as exc:
        print(f"error: {exc.field}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigurationError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
