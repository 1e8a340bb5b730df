"""Surface-aware uncertainty for signed-distance-field rendering.

Colour Jacobians with respect to a deformation lattice are accumulated into
a per-vertex diagonal Hessian; its square root is a spatial uncertainty that
is composited into images and scored with depth-error sparsification.
"""

from .camera import (Camera, generate_rays, interpolate_path, load_camera_path, look_at_camera, orbit_cameras,
                     spiral_path)
from .colormaps import apply_colormap
from .deformation import DeformationGrid, footprint, query_deformation
from .errors import ConfigurationError, FormatError, InvalidInputError, SdfUncertaintyError
from .evaluation import ause, compare_methods, ensemble_fit, ensemble_variance, sparsification_curve
from .geometry import (Aabb, Primitive, SdfScene, Texture, VoxelSdf, bake_voxel_sdf, corrupt_voxel_sdf, eval_color,
                       eval_sdf, sphere_trace)
from .gradients import color_jacobian, fd_jacobian
from .hessian import HessianGrid, accumulate, load_hessian, run_accumulation, save_hessian, sigma
from .renderer import RenderOptions, composite, opacity, render_view, sample_ray
from .scenefile import load_scene, save_scene

__version__ = "0.1.0"

__all__ = [
    "Aabb", "Camera", "ConfigurationError", "DeformationGrid", "FormatError", "HessianGrid",
    "InvalidInputError", "Primitive", "RenderOptions", "SdfScene", "SdfUncertaintyError", "Texture",
    "VoxelSdf", "accumulate", "apply_colormap", "ause", "bake_voxel_sdf", "color_jacobian", "compare_methods",
    "composite", "corrupt_voxel_sdf", "ensemble_fit", "ensemble_variance", "eval_color", "eval_sdf",
    "fd_jacobian", "footprint", "generate_rays", "interpolate_path", "load_camera_path", "load_hessian",
    "load_scene", "look_at_camera", "opacity", "orbit_cameras", "query_deformation", "render_view",
    "run_accumulation", "sample_ray", "save_hessian", "save_scene", "sigma", "sparsification_curve",
    "sphere_trace", "spiral_path",
]
