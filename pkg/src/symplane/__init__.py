"""Estimation of partial bilateral symmetry planes in 3D intensity volumes,
with the downstream pipeline that makes the estimate useful: mirroring the
volume across the plane, rendering DRRs, registering them to 2D X-ray
images, and composing edge overlays.

The robust objective tolerates one-sided defects (fractures, implants,
noise) by combining a Tukey-biweight intensity mismatch with a mutual-
information bone-density regularizer, so the intact side anchors the plane
even when the other side disagrees.
"""

from .geometry import (
    CameraPose,
    Reflection,
    RigidTransform,
    SymPlane,
    plane_from_g,
    project_point,
    reflection_from_plane,
)
from .metrics import (
    HistogramConfig,
    HistogramPair,
    ObjectiveConfig,
    ObjectiveReport,
    ResidualField,
    TukeyParams,
    TukeyVariant,
    combined_objective,
    d_density,
    d_intensity,
    ncc,
    residual_field,
    residual_scale,
    tukey_rho,
)
from .optimizer import Bounds, OptimizerConfig, OptimizerTrace, minimize
from .phantom import (
    FractureSpec,
    PhantomSpec,
    Shape,
    apply_fracture,
    corrupt,
    default_pelvis,
    fracture_preset,
    generate_phantom,
    landmark_pairs,
)
from .projector import (
    Image2D,
    OverlaySpec,
    compose_overlay,
    extract_edges,
    make_camera,
    read_png,
    render_drr,
    render_gradient_drr,
    write_png,
)
from .registration import PoseEstimate, RegistrationConfig, register_2d3d
from .symmetry import (
    SymmetryConfig,
    SymmetryResult,
    estimate_plane,
    initialize_plane,
    landmark_symmetry_error,
    mirror_volume,
)
from .volume import Volume, VoxelDomain, load_mhd, save_mhd

__version__ = "0.1.0"

__all__ = [
    "Bounds",
    "CameraPose",
    "FractureSpec",
    "HistogramConfig",
    "HistogramPair",
    "Image2D",
    "ObjectiveConfig",
    "ObjectiveReport",
    "OptimizerConfig",
    "OptimizerTrace",
    "OverlaySpec",
    "PhantomSpec",
    "PoseEstimate",
    "Reflection",
    "RegistrationConfig",
    "ResidualField",
    "RigidTransform",
    "Shape",
    "SymPlane",
    "SymmetryConfig",
    "SymmetryResult",
    "TukeyParams",
    "TukeyVariant",
    "Volume",
    "VoxelDomain",
    "apply_fracture",
    "combined_objective",
    "compose_overlay",
    "corrupt",
    "d_density",
    "d_intensity",
    "default_pelvis",
    "estimate_plane",
    "extract_edges",
    "fracture_preset",
    "generate_phantom",
    "initialize_plane",
    "landmark_pairs",
    "landmark_symmetry_error",
    "load_mhd",
    "make_camera",
    "minimize",
    "mirror_volume",
    "ncc",
    "plane_from_g",
    "project_point",
    "read_png",
    "reflection_from_plane",
    "register_2d3d",
    "render_drr",
    "render_gradient_drr",
    "residual_field",
    "residual_scale",
    "save_mhd",
    "tukey_rho",
    "write_png",
    "__version__",
]
