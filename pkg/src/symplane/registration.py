"""Intensity-based 2D/3D registration of a volume to an X-ray image.

The camera pose is refined so the rendered DRR best matches the target
image under normalized cross-correlation.  Six parameters are searched:
an axis-angle rotation increment and a translation, both expressed in the
initial camera's frame and composed onto its extrinsic, which keeps the
parametrization well conditioned near the start pose (no Euler gimbal
issues, translations act directly in detector/depth directions).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraPose, RigidTransform
from .metrics import ConstantInputError, ncc
from .optimizer import Bounds, OptimizerConfig, OptimizerTrace, minimize
from .projector import Image2D, downsample2_image, render_drr
from .volume import Volume, downsample2

__all__ = ["RegistrationConfig", "PoseEstimate", "register_2d3d"]


@dataclass(frozen=True)
class RegistrationConfig:
    """Search settings for :func:`register_2d3d`.

    Bounds are half-widths around the initial pose.  ``min_intensity`` is
    the DRR bone-emphasis floor; ``step_mm=None`` uses half the smallest
    voxel spacing at each pyramid level.
    """

    pyramid_levels: int = 3
    rot_half_width_deg: float = 15.0
    trans_half_width_mm: float = 30.0
    max_iterations: int = 100
    step_tol: float = 1e-4
    value_tol: float = 1e-10
    initial_radius: float = 0.1
    min_intensity: float | None = 0.0
    step_mm: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be at least 1")
        if self.rot_half_width_deg <= 0.0 or self.trans_half_width_mm <= 0.0:
            raise ValueError("search half-widths must be positive")


@dataclass(frozen=True)
class PoseEstimate:
    """Result of a registration: refined extrinsic and its similarity."""

    extrinsic: RigidTransform
    ncc_value: float
    trace: OptimizerTrace

    @property
    def low_confidence(self) -> bool:
        """True when the match is too weak to trust (NCC below 0.3)."""
        return self.ncc_value < 0.3

    def to_json(self) -> dict:
        return {
            "extrinsic": self.extrinsic.to_json(),
            "ncc": self.ncc_value,
            "termination": self.trace.termination,
            "low_confidence": self.low_confidence,
        }


def _delta_pose(x: np.ndarray, sid: float) -> RigidTransform:
    """Camera-frame pose increment: rotation about the isocenter plus shift.

    Pivoting the rotation at the isocenter (depth ``sid`` on the principal
    axis) rather than the source keeps rotations from sweeping the anatomy
    sideways out of the field of view, so the six parameters stay close to
    orthogonal image motions.
    """
    w = x[:3]
    angle = float(np.linalg.norm(w))
    axis = w / angle if angle > 0.0 else np.array([1.0, 0.0, 0.0])
    rot = RigidTransform.from_axis_angle(axis, angle).rotation
    pivot = np.array([0.0, 0.0, sid])
    return RigidTransform(rot, pivot - rot @ pivot + x[3:])


def _apply_dof(cam0: CameraPose, x: np.ndarray, det_dims, pixel_spacing) -> CameraPose:
    return CameraPose(
        cam0.sdd,
        cam0.sid,
        det_dims,
        pixel_spacing,
        _delta_pose(x, cam0.sid).compose(cam0.extrinsic),
    )


def register_2d3d(
    vol: Volume,
    target: Image2D,
    cam0: CameraPose,
    cfg: RegistrationConfig = RegistrationConfig(),
) -> PoseEstimate:
    """Maximize ncc(DRR(vol, pose), target) over poses near ``cam0``.

    Runs coarse-to-fine: at each pyramid level both the target image and
    the volume are box-downsampled and the detector follows the image
    resolution, so every level shares the same world-space parametrization.
    The returned pose never scores below ``cam0``: if refinement ends worse
    at full resolution, the initial pose is returned.  ``ncc_value`` is
    recomputed from a full-resolution render at the returned pose.
    """
    if cam0.det_dims != target.dims:
        raise ValueError(
            f"camera detector {cam0.det_dims} does not match target {target.dims}"
        )
    if not np.allclose(cam0.pixel_spacing, target.pixel_spacing):
        raise ValueError("camera and target disagree on pixel spacing")
    if np.ptp(target.data) == 0.0:
        raise ConstantInputError("target image is constant")

    images = [target]
    volumes = [vol]
    for _ in range(cfg.pyramid_levels - 1):
        images.append(downsample2_image(images[-1]))
        volumes.append(downsample2(volumes[-1]))
    images.reverse()
    volumes.reverse()

    rot_hw = np.deg2rad(cfg.rot_half_width_deg)
    half = np.array([rot_hw] * 3 + [cfg.trans_half_width_mm] * 3)
    bounds = Bounds(-half, half)

    x = np.zeros(6)
    trace = None
    for li, (img_l, vol_l) in enumerate(zip(images, volumes)):
        def f(params, _img=img_l, _vol=vol_l):
            cam = _apply_dof(cam0, params, _img.dims, _img.pixel_spacing)
            try:
                drr = render_drr(_vol, cam, cfg.step_mm, cfg.min_intensity)
                return -ncc(drr.data, _img.data)
            except (ConstantInputError, ValueError):
                return np.inf

        ocfg = OptimizerConfig(
            max_iterations=cfg.max_iterations,
            step_tol=cfg.step_tol,
            value_tol=cfg.value_tol,
            # Coarse levels search wide; finer levels refine locally.
            initial_radius=cfg.initial_radius / (2 ** li),
            seed=cfg.seed,
        )
        trace = minimize(f, x, bounds, ocfg)
        x = np.asarray(trace.best_x, dtype=np.float64)

    def full_ncc(params) -> float:
        cam = _apply_dof(cam0, params, cam0.det_dims, cam0.pixel_spacing)
        drr = render_drr(vol, cam, cfg.step_mm, cfg.min_intensity)
        return ncc(drr.data, target.data)

    ncc_final = full_ncc(x)
    ncc_init = full_ncc(np.zeros(6))
    if ncc_final < ncc_init:
        x, ncc_final = np.zeros(6), ncc_init

    return PoseEstimate(
        extrinsic=_delta_pose(x, cam0.sid).compose(cam0.extrinsic),
        ncc_value=float(ncc_final),
        trace=trace,
    )
