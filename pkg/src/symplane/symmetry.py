"""Symmetry plane estimation, volume mirroring and landmark evaluation.

The plane is found by minimizing a robust intensity mismatch (optionally
regularized by the histogram term) over (theta, phi, offset) with a
derivative-free trust-region search, coarse to fine over a box-filtered
pyramid.  A plain NCC objective is available for comparison; it is the
baseline the robust objective is meant to beat on corrupted inputs.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .geometry import SymPlane, reflection_from_plane
from .metrics import (
    HistogramConfig,
    ObjectiveConfig,
    ObjectiveReport,
    TukeyParams,
    TukeyVariant,
    combined_objective,
    residual_field,
)
from .optimizer import Bounds, OptimizerConfig, OptimizerTrace, minimize
from .volume import Volume, VoxelDomain, downsample2, sample_trilinear_many

OBJECTIVE_NCC = "ncc"
OBJECTIVE_TUKEY = "tukey"
OBJECTIVE_REGULARIZED = "regularized-tukey"
OBJECTIVES = (OBJECTIVE_NCC, OBJECTIVE_TUKEY, OBJECTIVE_REGULARIZED)

CAPTURE_SCALE_FRAC = 0.05  # fixed S for ranking candidate planes, as a
# fraction of the intensity range: small enough that structural mismatch
# (soft tissue against air) saturates the loss, large enough that noise
# and interpolation fuzz on true pairs stay well inside the cutoff

FEASIBILITY_LAM = 1e-9  # histogram weight used when ranking planes for an
# unregularized objective: far too small to reorder any intensity-term
# difference, but it keeps the bone-pairing requirement alive — a plane
# whose in-bounds pairs are all air scores a perfect intensity term on
# zero evidence and must stay infeasible — and it breaks exact-zero ties
# toward statistical dependence


@dataclass(frozen=True)
class SymmetryConfig:
    """Settings for :func:`estimate_plane`."""

    objective: str = OBJECTIVE_REGULARIZED
    tukey: TukeyParams = field(default_factory=TukeyParams)
    lam: float = 0.5
    hist: HistogramConfig = field(default_factory=HistogramConfig)
    min_pairs: int = 1000
    side: str = "both"
    pyramid_levels: int = 3
    max_iterations: int = 100
    step_tol: float = 1e-4
    value_tol: float = 1e-10
    initial_radius: float = 0.1
    angle_half_width: float = math.radians(20.0)
    offset_half_width: float | None = None  # default: 0.25 * x extent
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid needs at least one level")


@dataclass(frozen=True)
class SymmetryResult:
    plane: SymPlane
    report: ObjectiveReport
    traces: tuple  # one OptimizerTrace per pyramid level, coarse first
    outlier_mask: Volume  # 1.0 where the normalized residual exceeds c
    initial_objective: float
    final_objective: float

    def to_json(self) -> dict:
        return {
            "plane": self.plane.to_json(),
            "report": self.report.to_json(),
            "objective_initial": self.initial_objective,
            "objective_final": self.final_objective,
            "terminations": [t.termination for t in self.traces],
        }


def initialize_plane(vol: Volume, bone_threshold: float = 150.0) -> SymPlane:
    """Grid-aligned Y-Z plane through the intensity-weighted bone centroid.

    Translating the volume along x moves the plane offset by exactly the
    same amount.  Falls back to weighting by intensity above the volume
    minimum when nothing exceeds the bone threshold.
    """
    data = vol.data.astype(np.float64)
    vmin, vmax = float(data.min()), float(data.max())
    if vmin == vmax:
        raise ValueError("cannot initialize a plane on a constant volume")
    w = np.where(data > bone_threshold, data, 0.0)
    if w.sum() <= 0.0:
        w = data - vmin
    nx = vol.dims[0]
    xs = vol.origin[0] + np.arange(nx) * vol.spacing[0]
    wx = w.sum(axis=(0, 1))  # collapse z, y
    cx = float((wx * xs).sum() / wx.sum())
    return SymPlane.from_normal_offset((1.0, 0.0, 0.0), cx)


def _objective_value(vol: Volume, domain: VoxelDomain, plane: SymPlane,
                     cfg: SymmetryConfig,
                     ocfg: ObjectiveConfig | None = None) -> float:
    """Scalar objective for one plane; +inf when the plane is infeasible.

    ``ocfg`` substitutes a different robust-objective configuration (the
    search uses one for ranking candidates that differs from the reported
    objective); the NCC objective ignores it.
    """
    try:
        if cfg.objective == OBJECTIVE_NCC:
            mirror = reflection_from_plane(plane)
            fld = residual_field(vol, mirror, domain, min_pairs=cfg.min_pairs,
                                 side=cfg.side, plane=plane)
            return -metrics.ncc(fld.fixed, fld.mirrored)
        if ocfg is None:
            ocfg = ObjectiveConfig(
                tukey=cfg.tukey,
                lam=cfg.lam if cfg.objective == OBJECTIVE_REGULARIZED else 0.0,
                hist=cfg.hist, min_pairs=cfg.min_pairs, side=cfg.side,
            )
            return combined_objective(vol, plane, ocfg, domain).combined
        # Ranking mode.  The intensity term averages over in-bounds pairs
        # only, so a plane can lower it by tilting until most real pairs
        # fall outside the volume and the mean is taken over what's left
        # (mostly background agreeing with background).  For ranking, a
        # shed pair is an unexplained voxel: it costs the saturating
        # loss's cap, the same as a gross mismatch, so escaping pairs can
        # never beat explaining them.
        rep = combined_objective(vol, plane, ocfg, domain)
        cap = ocfg.tukey.c ** 2 / 6.0
        frac = rep.n_pairs / domain.count
        return (rep.d_intensity * frac + cap * (1.0 - frac)
                + ocfg.lam * rep.d_density)
    except (metrics.DegeneratePlaneError, metrics.NoBoneVoxelsError,
            metrics.ConstantInputError):
        return math.inf


def _final_report(vol: Volume, domain: VoxelDomain, plane: SymPlane,
                  cfg: SymmetryConfig) -> ObjectiveReport:
    """Full-resolution report of the objective that was optimized.

    For the NCC objective the report reuses the combined/d_I slots for the
    negated correlation (lambda 0) while the residual statistics still come
    from the robust pairing, so outlier counts stay meaningful.
    """
    if cfg.objective != OBJECTIVE_NCC:
        ocfg = ObjectiveConfig(
            tukey=cfg.tukey,
            lam=cfg.lam if cfg.objective == OBJECTIVE_REGULARIZED else 0.0,
            hist=cfg.hist, min_pairs=cfg.min_pairs, side=cfg.side,
        )
        return combined_objective(vol, plane, ocfg, domain)
    mirror = reflection_from_plane(plane)
    fld = residual_field(vol, mirror, domain, min_pairs=cfg.min_pairs,
                         side=cfg.side, plane=plane)
    val = -metrics.ncc(fld.fixed, fld.mirrored)
    n_out = int(np.count_nonzero(fld.normalized > cfg.tukey.c))
    return ObjectiveReport(val, 0.0, val, 0.0, fld.n_pairs, n_out, fld.scale)


def _scan_min(f, x: np.ndarray, dims: tuple, axes: tuple,
              trace: OptimizerTrace) -> np.ndarray:
    """Exhaustive grid scan of ``f`` varying ``dims`` of ``x`` over ``axes``.

    Every candidate keeps the non-scanned components of ``x``; evaluations
    are appended to ``trace``.  Returns the best point seen (including
    ``x`` itself).
    """
    base = np.asarray(x, dtype=np.float64)
    best_x, best_f = base.copy(), f(base)
    trace.record(len(trace.rows), best_x, best_f)
    grids = np.meshgrid(*axes, indexing="ij")
    for p in np.stack([g.ravel() for g in grids], axis=-1):
        cand = base.copy()
        cand[list(dims)] = p
        v = f(cand)
        trace.record(len(trace.rows), cand, v)
        if v < best_f:
            best_x, best_f = cand, v
    return best_x


def _steps(lo: float, hi: float, step: float) -> np.ndarray:
    n = max(int(math.floor((hi - lo) / step)) + 1, 2)
    return np.linspace(lo, hi, n)


def _minimize_level(f, x0: np.ndarray, bounds: Bounds, cfg: SymmetryConfig,
                    radius: float, merged: OptimizerTrace) -> None:
    """One polish pass of a pyramid level, appended into ``merged``.

    A single trust-region run can park on a shallow shelf with its radius
    exhausted while a steady descent direction still exists, so the level
    re-centres on its best point and starts over with a fresh radius as
    long as that keeps paying and iterations remain.  All passes share
    ``cfg.max_iterations``.
    """
    n = bounds.n
    budget = cfg.max_iterations
    x = np.asarray(x0, dtype=np.float64)
    while budget > 0:
        ocfg = OptimizerConfig(
            max_iterations=budget,
            step_tol=cfg.step_tol,
            value_tol=cfg.value_tol,
            initial_radius=radius,
            seed=cfg.seed,
        )
        tr = minimize(f, x, bounds, ocfg)
        for _, px, pf in tr.rows:
            merged.record(len(merged.rows), np.asarray(px), pf)
        merged.termination = tr.termination
        budget -= max(1, len(tr.rows) - (2 * n + 1))
        if tr.best_f < merged.best_f:
            merged.best_x, merged.best_f = tr.best_x, tr.best_f
        pass_gain = tr.rows[0][2] - tr.best_f  # start-of-pass value vs best
        if pass_gain <= 1e-4:
            break
        x = np.asarray(tr.best_x, dtype=np.float64)


def estimate_plane(vol: Volume, init: SymPlane, cfg: SymmetryConfig = SymmetryConfig()) -> SymmetryResult:
    """Refine ``init`` into the plane minimizing the configured objective.

    Optimization runs coarse-to-fine over ``cfg.pyramid_levels`` box-filtered
    resolutions with per-level bounds re-centred on the incoming plane
    (half-widths ``cfg.angle_half_width`` on both angles and a quarter of
    the x extent on the offset by default).  Each level's answer is kept
    only if it scores at least as well as the incoming plane on the
    full-resolution volume, so artifacts of heavy downsampling cannot
    propagate.  The final plane never scores worse than ``init`` at full
    resolution: if the search somehow ends higher, the initialization is
    returned instead.
    """
    levels = [vol]
    for _ in range(cfg.pyramid_levels - 1):
        levels.append(downsample2(levels[-1]))
    levels.reverse()  # coarse first

    extent_x = vol.dims[0] * vol.spacing[0]
    off_hw = cfg.offset_half_width if cfg.offset_half_width is not None \
        else 0.25 * extent_x

    full_domain = VoxelDomain(vol)
    # Ranking candidate planes against each other is a different job from
    # weighting residuals within one plane, and the reported objective is
    # only built for the latter: its adaptive scale lets a plane that pairs
    # mostly background with background set S from its own gross residuals
    # and hide every mismatch, and the redescending loss scores gross
    # mismatch at zero.  Search and cross-level acceptance therefore rank
    # planes under the saturating loss with S fixed to a fraction of the
    # intensity range — the cost is then a soft count of disagreeing pairs,
    # comparable across planes — while the finest level, the reported
    # values and the objective guarantee use the configured objective.
    # The NCC objective ranks with itself.
    capture_ocfg = None
    rng = float(vol.data.max()) - float(vol.data.min())
    if cfg.objective != OBJECTIVE_NCC and rng > 0.0:
        cap_lam = cfg.lam if cfg.objective == OBJECTIVE_REGULARIZED \
            else FEASIBILITY_LAM
        capture_ocfg = ObjectiveConfig(
            tukey=replace(cfg.tukey, variant=TukeyVariant.STANDARD),
            lam=cap_lam,
            hist=cfg.hist, min_pairs=cfg.min_pairs, side=cfg.side,
            scale=CAPTURE_SCALE_FRAC * rng,
        )

    x = np.array([init.theta, init.phi, init.offset], dtype=np.float64)
    f_gate = _objective_value(vol, full_domain, init, cfg, capture_ocfg)
    traces = []
    for li, lvol in enumerate(levels):
        domain = VoxelDomain(lvol)
        half = np.array([cfg.angle_half_width, cfg.angle_half_width, off_hw])
        bounds = Bounds(x - half, x + half)

        # Only the finest level optimizes what is reported; see above.
        locfg = capture_ocfg if li < len(levels) - 1 else None

        # Evaluations cost ~8x more per level, and each finer level only
        # polishes an answer the coarser ones already localized, so the
        # iteration budget halves as the resolution doubles.
        lcfg = replace(cfg, max_iterations=max(cfg.max_iterations >> li, 16))

        def f(params, _lvol=lvol, _dom=domain, _ocfg=locfg):
            return _objective_value(_lvol, _dom, SymPlane(*params), cfg, _ocfg)

        # Coarse levels search wide; each finer level starts half as far
        # out since it only polishes the previous level's answer.
        radius = cfg.initial_radius / (2 ** li)
        tr = OptimizerTrace()
        if li == 0:
            # Global capture.  The surface is a shallow cone with a narrow,
            # deep funnel at the answer; a local model started on the cone
            # crawls and one started on the funnel's rim falls off it.  The
            # coarsest (cheapest) level therefore scans its whole box —
            # offset line, angle grid, polish — and then drills into the
            # funnel with two zoomed three-parameter scans, so every finer
            # level starts deep inside the basin it only needs to polish.
            def fc(params, _lvol=lvol, _dom=domain):
                return _objective_value(_lvol, _dom, SymPlane(*params), cfg,
                                        capture_ocfg)

            lo, hi = bounds.lower, bounds.upper
            ang = math.radians(1.5)
            vox = float(vol.spacing[0])

            def off_win(c, half=12.0):
                return _steps(max(lo[2], c - half), min(hi[2], c + half), vox)

            # The best offset co-varies with the tilt (roughly a millimetre
            # per degree on this kind of data), so scanning one while the
            # other is fixed rides the wall of a diagonal valley and
            # coordinate alternation stalls partway down it.  Scan each
            # angle jointly with an offset window instead: the offset line
            # first to centre that window, then (angle, offset) planes.
            x = _scan_min(fc, x, (2,), (_steps(lo[2], hi[2], vox),), tr)
            x = _scan_min(fc, x, (0, 2), (_steps(lo[0], hi[0], ang),
                                          off_win(x[2])), tr)
            x = _scan_min(fc, x, (1, 2), (_steps(lo[1], hi[1], ang),
                                          off_win(x[2])), tr)
            _minimize_level(fc, x, bounds, lcfg, radius, tr)
            x = np.asarray(tr.best_x, dtype=np.float64)
            for half_deg, step_deg, half_mm, step_mm in (
                    (1.0, 0.2, 0.6, 0.2), (0.15, 0.05, 0.15, 0.05)):
                ha, sa = math.radians(half_deg), math.radians(step_deg)
                x = _scan_min(fc, x, (0, 1, 2), (
                    _steps(max(lo[0], x[0] - ha), min(hi[0], x[0] + ha), sa),
                    _steps(max(lo[1], x[1] - ha), min(hi[1], x[1] + ha), sa),
                    _steps(max(lo[2], x[2] - half_mm),
                           min(hi[2], x[2] + half_mm), step_mm)), tr)
        _minimize_level(f, x, bounds, lcfg, radius, tr)
        traces.append(tr)
        # Accept a level's answer only if it also wins at full resolution;
        # coarse box-filtered volumes can manufacture minima that vanish on
        # the real data, and carrying those forward poisons every later
        # level's starting point.
        cand = np.asarray(tr.best_x, dtype=np.float64)
        f_cand = _objective_value(vol, full_domain, SymPlane(*cand), cfg,
                                  capture_ocfg)
        if f_cand <= f_gate:
            x, f_gate = cand, f_cand
    final_plane = SymPlane(*x)
    f_init = _objective_value(vol, full_domain, init, cfg)
    f_final = _objective_value(vol, full_domain, final_plane, cfg)
    if f_final > f_init:
        final_plane, f_final = init, f_init

    report = _final_report(vol, full_domain, final_plane, cfg)
    mirror = reflection_from_plane(final_plane)
    # The mask classifies voxels against an absolute mismatch reference, so
    # it normalizes by the fixed scale: the adaptive estimate degenerates on
    # heavily asymmetric volumes (a zero median falls back to the mean of the
    # nonzero residuals, which the gross mismatches themselves inflate until
    # the cutoff hides most of them).
    mask_scale = CAPTURE_SCALE_FRAC * rng if rng > 0.0 else None
    fld = residual_field(vol, mirror, full_domain, min_pairs=cfg.min_pairs,
                         side=cfg.side, plane=final_plane, scale=mask_scale)
    mask = np.zeros(vol.n_voxels, dtype=np.float32)
    sel = np.zeros(vol.n_voxels, dtype=bool)
    sel[fld.valid] = fld.normalized > cfg.tukey.c
    mask[sel] = 1.0
    nz, ny, nx = vol.data.shape
    mask_vol = Volume(mask.reshape(nz, ny, nx), vol.spacing, vol.origin)

    return SymmetryResult(
        plane=final_plane.canonical(),
        report=report,
        traces=tuple(traces),
        outlier_mask=mask_vol,
        initial_objective=f_init,
        final_objective=f_final,
    )


def mirror_volume(vol: Volume, plane: SymPlane, fill: float | None = None) -> Volume:
    """Resample ``vol`` through the reflection across ``plane``.

    Output voxel p takes the trilinear sample at reflect(p); reflected
    positions outside the volume get ``fill`` (the volume minimum by
    default).  The plane must cut through the volume's bounding box.
    """
    lo, hi = vol.world_bounds()
    corners = np.array([
        (x, y, z) for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])
    ])
    d = plane.signed_distance(corners)
    if d.min() > 0.0 or d.max() < 0.0:
        raise ValueError("plane does not intersect the volume bounding box")
    if fill is None:
        fill = float(vol.data.min())
    mirror = reflection_from_plane(plane)
    pts = mirror.apply(vol.voxel_centers)
    vals, ok = sample_trilinear_many(vol, pts)
    vals[~ok] = fill
    nz, ny, nx = vol.data.shape
    return Volume(vals.reshape(nz, ny, nx).astype(np.float32), vol.spacing, vol.origin)


def landmark_symmetry_error(left: np.ndarray, right: np.ndarray, plane: SymPlane) -> np.ndarray:
    """Distances between left landmarks and the mirrored right landmarks.

    Zero for all pairs exactly when the plane reproduces the true mirror
    correspondence.
    """
    left = np.atleast_2d(np.asarray(left, dtype=np.float64))
    right = np.atleast_2d(np.asarray(right, dtype=np.float64))
    if left.shape != right.shape:
        raise ValueError("landmark lists differ in length")
    mirror = reflection_from_plane(plane)
    return np.linalg.norm(left - mirror.apply(right), axis=1)
