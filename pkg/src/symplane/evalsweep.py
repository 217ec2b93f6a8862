"""Sensitivity sweeps and landmark-error tables for plane estimation.

``run_sweep`` measures how each objective recovers the known plane of a
synthetic phantom across noise/outlier corruption levels and initialization
offsets; ``landmark_table`` scores estimated planes by the distance between
paired landmarks after mirroring, volume by volume.  Both emit deterministic
CSV so repeated runs with identical seeds are byte-identical; wall-clock
timings go to a separate sidecar file that is excluded from that guarantee.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import RigidTransform, SymPlane
from .phantom import PhantomSpec, corrupt, generate_phantom
from .symmetry import (
    OBJECTIVES,
    SymmetryConfig,
    estimate_plane,
    initialize_plane,
    landmark_symmetry_error,
)
from .volume import Volume

__all__ = [
    "SweepGrid",
    "SweepRecord",
    "SweepResult",
    "LandmarkTable",
    "plane_error",
    "perturb_plane",
    "run_sweep",
    "landmark_table",
]

DEFAULT_OFFSETS = tuple((k, float(k)) for k in range(0, 16, 2))


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian evaluation grid.

    ``init_offsets`` pairs (translation voxels, rotation degrees) are applied
    jointly to the true plane to form each cell's initialization.
    """

    init_offsets: tuple = DEFAULT_OFFSETS
    noise_levels: tuple = (0, 5, 10, 15, 20, 25)
    outlier_levels: tuple = (0, 10, 20, 30)
    objectives: tuple = OBJECTIVES
    seeds: int = 3

    def __post_init__(self):
        offs = tuple((int(t), float(r)) for t, r in self.init_offsets)
        if not offs or not self.noise_levels or not self.outlier_levels:
            raise ValueError("sweep grid axes must be non-empty")
        if not self.objectives:
            raise ValueError("at least one objective is required")
        for o in self.objectives:
            if o not in OBJECTIVES:
                raise ValueError(f"unknown objective {o!r}")
        if any(n < 0 or n > 25 for n in self.noise_levels):
            raise ValueError("noise levels must lie in 0..25 percent")
        if any(o < 0 or o > 30 for o in self.outlier_levels):
            raise ValueError("outlier levels must lie in 0..30 percent")
        if self.seeds < 1:
            raise ValueError("need at least one seed per cell")
        object.__setattr__(self, "init_offsets", offs)
        object.__setattr__(self, "noise_levels", tuple(int(n) for n in self.noise_levels))
        object.__setattr__(self, "outlier_levels", tuple(int(o) for o in self.outlier_levels))
        object.__setattr__(self, "objectives", tuple(self.objectives))


@dataclass(frozen=True)
class SweepRecord:
    """One estimation run; ``status`` is 'ok' or the failure message."""

    objective: str
    noise_pct: int
    outlier_pct: int
    offset_voxels: int
    offset_deg: float
    seed: int
    plane: SymPlane | None
    truth: SymPlane
    angle_error_deg: float
    distance_error_mm: float
    evaluations: int
    status: str = "ok"


@dataclass
class SweepResult:
    grid: SweepGrid
    records: list = field(default_factory=list)
    timings: list = field(default_factory=list)  # seconds, same order as records

    _COLUMNS = [
        "objective", "noise_pct", "outlier_pct", "offset_voxels", "offset_deg",
        "seed", "theta", "phi", "offset", "truth_theta", "truth_phi",
        "truth_offset", "angle_error_deg", "distance_error_mm", "evaluations",
        "status",
    ]

    def write_csv(self, path) -> None:
        """Canonical result table; floats via repr for byte determinism."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self._COLUMNS)
            for r in self.records:
                p = r.plane
                w.writerow([
                    r.objective, r.noise_pct, r.outlier_pct, r.offset_voxels,
                    repr(r.offset_deg), r.seed,
                    repr(p.theta) if p else "", repr(p.phi) if p else "",
                    repr(p.offset) if p else "",
                    repr(r.truth.theta), repr(r.truth.phi), repr(r.truth.offset),
                    repr(r.angle_error_deg), repr(r.distance_error_mm),
                    r.evaluations, r.status,
                ])

    def write_timings(self, path) -> None:
        """Wall-clock sidecar; not covered by the determinism guarantee."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "objective", "noise_pct", "outlier_pct",
                        "offset_voxels", "seed", "wall_seconds"])
            for i, (r, t) in enumerate(zip(self.records, self.timings)):
                w.writerow([i, r.objective, r.noise_pct, r.outlier_pct,
                            r.offset_voxels, r.seed, f"{t:.3f}"])

    def cell_mean_errors(self) -> dict:
        """Seed-averaged (angle, distance) errors per successful cell.

        Keyed by (objective, noise, outliers, offset_voxels); cells whose
        runs all failed are absent.
        """
        acc: dict = {}
        for r in self.records:
            if r.status != "ok":
                continue
            key = (r.objective, r.noise_pct, r.outlier_pct, r.offset_voxels)
            acc.setdefault(key, []).append((r.angle_error_deg, r.distance_error_mm))
        return {
            k: (float(np.mean([a for a, _ in v])), float(np.mean([d for _, d in v])))
            for k, v in acc.items()
        }

    def write_heatmaps(self, outdir) -> list:
        """Per-(noise, outlier) CSV matrices: offsets x objectives.

        Two files per corruption pair (angle and distance); returns the
        written paths.
        """
        import os

        means = self.cell_mean_errors()
        paths = []
        for noise in self.grid.noise_levels:
            for out in self.grid.outlier_levels:
                for qi, qname in ((0, "angle"), (1, "distance")):
                    path = os.path.join(
                        outdir, f"heatmap_noise{noise}_outlier{out}_{qname}.csv"
                    )
                    with open(path, "w", newline="") as fh:
                        w = csv.writer(fh)
                        w.writerow(["offset_voxels"] + list(self.grid.objectives))
                        for t, _r in self.grid.init_offsets:
                            row = [t]
                            for obj in self.grid.objectives:
                                m = means.get((obj, noise, out, t))
                                row.append(repr(m[qi]) if m else "")
                            w.writerow(row)
                    paths.append(path)
        return paths


def plane_error(estimated: SymPlane, truth: SymPlane, centroid) -> tuple:
    """(normal angle degrees, plane distance mm at the centroid's projection).

    The distance is measured between the planes at the point of the truth
    plane closest to ``centroid``, so pure rotations about that point score
    zero distance.
    """
    c = np.asarray(centroid, dtype=np.float64)
    n_t = truth.normal
    anchor = c - float(truth.signed_distance(c[None])[0]) * n_t
    dist = abs(float(estimated.signed_distance(anchor[None])[0]))
    cosang = abs(float(np.dot(n_t, estimated.normal)))
    angle = float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return angle, dist


def perturb_plane(truth: SymPlane, trans_mm: float, rot_deg: float,
                  centroid) -> SymPlane:
    """Truth plane shifted along its normal and tilted about an in-plane axis.

    The rotation pivots at the truth plane's point nearest ``centroid`` and
    turns the normal about the in-plane axis closest to world z (falling
    back to y for z-like normals), so translation and rotation effects stay
    independent.
    """
    c = np.asarray(centroid, dtype=np.float64)
    n = truth.normal
    anchor = c - float(truth.signed_distance(c[None])[0]) * n
    ref = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(ref, n)) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    axis = ref - np.dot(ref, n) * n
    axis /= np.linalg.norm(axis)
    rot = RigidTransform.from_axis_angle(axis, np.deg2rad(rot_deg))
    n_new = rot.rotation @ n
    return SymPlane.from_normal_offset(n_new, float(np.dot(n_new, anchor)) + trans_mm)


def _cell_seed(base: int, noise: int, outliers: int, seed_idx: int) -> int:
    """Stable per-cell corruption seed derived from the grid coordinates."""
    ss = np.random.SeedSequence((base, noise, outliers, seed_idx))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_sweep(spec: PhantomSpec, grid: SweepGrid,
              base_cfg: SymmetryConfig = SymmetryConfig()) -> SweepResult:
    """Evaluate every (objective, noise, outliers, offset, seed) cell.

    The phantom is generated once; each cell corrupts it with a seed derived
    from the grid coordinates, perturbs the true plane into the cell's
    initialization, runs the estimation, and records the plane error against
    truth.  Pipeline failures are captured per record (status column), never
    aborting the sweep.
    """
    vol0, truth = generate_phantom(spec)
    lo, hi = vol0.world_bounds()
    centroid = (lo + hi) / 2.0
    vox_mm = float(spec.spacing[0])

    result = SweepResult(grid=grid)
    corrupted_cache: dict = {}
    for noise in grid.noise_levels:
        for out in grid.outlier_levels:
            for seed_idx in range(grid.seeds):
                ckey = (noise, out, seed_idx)
                if ckey not in corrupted_cache:
                    corrupted_cache[ckey] = corrupt(
                        vol0, noise, out, _cell_seed(spec.seed, noise, out, seed_idx)
                    )
                vol = corrupted_cache[ckey]
                for t_vox, r_deg in grid.init_offsets:
                    init = perturb_plane(truth, t_vox * vox_mm, r_deg, centroid)
                    for obj in grid.objectives:
                        cfg = replace(base_cfg, objective=obj)
                        t0 = time.perf_counter()
                        try:
                            res = estimate_plane(vol, init, cfg)
                            ang, dist = plane_error(res.plane, truth, centroid)
                            rec = SweepRecord(
                                obj, noise, out, t_vox, r_deg, seed_idx,
                                res.plane, truth, ang, dist,
                                sum(len(tr.rows) for tr in res.traces),
                            )
                        except Exception as e:  # recorded, not fatal
                            rec = SweepRecord(
                                obj, noise, out, t_vox, r_deg, seed_idx,
                                None, truth, float("nan"), float("nan"), 0,
                                status=f"{type(e).__name__}: {e}",
                            )
                        result.records.append(rec)
                        result.timings.append(time.perf_counter() - t0)
            # Cache only within one corruption setting to bound memory.
            corrupted_cache.clear()
    return result


@dataclass
class LandmarkTable:
    """Mean +/- SD landmark symmetry error (mm), objectives by landmarks."""

    objectives: tuple
    landmark_names: tuple
    means: np.ndarray  # (n_objectives, n_landmarks)
    sds: np.ndarray

    def to_text(self) -> str:
        width = max(len(n) for n in self.landmark_names + ("objective",)) + 2
        cells = [["objective"] + list(self.landmark_names)]
        for i, obj in enumerate(self.objectives):
            cells.append(
                [obj]
                + [f"{self.means[i, j]:.2f} +/- {self.sds[i, j]:.2f}"
                   for j in range(len(self.landmark_names))]
            )
        width = max(width, max(len(c) for row in cells for c in row) + 2)
        return "\n".join("".join(c.ljust(width) for c in row) for row in cells)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["objective"]
                       + [f"{n}_mean_mm" for n in self.landmark_names]
                       + [f"{n}_sd_mm" for n in self.landmark_names])
            for i, obj in enumerate(self.objectives):
                w.writerow([obj]
                           + [repr(float(v)) for v in self.means[i]]
                           + [repr(float(v)) for v in self.sds[i]])


def landmark_table(cases: list, cfg: SymmetryConfig = SymmetryConfig(),
                   objectives: tuple = OBJECTIVES,
                   landmark_names: tuple | None = None) -> LandmarkTable:
    """Estimate a plane per volume per objective and score the landmarks.

    ``cases`` holds (volume, left_points, right_points, init_plane_or_None)
    tuples; a missing init falls back to :func:`initialize_plane`.  All
    volumes must share the landmark count.  Statistics aggregate over
    volumes: mean and population SD per (objective, landmark).
    """
    if not cases:
        raise ValueError("landmark_table needs at least one case")
    n_marks = None
    errors = {obj: [] for obj in objectives}
    for case in cases:
        vol, left, right = case[0], np.atleast_2d(case[1]), np.atleast_2d(case[2])
        init = case[3] if len(case) > 3 else None
        if n_marks is None:
            n_marks = len(left)
        if len(left) != n_marks or len(right) != n_marks:
            raise ValueError("all cases must share the landmark count")
        for obj in objectives:
            res = estimate_plane(vol, init or initialize_plane(vol),
                                 replace(cfg, objective=obj))
            errors[obj].append(landmark_symmetry_error(left, right, res.plane))
    names = tuple(landmark_names) if landmark_names is not None else tuple(
        f"L{i + 1}" for i in range(n_marks)
    )
    if len(names) != n_marks:
        raise ValueError("landmark_names length does not match the landmarks")
    means = np.array([np.mean(errors[o], axis=0) for o in objectives])
    sds = np.array([np.std(errors[o], axis=0) for o in objectives])
    return LandmarkTable(tuple(objectives), names, means, sds)
