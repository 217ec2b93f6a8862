"""Synthetic bilaterally symmetric CT-like phantoms with fracture presets.

Shapes are authored on one side of the symmetry plane and mirrored
analytically, so the generated volume is symmetric by construction; with the
default grid-aligned plane the voxel data is exactly mirror-equal.  All
intensities are in Hounsfield-like units (air -1000, soft tissue ~40, bone
300-1500).  Shape boundaries fall off over a one-voxel cosine edge so the
volumes are smooth enough to interpolate.

Every random decision (corruption noise, outlier blobs, variant jitter)
derives from a single 64-bit seed fed to the Philox 4x64-10 counter-based
generator (``numpy.random.Philox``), making fixtures reproducible across
machines and implementations of this package.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Reflection, RigidTransform, SymPlane, reflection_from_plane
from .volume import Volume, sample_trilinear_many

log = logging.getLogger(__name__)

ELLIPSOID = "ellipsoid"
CAPSULE = "capsule"
BOX = "box"


@dataclass(frozen=True)
class Shape:
    """One solid primitive.

    ``kind`` selects the interpretation of the geometry fields:

    - ellipsoid: ``center`` + ``size`` as semi-axes (a, b, c)
    - capsule:   segment ``p0``-``p1`` with radius ``size[0]``
    - box:       ``center`` + ``size`` as half-extents

    ``orient`` rotates ellipsoids and boxes about their centre; mirroring a
    shape produces an orthogonal (determinant -1) orientation, which is fine
    for evaluating occupancy.
    """

    kind: str
    intensity: float
    center: tuple = (0.0, 0.0, 0.0)
    size: tuple = (1.0, 1.0, 1.0)
    p0: tuple = (0.0, 0.0, 0.0)
    p1: tuple = (0.0, 0.0, 0.0)
    orient: tuple = ((1, 0, 0), (0, 1, 0), (0, 0, 1))

    def __post_init__(self):
        if self.kind not in (ELLIPSOID, CAPSULE, BOX):
            raise ValueError(f"unknown shape kind {self.kind!r}")

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        """Approximate signed distance (mm, negative inside) at (N, 3) pts."""
        R = np.asarray(self.orient, dtype=np.float64)
        if self.kind == ELLIPSOID:
            ax = np.asarray(self.size, dtype=np.float64)
            local = (pts - np.asarray(self.center)) @ R
            q = np.linalg.norm(local / ax, axis=1)
            return (q - 1.0) * float(ax.min())
        if self.kind == CAPSULE:
            a = np.asarray(self.p0, dtype=np.float64)
            b = np.asarray(self.p1, dtype=np.float64)
            ab = b - a
            denom = float(ab @ ab)
            t = ((pts - a) @ ab) / denom if denom > 0 else np.zeros(len(pts))
            t = np.clip(t, 0.0, 1.0)
            closest = a + t[:, None] * ab
            return np.linalg.norm(pts - closest, axis=1) - float(self.size[0])
        half = np.asarray(self.size, dtype=np.float64)
        local = np.abs((pts - np.asarray(self.center)) @ R)
        d = local - half
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
        inside = np.minimum(d.max(axis=1), 0.0)
        return outside + inside

    def bounding_radius(self) -> float:
        if self.kind == ELLIPSOID:
            return float(max(self.size))
        if self.kind == CAPSULE:
            return float(self.size[0])
        return float(np.linalg.norm(self.size))

    def reference_points(self) -> np.ndarray:
        if self.kind == CAPSULE:
            return np.array([self.p0, self.p1], dtype=np.float64)
        return np.asarray(self.center, dtype=np.float64)[None, :]

    def mirrored(self, mirror: Reflection) -> "Shape":
        """The mirror image of this shape across a plane."""
        F = mirror.linear
        new_orient = tuple(map(tuple, F @ np.asarray(self.orient, dtype=np.float64)))
        if self.kind == CAPSULE:
            return replace(
                self,
                p0=tuple(mirror.apply(np.asarray(self.p0, dtype=np.float64))),
                p1=tuple(mirror.apply(np.asarray(self.p1, dtype=np.float64))),
            )
        return replace(
            self,
            center=tuple(mirror.apply(np.asarray(self.center, dtype=np.float64))),
            orient=new_orient,
        )

    def to_json(self) -> dict:
        d = {"type": self.kind, "intensity": self.intensity}
        if self.kind == ELLIPSOID:
            d["center"] = list(self.center)
            d["axes"] = list(self.size)
        elif self.kind == CAPSULE:
            d["p0"] = list(self.p0)
            d["p1"] = list(self.p1)
            d["radius"] = self.size[0]
        else:
            d["center"] = list(self.center)
            d["half_sizes"] = list(self.size)
        return d

    @staticmethod
    def from_json(d: dict) -> "Shape":
        try:
            kind = d["type"]
            inten = float(d["intensity"])
            if kind == ELLIPSOID:
                return Shape(kind, inten, center=tuple(d["center"]), size=tuple(d["axes"]))
            if kind == CAPSULE:
                return Shape(
                    kind, inten, p0=tuple(d["p0"]), p1=tuple(d["p1"]),
                    size=(float(d["radius"]), 0.0, 0.0),
                )
            if kind == BOX:
                return Shape(kind, inten, center=tuple(d["center"]), size=tuple(d["half_sizes"]))
        except KeyError as e:
            raise ValueError(f"shape JSON is missing key {e.args[0]!r}") from None
        raise ValueError(f"unknown shape type {d.get('type')!r}")


@dataclass(frozen=True)
class PhantomSpec:
    """Recipe for a symmetric phantom volume."""

    dims: tuple = (100, 100, 100)
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)
    background: float = -1000.0
    shapes: tuple = ()  # authored side; mirrored copies are added automatically
    plane: SymPlane | None = None  # default: grid-aligned Y-Z plane at x centre
    landmarks: tuple = ()  # (name, authored-side point) pairs
    seed: int = 0  # base entropy for downstream corruption/evaluation runs

    def true_plane(self) -> SymPlane:
        if self.plane is not None:
            return self.plane.canonical()
        cx = self.origin[0] + (self.dims[0] - 1) / 2.0 * self.spacing[0]
        return SymPlane.from_normal_offset((1.0, 0.0, 0.0), cx)

    def to_json(self) -> dict:
        return {
            "dims": list(self.dims),
            "spacing": list(self.spacing),
            "origin": list(self.origin),
            "background": self.background,
            "shapes": [s.to_json() for s in self.shapes],
            "plane": self.true_plane().to_json(),
            "landmarks": [{"name": n, "point": list(p)} for n, p in self.landmarks],
            "seed": self.seed,
        }

    @staticmethod
    def from_json(d: dict) -> "PhantomSpec":
        spec = PhantomSpec(
            dims=tuple(int(v) for v in d.get("dims", (100, 100, 100))),
            spacing=tuple(float(v) for v in d.get("spacing", (1.0, 1.0, 1.0))),
            origin=tuple(float(v) for v in d.get("origin", (0.0, 0.0, 0.0))),
            background=float(d.get("background", -1000.0)),
            shapes=tuple(Shape.from_json(s) for s in d.get("shapes", [])),
            plane=SymPlane.from_json(d["plane"]) if "plane" in d else None,
            landmarks=tuple(
                (lm["name"], tuple(lm["point"])) for lm in d.get("landmarks", [])
            ),
            seed=int(d.get("seed", 0)),
        )
        if min(spec.dims) < 2:
            raise ValueError("phantom dims must be at least 2 per axis")
        if min(spec.spacing) <= 0:
            raise ValueError("phantom spacing must be positive")
        return spec


def _rasterize(shapes, spec: PhantomSpec) -> np.ndarray:
    nx, ny, nz = spec.dims
    sp = np.asarray(spec.spacing, dtype=np.float64)
    og = np.asarray(spec.origin, dtype=np.float64)
    edge = float(sp.min())  # cosine edge width, one voxel
    data = np.full((nz, ny, nx), spec.background, dtype=np.float64)

    xs = og[0] + np.arange(nx) * sp[0]
    ys = og[1] + np.arange(ny) * sp[1]
    zs = og[2] + np.arange(nz) * sp[2]

    for shp in shapes:
        refs = shp.reference_points()
        lo = refs.min(axis=0) - shp.bounding_radius() - edge
        hi = refs.max(axis=0) + shp.bounding_radius() + edge
        ix = np.flatnonzero((xs >= lo[0]) & (xs <= hi[0]))
        iy = np.flatnonzero((ys >= lo[1]) & (ys <= hi[1]))
        iz = np.flatnonzero((zs >= lo[2]) & (zs <= hi[2]))
        if not (len(ix) and len(iy) and len(iz)):
            continue
        zz, yy, xx = np.meshgrid(zs[iz], ys[iy], xs[ix], indexing="ij")
        pts = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
        d = shp.signed_distance(pts)
        w = np.clip(d / edge, -0.5, 0.5)
        w = 0.5 * (1.0 - np.sin(math.pi * w))  # 1 inside, 0 outside, cosine edge
        val = spec.background + w * (shp.intensity - spec.background)
        sub = data[np.ix_(iz, iy, ix)]
        data[np.ix_(iz, iy, ix)] = np.maximum(sub, val.reshape(len(iz), len(iy), len(ix)))
    return data


def generate_phantom(spec: PhantomSpec) -> tuple:
    """Build the symmetric volume; returns ``(Volume, true_plane)``."""
    plane = spec.true_plane()
    mirror = reflection_from_plane(plane)
    all_shapes = list(spec.shapes) + [s.mirrored(mirror) for s in spec.shapes]
    data = _rasterize(all_shapes, spec)
    vol = Volume(data.astype(np.float32), spec.spacing, spec.origin)
    return vol, plane


def landmark_pairs(spec: PhantomSpec) -> list:
    """(name, left, right) triples; 'right' is the authored side."""
    mirror = reflection_from_plane(spec.true_plane())
    out = []
    for name, p in spec.landmarks:
        right = np.asarray(p, dtype=np.float64)
        out.append((name, mirror.apply(right), right))
    return out


def default_pelvis(variant: int = 0) -> PhantomSpec:
    """Pelvis-like default phantom, authored on the +x side of the plane.

    ``variant`` jitters shape positions and sizes deterministically (Philox
    keyed by the variant index) while keeping the volume exactly symmetric,
    giving structurally distinct but comparable fixtures.
    """
    rng = np.random.Generator(np.random.Philox(key=np.uint64(variant)))

    def j(scale):  # one jitter draw; zero for the base variant
        v = float(rng.uniform(-scale, scale))
        return v if variant != 0 else 0.0

    wing_c = (74.0 + j(2), 46.0 + j(2), 64.0 + j(2))
    wing_ax = (8.5 + j(1), 16.0 + j(1.5), 15.0 + j(1.5))
    acet_c = (68.0 + j(1.5), 56.0 + j(1.5), 40.0 + j(1.5))
    ramus_sup_p0 = (51.0, 64.0 + j(1.5), 36.0 + j(1.5))
    ramus_sup_p1 = (64.0 + j(1.5), 58.0 + j(1.5), 39.0 + j(1.5))
    ramus_inf_p0 = (51.0, 66.0 + j(1.5), 26.0 + j(1.5))
    ramus_inf_p1 = (63.0 + j(1.5), 60.0 + j(1.5), 30.0 + j(1.5))
    column_p0 = (70.0 + j(1.5), 48.0 + j(1.5), 54.0 + j(1.5))
    column_p1 = (67.0 + j(1.5), 54.0 + j(1.5), 42.0 + j(1.5))

    shapes = (
        Shape(ELLIPSOID, 1100.0, center=wing_c, size=wing_ax),
        Shape(ELLIPSOID, 1400.0, center=acet_c, size=(8.5 + j(1),) * 3),
        Shape(CAPSULE, 900.0, p0=ramus_sup_p0, p1=ramus_sup_p1, size=(4.0 + j(0.5), 0, 0)),
        Shape(CAPSULE, 800.0, p0=ramus_inf_p0, p1=ramus_inf_p1, size=(3.5 + j(0.5), 0, 0)),
        Shape(CAPSULE, 1300.0, p0=column_p0, p1=column_p1, size=(5.5 + j(0.5), 0, 0)),
        # midline structures straddle the plane; their mirror overlaps them
        Shape(ELLIPSOID, 600.0, center=(49.5, 38.0 + j(1.5), 56.0 + j(1.5)),
              size=(10.0 + j(1), 9.0 + j(1), 13.0 + j(1))),
        Shape(BOX, 500.0, center=(49.5, 36.0 + j(1.5), 76.0 + j(1.5)),
              size=(6.5 + j(0.5), 5.5 + j(0.5), 8.0 + j(0.5))),
        Shape(ELLIPSOID, 40.0, center=(49.5, 50.0, 52.0), size=(38.0, 33.0, 42.0)),
    )
    landmarks = (
        ("L1", (wing_c[0] + wing_ax[0] * 0.4, wing_c[1], wing_c[2] + wing_ax[2] * 0.8)),
        ("L2", acet_c),
        ("L3", ramus_sup_p1),
        ("L4", (column_p0[0], column_p0[1], column_p0[2] + 4.0)),
    )
    return PhantomSpec(shapes=shapes, landmarks=landmarks)


@dataclass(frozen=True)
class FractureSpec:
    """A fragment region and the rigid displacement applied to it."""

    region: Shape
    displacement: RigidTransform
    kind: str = "custom"


def fracture_preset(kind: str, spec: PhantomSpec) -> FractureSpec:
    """Named fracture patterns for the default pelvis geometry.

    - ``iliac-wing``: superior-lateral wedge of the wing, rotated 15 degrees
      and shifted 8 mm
    - ``pelvic-ring``: segment of the anterior ring, translated 12 mm
    - ``vertical-shear``: the whole authored-side column, 15 mm superior
    """
    plane = spec.true_plane()
    cx = plane.offset  # authored side sits at x > cx for the default plane
    if kind == "iliac-wing":
        region = Shape(ELLIPSOID, 0.0, center=(78.0, 44.0, 72.0), size=(12.0, 14.0, 11.0))
        center = np.asarray(region.center, dtype=np.float64)
        rot = RigidTransform.from_axis_angle((0.0, 1.0, 0.0), math.radians(15.0))
        t = np.array([3.0, 2.0, 6.7])  # |t| ~ 8 mm, superior-lateral
        disp = RigidTransform(rot.rotation, center - rot.rotation @ center + t)
        return FractureSpec(region, disp, kind)
    if kind == "pelvic-ring":
        region = Shape(CAPSULE, 0.0, p0=(56.5, 62.0, 37.0), p1=(66.0, 57.5, 40.0),
                       size=(6.0, 0, 0))
        disp = RigidTransform(np.eye(3), np.array([2.0, 7.1, 9.5]))  # ~12 mm
        return FractureSpec(region, disp, kind)
    if kind == "vertical-shear":
        region = Shape(BOX, 0.0, center=(76.0, 50.0, 50.0), size=(22.0, 34.0, 34.0))
        disp = RigidTransform(np.eye(3), np.array([0.0, 0.0, 15.0]))
        return FractureSpec(region, disp, kind)
    raise ValueError(f"unknown fracture preset {kind!r}")


def _region_weight(region: Shape, pts: np.ndarray, edge: float) -> np.ndarray:
    d = region.signed_distance(pts)
    w = np.clip(d / edge, -0.5, 0.5)
    return 0.5 * (1.0 - np.sin(math.pi * w))


def apply_fracture(vol: Volume, frac: FractureSpec, background: float = -1000.0,
                   true_plane: SymPlane | None = None) -> Volume:
    """Rigidly displace the voxels inside the fragment region.

    The source region is vacated to ``background`` and the displaced copy is
    composited over the result; edges stay smooth through the same cosine
    falloff used at generation time.  The displaced region must stay inside
    the volume, and when ``true_plane`` is given the region must lie strictly
    on one side of it.
    """
    lo, hi = vol.world_bounds()
    refs = frac.region.reference_points()
    if frac.region.kind == BOX:
        # per-axis half extents; the diagonal norm would reject boxes that
        # comfortably fit the grid
        R = np.abs(np.asarray(frac.region.orient, dtype=np.float64))
        rad = R @ np.asarray(frac.region.size, dtype=np.float64)
    else:
        rad = frac.region.bounding_radius()
    moved = frac.displacement.apply(refs)
    if np.any(moved - rad < lo - vol.spacing) or np.any(moved + rad > hi + vol.spacing):
        raise ValueError("displaced fragment leaves the volume grid")
    if true_plane is not None:
        corners = np.concatenate([refs - rad, refs + rad], axis=0)
        d = true_plane.signed_distance(corners)
        if d.min() < 0.0 < d.max():
            raise ValueError("fragment region must lie on one side of the plane")

    pts = vol.voxel_centers
    edge = float(vol.spacing.min())
    w_src = _region_weight(frac.region, pts, edge)
    data = vol.data.astype(np.float64).ravel()
    out = data * (1.0 - w_src) + background * w_src

    inv = frac.displacement.inverse()
    back = inv.apply(pts)
    w_dst = _region_weight(frac.region, back, edge)
    hit = w_dst > 0.0
    vals, ok = sample_trilinear_many(vol, back[hit])
    vals[~ok] = background
    wd = w_dst[hit]
    out[hit] = out[hit] * (1.0 - wd) + np.maximum(vals, background) * wd
    nz, ny, nx = vol.data.shape
    return Volume(out.reshape(nz, ny, nx).astype(np.float32), vol.spacing, vol.origin)


def corrupt(vol: Volume, noise_pct: float, outlier_pct: float, seed: int,
            mode: str = "blobs") -> Volume:
    """Additive Gaussian noise plus replacement outliers.

    Noise sigma is ``noise_pct/100 * max intensity``.  Outliers replace
    random spherical blobs (radius 3-8 voxels) with uniform random values
    until ``outlier_pct/100`` of the voxels have been touched; the scattered
    mode replaces individual voxels instead.  All randomness comes from the
    Philox generator keyed by ``seed``; ``(0, 0)`` returns the input data
    unchanged.
    """
    if not (0.0 <= noise_pct and 0.0 <= outlier_pct <= 100.0):
        raise ValueError("corruption percentages out of range")
    if noise_pct > 25.0 or outlier_pct > 30.0:
        log.warning(
            "corruption beyond the calibrated range (noise %.1f%%, outliers %.1f%%)",
            noise_pct, outlier_pct,
        )
    if mode not in ("blobs", "scattered"):
        raise ValueError(f"unknown corruption mode {mode!r}")

    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    data = vol.data.astype(np.float64)
    vmin, vmax = float(data.min()), float(data.max())
    nz, ny, nx = data.shape

    if noise_pct > 0.0:
        sigma = noise_pct / 100.0 * vmax
        data = data + rng.normal(0.0, sigma, size=data.shape)

    target = int(round(outlier_pct / 100.0 * data.size))
    if target > 0:
        changed = np.zeros(data.shape, dtype=bool)
        if mode == "scattered":
            flat = rng.choice(data.size, size=target, replace=False)
            data.ravel()[flat] = rng.uniform(vmin, vmax, size=target)
            changed.ravel()[flat] = True
        else:
            zz, yy, xx = np.meshgrid(
                np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij",
                sparse=True,
            )
            while int(changed.sum()) < target:
                cx = rng.integers(0, nx)
                cy = rng.integers(0, ny)
                cz = rng.integers(0, nz)
                r = rng.uniform(3.0, 8.0)
                blob = (
                    (xx - cx) ** 2 + (yy - cy) ** 2 + (zz - cz) ** 2
                ) <= r * r
                data[blob] = rng.uniform(vmin, vmax, size=int(blob.sum()))
                changed |= blob
    return Volume(data.astype(np.float32), vol.spacing, vol.origin)
