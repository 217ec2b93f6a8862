"""Rigid transforms, symmetry planes, reflections and pinhole camera geometry.

All coordinates are world millimetres unless stated otherwise.  Points are
numpy arrays of shape (3,) or (N, 3); every public operation accepts both.
"""

import math
from dataclasses import dataclass, field

import numpy as np

_ORTHO_TOL = 1e-9


def _as_points(p):
    """Return (points as float64 (N, 3) array, was_single flag)."""
    a = np.asarray(p, dtype=np.float64)
    if a.ndim == 1:
        if a.shape != (3,):
            raise ValueError(f"expected a 3-vector, got shape {a.shape}")
        return a[None, :], True
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array, got shape {a.shape}")
    return a, False


def _ro(a):
    """Freeze an array so dataclass instances stay immutable."""
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion ``x -> rotation @ x + translation``.

    The rotation matrix must be orthonormal with determinant +1 (checked on
    construction to within 1e-9).
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _ro(self.rotation)
        t = _ro(self.translation)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rigid transform needs a 3x3 rotation and a 3-vector")
        err = np.abs(R @ R.T - np.eye(3)).max()
        if err > 1e-7:
            raise ValueError(f"rotation is not orthonormal (error {err:.3g})")
        if abs(np.linalg.det(R) - 1.0) > 1e-7:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity():
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_axis_angle(axis, angle_rad, translation=(0.0, 0.0, 0.0)):
        """Rodrigues rotation about ``axis`` by ``angle_rad`` plus translation."""
        a = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(a)
        if n == 0.0:
            if angle_rad != 0.0:
                raise ValueError("zero axis with nonzero angle")
            return RigidTransform(np.eye(3), translation)
        a = a / n
        K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
        R = np.eye(3) + math.sin(angle_rad) * K + (1 - math.cos(angle_rad)) * (K @ K)
        return RigidTransform(R, translation)

    def apply(self, p):
        pts, single = _as_points(p)
        out = pts @ self.rotation.T + self.translation
        return out[0] if single else out

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self o other`` (``other`` applied first)."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -(self.rotation.T @ self.translation))

    def to_json(self) -> dict:
        return {
            "rotation": [list(row) for row in self.rotation],
            "translation": list(self.translation),
        }

    @staticmethod
    def from_json(d: dict) -> "RigidTransform":
        return RigidTransform(np.asarray(d["rotation"]), np.asarray(d["translation"]))


@dataclass(frozen=True)
class SymPlane:
    """Plane ``{p : n(theta, phi) . p == offset}`` in Hesse normal form.

    ``theta`` is the polar angle of the unit normal (from +z), ``phi`` the
    azimuth (from +x towards +y) and ``offset`` the signed distance of the
    plane from the world origin along the normal, in millimetres.

    (theta, phi, offset) and (pi - theta, phi + pi, -offset) describe the same
    plane; :meth:`canonical` picks the unique representative whose normal has
    its largest-magnitude component positive (ties resolved x before y
    before z).
    """

    theta: float
    phi: float
    offset: float

    @property
    def normal(self) -> np.ndarray:
        st = math.sin(self.theta)
        n = np.array(
            [st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)]
        )
        # sin/cos of the exact axis-aligned angles leave ~1e-16 residue in
        # the other components; snap it out so grid-aligned planes reflect
        # voxel centres onto voxel centres exactly
        n[np.abs(n) < 1e-12] = 0.0
        return n / np.linalg.norm(n)

    @staticmethod
    def from_normal_offset(normal, offset: float) -> "SymPlane":
        n = np.asarray(normal, dtype=np.float64)
        nn = np.linalg.norm(n)
        if nn == 0.0:
            raise ValueError("plane normal must be nonzero")
        n = n / nn
        offset = float(offset) / nn  # rescale so the normal is unit length
        k = int(np.argmax(np.abs(n)))  # argmax takes the first max: x, then y, then z
        if n[k] < 0.0:
            n, offset = -n, -offset
        theta = math.atan2(math.hypot(n[0], n[1]), n[2])
        phi = math.atan2(n[1], n[0]) if math.hypot(n[0], n[1]) > 1e-15 else 0.0
        return SymPlane(theta, phi, float(offset))

    def canonical(self) -> "SymPlane":
        return SymPlane.from_normal_offset(self.normal, self.offset)

    def signed_distance(self, p):
        pts, single = _as_points(p)
        d = pts @ self.normal - self.offset
        return float(d[0]) if single else d

    def to_json(self) -> dict:
        return {"theta": self.theta, "phi": self.phi, "offset": self.offset}

    @staticmethod
    def from_json(d: dict) -> "SymPlane":
        try:
            return SymPlane(float(d["theta"]), float(d["phi"]), float(d["offset"]))
        except KeyError as e:
            raise ValueError(f"plane JSON is missing key {e.args[0]!r}") from None


@dataclass(frozen=True)
class Reflection:
    """Improper rigid motion ``x -> linear @ x + translation`` mirroring
    across a plane.  ``linear`` is the Householder matrix ``I - 2 n n^T``."""

    linear: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "linear", _ro(self.linear))
        object.__setattr__(self, "translation", _ro(self.translation))

    def apply(self, p):
        pts, single = _as_points(p)
        out = pts @ self.linear.T + self.translation
        return out[0] if single else out

    def compose(self, other: "Reflection"):
        """``self o other``; two reflections compose to a rigid motion."""
        return (
            self.linear @ other.linear,
            self.linear @ other.translation + self.translation,
        )


def reflection_from_plane(plane: SymPlane) -> Reflection:
    """Householder reflection across ``plane``.

    The map is ``p -> (I - 2 n n^T) p + 2 * offset * n``; it is an involution
    whose fixed points are exactly the plane itself.
    """
    n = plane.normal
    H = np.eye(3) - 2.0 * np.outer(n, n)
    return Reflection(H, 2.0 * plane.offset * n)


def plane_from_g(g: RigidTransform) -> SymPlane:
    """Plane obtained by mapping the world Y-Z plane through ``g``.

    The returned plane satisfies ``reflection_from_plane(plane_from_g(g)) ==
    g o F_x o g^{-1}`` where ``F_x`` negates the x coordinate, so optimizing
    over ``g`` and optimizing over (theta, phi, offset) explore the same set
    of reflections.
    """
    n = g.rotation[:, 0]
    return SymPlane.from_normal_offset(n, float(n @ g.translation))


@dataclass(frozen=True)
class CameraPose:
    """Pinhole C-arm geometry.

    The camera frame has the X-ray source at its origin and the principal
    axis along +z; the detector plane sits at ``z == sdd`` and the isocenter
    at ``z == sid``.  ``extrinsic`` maps world coordinates into the camera
    frame.  ``det_dims`` is (width, height) in pixels, ``pixel_spacing`` is
    (du, dv) in millimetres; pixel (u, v) centres the detector at
    ``((det_dims - 1) / 2)``.
    """

    sdd: float
    sid: float
    det_dims: tuple
    pixel_spacing: tuple
    extrinsic: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if not (0.0 < self.sid < self.sdd):
            raise ValueError("camera needs 0 < sid < sdd")
        w, h = self.det_dims
        if int(w) <= 0 or int(h) <= 0:
            raise ValueError("detector dimensions must be positive")
        if min(self.pixel_spacing) <= 0.0:
            raise ValueError("pixel spacing must be positive")
        object.__setattr__(self, "det_dims", (int(w), int(h)))
        object.__setattr__(
            self, "pixel_spacing", (float(self.pixel_spacing[0]), float(self.pixel_spacing[1]))
        )

    @property
    def source_world(self) -> np.ndarray:
        """X-ray source position in world coordinates."""
        return self.extrinsic.inverse().apply(np.zeros(3))

    @property
    def isocenter_world(self) -> np.ndarray:
        return self.extrinsic.inverse().apply(np.array([0.0, 0.0, self.sid]))

    def pixel_centers_world(self) -> np.ndarray:
        """World positions of all detector pixel centres, shape (H, W, 3)."""
        w, h = self.det_dims
        cu, cv = (w - 1) / 2.0, (h - 1) / 2.0
        u = (np.arange(w) - cu) * self.pixel_spacing[0]
        v = (np.arange(h) - cv) * self.pixel_spacing[1]
        uu, vv = np.meshgrid(u, v)
        cam = np.stack([uu, vv, np.full_like(uu, self.sdd)], axis=-1)
        inv = self.extrinsic.inverse()
        return inv.apply(cam.reshape(-1, 3)).reshape(h, w, 3)

    def to_json(self) -> dict:
        return {
            "sdd": self.sdd,
            "sid": self.sid,
            "det_dims": list(self.det_dims),
            "pix_spacing": list(self.pixel_spacing),
            "extrinsic": self.extrinsic.to_json(),
        }

    @staticmethod
    def from_json(d: dict) -> "CameraPose":
        try:
            return CameraPose(
                float(d["sdd"]),
                float(d["sid"]),
                tuple(d["det_dims"]),
                tuple(d["pix_spacing"]),
                RigidTransform.from_json(d["extrinsic"]),
            )
        except KeyError as e:
            raise ValueError(f"camera JSON is missing key {e.args[0]!r}") from None


def project_point(cam: CameraPose, p):
    """Project world point(s) onto the detector; returns (u, v) pixel coords.

    Points at or behind the source plane (camera z <= a small epsilon) are
    not visible; a single such point yields ``None`` and in the array case
    the accompanying validity mask is False.
    """
    pts, single = _as_points(p)
    c = cam.extrinsic.apply(pts)
    z = c[:, 2]
    ok = z > 1e-9
    w, h = cam.det_dims
    cu, cv = (w - 1) / 2.0, (h - 1) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = c[:, 0] * cam.sdd / (z * cam.pixel_spacing[0]) + cu
        v = c[:, 1] * cam.sdd / (z * cam.pixel_spacing[1]) + cv
    uv = np.stack([u, v], axis=1)
    if single:
        return uv[0] if ok[0] else None
    return uv, ok
