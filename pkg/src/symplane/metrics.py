"""Symmetry objectives: robust intensity term, histogram regularizer, NCC.

The intensity term pairs every domain voxel with its mirror image, normalizes
absolute residuals by a median-based scale and averages a Tukey biweight
cost.  The regularizer is a negated normalized mutual information computed
from the joint histogram of paired intensities above a bone threshold, so it
ranges over [-2, -1] and decreases as the two sides become statistically
more alike.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .geometry import Reflection, SymPlane, reflection_from_plane
from .volume import Volume, VoxelDomain, sample_trilinear_many

MAD_CONSISTENCY = 0.6745  # median absolute deviation for a unit normal
DUST_TOL = 1e-5  # residuals below this fraction of the intensity range are
# float rounding from interpolation/box filtering, not real disagreement
SCALE_FLOOR = 5e-3  # smallest S, as a fraction of the intensity range: a
# scale far below any real intensity step only manufactures outliers


class DegeneratePlaneError(RuntimeError):
    """Raised when a candidate plane pairs too few voxels inside the volume."""


class NoBoneVoxelsError(RuntimeError):
    """Raised when no paired voxel exceeds the bone threshold."""


class ConstantInputError(ValueError):
    """Raised when a correlation input has zero variance."""


class TukeyVariant(str, enum.Enum):
    """``AS_WRITTEN`` uses the redescending form ``e [1 - (e/c)^2]^2`` which
    is zero beyond the cutoff; ``STANDARD`` uses the classical biweight loss
    ``c^2/6 (1 - [1 - (e/c)^2]^3)`` which saturates at ``c^2/6``."""

    AS_WRITTEN = "as-written"
    STANDARD = "standard"


@dataclass(frozen=True)
class TukeyParams:
    c: float = 4.685
    variant: TukeyVariant = TukeyVariant.AS_WRITTEN

    def __post_init__(self):
        if self.c <= 0.0:
            raise ValueError("Tukey cutoff c must be positive")
        object.__setattr__(self, "variant", TukeyVariant(self.variant))


def tukey_rho(e, params: TukeyParams = TukeyParams()):
    """Tukey biweight cost of nonnegative normalized residual(s) ``e``."""
    a = np.asarray(e, dtype=np.float64)
    if np.any(a < 0.0):
        raise ValueError("normalized residuals must be nonnegative")
    c = params.c
    u2 = np.minimum(a / c, 1.0) ** 2
    if params.variant == TukeyVariant.AS_WRITTEN:
        out = np.where(a <= c, a * (1.0 - (a / c) ** 2) ** 2, 0.0)
    else:
        out = (c * c / 6.0) * (1.0 - (1.0 - u2) ** 3)
    return float(out) if np.isscalar(e) else out


@dataclass(frozen=True)
class ResidualField:
    """Paired intensities and robust residual statistics for one plane."""

    fixed: np.ndarray  # intensities at the domain voxels, in-bounds pairs only
    mirrored: np.ndarray  # intensities sampled at the mirrored positions
    residuals: np.ndarray  # |fixed - mirrored|
    normalized: np.ndarray  # residuals / scale
    scale: float  # S, positive
    n_pairs: int
    valid: np.ndarray  # mask into the domain's voxel list


def _paired_samples(fixed: Volume, mirror: Reflection, domain: VoxelDomain):
    pts = domain.points
    mirrored_pts = mirror.apply(pts)
    vals, ok = sample_trilinear_many(fixed, mirrored_pts)
    return domain.intensities[ok], vals[ok], ok


def residual_scale(residuals: np.ndarray, zero_tol: float = 0.0) -> float:
    """Median-based scale of raw residuals.

    ``median / 0.6745`` normally; if the median is zero (over half the pairs
    agree exactly) the mean of the nonzero residuals is used instead, and a
    field with no nonzero residual at all gets scale 1 so its cost is 0.

    ``zero_tol`` sets how small a residual counts as zero.  Pairs drawn from
    constant regions agree only up to float rounding, and a "median" made of
    rounding noise would shrink the scale by orders of magnitude, flagging
    every genuine structure pair as an outlier.
    """
    med = float(np.median(residuals))
    if med > zero_tol:
        return med / MAD_CONSISTENCY
    nonzero = residuals[residuals > zero_tol]
    if nonzero.size == 0:
        return 1.0
    return float(nonzero.mean()) / MAD_CONSISTENCY


def residual_field(
    fixed: Volume,
    mirror: Reflection,
    domain: VoxelDomain,
    min_pairs: int = 1000,
    side: str = "both",
    plane: SymPlane | None = None,
    scale: float | None = None,
) -> ResidualField:
    """Pair domain voxels with their mirror samples and normalize residuals.

    Mirrored positions falling outside the interpolable region are excluded
    from the pairing.  ``side="positive"`` restricts the domain to voxels on
    the positive side of ``plane`` before pairing.  ``scale`` fixes S instead
    of estimating it from the residuals; a fixed S makes costs comparable
    across candidate planes, which matters when ranking planes rather than
    weighting residuals within one.
    """
    if side not in ("both", "positive"):
        raise ValueError(f"unknown domain side {side!r}")
    pts = domain.points
    fixed_vals = domain.intensities
    keep = np.ones(len(pts), dtype=bool)
    if side == "positive":
        if plane is None:
            raise ValueError("side='positive' needs the plane")
        keep = plane.signed_distance(pts) > 0.0
    mirrored_pts = mirror.apply(pts[keep])
    vals, ok = sample_trilinear_many(fixed, mirrored_pts)
    valid = np.zeros(len(pts), dtype=bool)
    valid[np.flatnonzero(keep)[ok]] = True

    a = fixed_vals[keep][ok]
    b = vals[ok]
    if a.size < min_pairs:
        raise DegeneratePlaneError(
            f"only {a.size} voxel pairs fall inside the volume (need {min_pairs})"
        )
    r = np.abs(a - b)
    if scale is not None:
        if scale <= 0.0:
            raise ValueError("fixed scale must be positive")
        s = float(scale)
    else:
        # Residuals below float-rounding size (relative to the intensity
        # range) are agreements, not measurements; see residual_scale.  A
        # lower bound on the scale keeps a near-degenerate median (e.g. a
        # plane pairing mostly background with background) from turning
        # every structured pair into an invisible outlier.
        rng = float(fixed.data.max()) - float(fixed.data.min())
        s = residual_scale(r, zero_tol=DUST_TOL * rng)
        if rng > 0.0:
            s = max(s, SCALE_FLOOR * rng)
    return ResidualField(a, b, r, r / s, s, int(a.size), valid)


def d_intensity(field: ResidualField, params: TukeyParams = TukeyParams()) -> float:
    """Mean Tukey cost of the field's normalized residuals."""
    return float(np.mean(tukey_rho(field.normalized, params)))


@dataclass(frozen=True)
class HistogramConfig:
    bins: int = 64
    bone_threshold: float = 150.0
    range: tuple | None = None  # (lo, hi); default (bone_threshold, volume max)

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("histogram needs at least 2 bins")


@dataclass(frozen=True)
class HistogramPair:
    """Joint and marginal intensity distributions of paired samples."""

    joint: np.ndarray  # (bins, bins) probabilities, sums to 1
    range: tuple
    bins: int

    @property
    def marginal_fixed(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    @property
    def marginal_mirrored(self) -> np.ndarray:
        return self.joint.sum(axis=0)

    @staticmethod
    def from_samples(a, b, bins: int, lo: float, hi: float) -> "HistogramPair":
        if hi <= lo:
            raise ValueError("histogram range must have hi > lo")
        a = np.clip(a, lo, hi)
        b = np.clip(b, lo, hi)
        h, _, _ = np.histogram2d(a, b, bins=bins, range=[[lo, hi], [lo, hi]])
        joint = h / h.sum()
        joint.setflags(write=False)
        return HistogramPair(joint, (lo, hi), bins)


def _entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats; zero bins contribute nothing."""
    p = p[p > 0.0]
    return float(-(p * np.log(p)).sum())


def d_density(
    fixed: Volume,
    mirror: Reflection,
    domain: VoxelDomain,
    cfg: HistogramConfig = HistogramConfig(),
) -> float:
    """Negated normalized mutual information of paired bone intensities.

    Pairs are kept when the fixed-side intensity exceeds the bone threshold;
    both intensities are clipped into the histogram range so disagreement
    piles up in the edge bins instead of silently dropping pairs.  The value
    lies in [-2, -1], with -2 at perfect dependence.
    """
    a, b, _ = _paired_samples(fixed, mirror, domain)
    sel = a > cfg.bone_threshold
    if not np.any(sel):
        raise NoBoneVoxelsError(
            f"no paired voxel above bone threshold {cfg.bone_threshold}"
        )
    lo, hi = cfg.range if cfg.range is not None else (
        cfg.bone_threshold,
        float(fixed.data.max()),
    )
    pair = HistogramPair.from_samples(a[sel], b[sel], cfg.bins, lo, hi)
    h_joint = _entropy(pair.joint.ravel())
    if h_joint == 0.0:
        return -2.0  # a single occupied joint bin: perfectly dependent
    h_f = _entropy(pair.marginal_fixed)
    h_m = _entropy(pair.marginal_mirrored)
    return -(h_f + h_m) / h_joint


@dataclass(frozen=True)
class ObjectiveConfig:
    tukey: TukeyParams = field(default_factory=TukeyParams)
    lam: float = 0.5
    hist: HistogramConfig = field(default_factory=HistogramConfig)
    min_pairs: int = 1000
    side: str = "both"
    scale: float | None = None  # fix S instead of estimating it per plane

    def __post_init__(self):
        if self.lam < 0.0:
            raise ValueError("lambda must be nonnegative")


@dataclass(frozen=True)
class ObjectiveReport:
    d_intensity: float
    d_density: float
    combined: float
    lam: float
    n_pairs: int
    n_outliers: int
    scale: float

    def to_json(self) -> dict:
        return {
            "d_I": self.d_intensity,
            "d_D": self.d_density,
            "combined": self.combined,
            "lambda": self.lam,
            "n_pairs": self.n_pairs,
            "n_outliers": self.n_outliers,
            "S": self.scale,
        }

    @staticmethod
    def from_json(d: dict) -> "ObjectiveReport":
        return ObjectiveReport(
            d["d_I"], d["d_D"], d["combined"], d["lambda"],
            d["n_pairs"], d["n_outliers"], d["S"],
        )


def combined_objective(
    fixed: Volume,
    plane: SymPlane,
    cfg: ObjectiveConfig = ObjectiveConfig(),
    domain: VoxelDomain | None = None,
) -> ObjectiveReport:
    """Evaluate ``d_I + lambda * d_D`` for one plane.

    With ``lam == 0`` the histogram term is skipped entirely (reported as 0)
    so a pure-Tukey run is bit-identical to one with the regularizer removed.
    """
    if domain is None:
        domain = VoxelDomain(fixed)
    mirror = reflection_from_plane(plane)
    fld = residual_field(
        fixed, mirror, domain, min_pairs=cfg.min_pairs, side=cfg.side,
        plane=plane, scale=cfg.scale,
    )
    di = d_intensity(fld, cfg.tukey)
    n_out = int(np.count_nonzero(fld.normalized > cfg.tukey.c))
    if cfg.lam == 0.0:
        dd = 0.0
        combined = di
    else:
        sel = fld.fixed > cfg.hist.bone_threshold
        if not np.any(sel):
            raise NoBoneVoxelsError(
                f"no paired voxel above bone threshold {cfg.hist.bone_threshold}"
            )
        lo, hi = cfg.hist.range if cfg.hist.range is not None else (
            cfg.hist.bone_threshold,
            float(fixed.data.max()),
        )
        pair = HistogramPair.from_samples(
            fld.fixed[sel], fld.mirrored[sel], cfg.hist.bins, lo, hi
        )
        h_joint = _entropy(pair.joint.ravel())
        if h_joint == 0.0:
            dd = -2.0
        else:
            dd = -(_entropy(pair.marginal_fixed) + _entropy(pair.marginal_mirrored)) / h_joint
        combined = di + cfg.lam * dd
    return ObjectiveReport(di, dd, combined, cfg.lam, fld.n_pairs, n_out, fld.scale)


def ncc(a, b) -> float:
    """Pearson correlation of two equally sized arrays, flattened.

    Invariant under positive affine rescaling of either input; raises
    :class:`ConstantInputError` if either input has zero variance.
    """
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValueError("correlation needs at least 2 samples")
    x = x - x.mean()
    y = y - y.mean()
    sx = float(np.sqrt(np.dot(x, x)))
    sy = float(np.sqrt(np.dot(y, y)))
    if sx == 0.0 or sy == 0.0:
        raise ConstantInputError("correlation input has zero variance")
    return float(np.dot(x, y) / (sx * sy))
