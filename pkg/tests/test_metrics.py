import math

import numpy as np
import pytest

from symplane.geometry import SymPlane, reflection_from_plane
from symplane.metrics import (
    ConstantInputError,
    DegeneratePlaneError,
    HistogramConfig,
    HistogramPair,
    NoBoneVoxelsError,
    ObjectiveConfig,
    ObjectiveReport,
    SCALE_FLOOR,
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
from symplane.volume import Volume, VoxelDomain

STANDARD = TukeyParams(variant=TukeyVariant.STANDARD)

# rho(1) for c = 4.685 via exact rational arithmetic:
# 1 * (1 - (1000/4685)^2)^2 = 702192044961/770829564961
RHO_AT_ONE = 0.91095629550292


def tukey(e, params=TukeyParams()):
    return tukey_rho(e, params)


def test_tukey_as_written_oracle_values():
    assert tukey(1.0) == pytest.approx(RHO_AT_ONE, abs=1e-13)
    assert tukey(4.685) == 0.0
    assert tukey(5.0) == 0.0  # zero beyond the cutoff
    assert tukey(0.0) == 0.0


def test_tukey_as_written_peaks_at_c_over_sqrt5():
    c = 4.685
    peak = c / math.sqrt(5.0)
    assert tukey(peak) == pytest.approx(16.0 * c / (25.0 * math.sqrt(5.0)), rel=1e-12)
    e = np.linspace(0.0, c, 2000)
    r = tukey(e)
    k = int(np.argmax(r))
    assert abs(e[k] - peak) < 0.01
    # rises before the peak, falls after it (redescending)
    assert np.all(np.diff(r[: k - 1]) > 0)
    assert np.all(np.diff(r[k + 1 :]) < 0)


def test_tukey_standard_saturates_at_c2_over_6():
    cap = 4.685 ** 2 / 6.0
    assert cap == pytest.approx(3.6582041666666667, abs=1e-15)
    assert tukey(4.685, STANDARD) == pytest.approx(cap, rel=1e-15)
    assert tukey(100.0, STANDARD) == pytest.approx(cap, rel=1e-15)
    e = np.linspace(0.0, 8.0, 1000)
    r = tukey(e, STANDARD)
    assert np.all(np.diff(r) >= 0.0)  # monotone, never redescends
    # quadratic near the origin: rho(e) ~ e^2/2
    assert tukey(0.01, STANDARD) == pytest.approx(0.5e-4, rel=1e-4)


def test_tukey_rejects_negative_and_matches_scalar(rng):
    with pytest.raises(ValueError):
        tukey(-0.1)
    e = rng.uniform(0, 8, size=100)
    vec = tukey(e)
    for i in (0, 17, 99):
        assert vec[i] == tukey(float(e[i]))
    with pytest.raises(ValueError):
        TukeyParams(c=0.0)


def test_residual_scale_oracle():
    # median 2 -> 2 / 0.6745
    assert residual_scale(np.array([1.0, 2.0, 3.0])) == pytest.approx(
        2.965159377316531, abs=1e-12)
    # zero median falls back to the mean of the nonzero residuals
    assert residual_scale(np.array([0.0, 0.0, 0.0, 5.0])) == pytest.approx(
        5.0 / 0.6745)
    # nothing but zeros: scale 1 so the cost is exactly 0
    assert residual_scale(np.zeros(10)) == 1.0
    # rounding dust counts as zero under zero_tol
    r = np.array([1e-9, 1e-9, 1e-9, 2.0, 3.0])
    assert residual_scale(r, zero_tol=1e-6) == pytest.approx(2.5 / 0.6745)


def _sym_volume(n=24, bright=900.0):
    """Small volume symmetric about x = (n-1)/2 with an off-center blob."""
    zz, yy, xx = np.meshgrid(*([np.arange(n)] * 3), indexing="ij")
    cx = (n - 1) / 2.0
    blob = bright * np.exp(
        -(((np.abs(xx - cx) - 6.0) ** 2) / 8.0
          + ((yy - cx) ** 2) / 18.0 + ((zz - cx) ** 2) / 18.0))
    return Volume(blob, (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))


def test_residual_field_pairs_and_fixed_scale():
    vol = _sym_volume()
    plane = SymPlane.from_normal_offset((1, 0, 0), 11.5)
    mirror = reflection_from_plane(plane)
    dom = VoxelDomain(vol)

    fld = residual_field(vol, mirror, dom, min_pairs=10)
    assert fld.n_pairs == dom.count  # every mirrored point stays in bounds
    assert fld.valid.all()
    # symmetric volume: residuals at the true plane are rounding noise, so
    # the scale lands on its floor instead of collapsing to dust size
    assert fld.residuals.max() < 1e-3
    rng = float(vol.data.max() - vol.data.min())
    assert fld.scale == pytest.approx(SCALE_FLOOR * rng)

    fixed = residual_field(vol, mirror, dom, min_pairs=10, scale=2.0)
    assert fixed.scale == 2.0
    np.testing.assert_allclose(fixed.normalized, fixed.residuals / 2.0)
    with pytest.raises(ValueError):
        residual_field(vol, mirror, dom, min_pairs=10, scale=-1.0)


def test_residual_field_degenerate_plane_raises():
    vol = _sym_volume()
    # a plane far outside the volume mirrors everything out of bounds
    plane = SymPlane.from_normal_offset((1, 0, 0), 500.0)
    with pytest.raises(DegeneratePlaneError):
        residual_field(vol, reflection_from_plane(plane), VoxelDomain(vol))


def test_residual_field_positive_side_halves_domain():
    vol = _sym_volume()
    plane = SymPlane.from_normal_offset((1, 0, 0), 11.5)
    mirror = reflection_from_plane(plane)
    dom = VoxelDomain(vol)
    both = residual_field(vol, mirror, dom, min_pairs=10)
    pos = residual_field(vol, mirror, dom, min_pairs=10, side="positive",
                         plane=plane)
    assert pos.n_pairs == both.n_pairs // 2
    with pytest.raises(ValueError):
        residual_field(vol, mirror, dom, side="positive")  # plane missing
    with pytest.raises(ValueError):
        residual_field(vol, mirror, dom, side="negative")


def test_d_intensity_zero_at_true_plane_positive_off_plane():
    vol = _sym_volume()
    dom = VoxelDomain(vol)
    good = residual_field(
        vol, reflection_from_plane(SymPlane.from_normal_offset((1, 0, 0), 11.5)),
        dom, min_pairs=10)
    bad = residual_field(
        vol, reflection_from_plane(SymPlane.from_normal_offset((1, 0, 0), 8.0)),
        dom, min_pairs=10)
    assert d_intensity(good) == pytest.approx(0.0, abs=1e-8)
    assert d_intensity(bad) > 0.01


def test_d_density_bounds_on_random_fixtures(rng):
    vol = _sym_volume()
    dom = VoxelDomain(vol, min_intensity=0.5)
    cfg = HistogramConfig(bins=16, bone_threshold=150.0)
    for _ in range(25):
        plane = SymPlane(
            rng.uniform(math.pi / 3, 2 * math.pi / 3),
            rng.uniform(-0.5, 0.5),
            rng.uniform(9.0, 14.0),
        )
        v = d_density(vol, reflection_from_plane(plane), dom, cfg)
        assert -2.0 <= v <= -1.0


def test_d_density_prefers_true_plane():
    vol = _sym_volume()
    dom = VoxelDomain(vol, min_intensity=0.5)
    cfg = HistogramConfig(bins=16, bone_threshold=150.0)
    at_truth = d_density(
        vol, reflection_from_plane(SymPlane.from_normal_offset((1, 0, 0), 11.5)),
        dom, cfg)
    off = d_density(
        vol, reflection_from_plane(SymPlane.from_normal_offset((1, 0, 0), 9.0)),
        dom, cfg)
    assert at_truth < off


def test_d_density_requires_bone_pairs():
    vol = _sym_volume(bright=100.0)  # nothing reaches the default threshold
    dom = VoxelDomain(vol)
    plane = SymPlane.from_normal_offset((1, 0, 0), 11.5)
    with pytest.raises(NoBoneVoxelsError):
        d_density(vol, reflection_from_plane(plane), dom)


def test_histogram_pair_clips_into_range(rng):
    a = rng.uniform(-500, 3000, 400)
    b = rng.uniform(-500, 3000, 400)
    pair = HistogramPair.from_samples(a, b, bins=8, lo=150.0, hi=1500.0)
    assert pair.joint.sum() == pytest.approx(1.0)
    assert pair.joint.shape == (8, 8)
    np.testing.assert_allclose(pair.marginal_fixed.sum(), 1.0)
    with pytest.raises(ValueError):
        HistogramPair.from_samples(a, b, bins=8, lo=5.0, hi=5.0)
    with pytest.raises(ValueError):
        HistogramConfig(bins=1)


def test_combined_objective_report_and_lambda_zero():
    vol = _sym_volume()
    plane = SymPlane.from_normal_offset((1, 0, 0), 11.5)
    cfg = ObjectiveConfig(lam=0.5, min_pairs=10,
                          hist=HistogramConfig(bins=16, bone_threshold=150.0))
    rep = combined_objective(vol, plane, cfg)
    assert rep.combined == pytest.approx(rep.d_intensity + 0.5 * rep.d_density)
    assert rep.n_pairs == vol.n_voxels
    assert rep.n_outliers == 0
    rt = ObjectiveReport.from_json(rep.to_json())
    assert rt == rep

    pure = combined_objective(vol, plane, ObjectiveConfig(lam=0.0, min_pairs=10))
    assert pure.d_density == 0.0
    assert pure.combined == pure.d_intensity


def test_combined_objective_lambda_zero_needs_no_bone():
    vol = _sym_volume(bright=100.0)  # all below the bone threshold
    plane = SymPlane.from_normal_offset((1, 0, 0), 11.5)
    rep = combined_objective(vol, plane, ObjectiveConfig(lam=0.0, min_pairs=10))
    assert rep.combined == rep.d_intensity
    with pytest.raises(NoBoneVoxelsError):
        combined_objective(vol, plane, ObjectiveConfig(lam=0.5, min_pairs=10))


def test_combined_objective_rejects_negative_lambda():
    with pytest.raises(ValueError):
        ObjectiveConfig(lam=-0.1)


def test_ncc_affine_invariance_and_errors(rng):
    a = rng.normal(size=500)
    b = 0.3 * a + rng.normal(size=500)
    r = ncc(a, b)
    assert abs(ncc(a, 2.5 * b + 7.0) - r) <= 1e-12
    assert abs(ncc(0.1 * a - 3.0, b) - r) <= 1e-12
    assert ncc(a, a) == pytest.approx(1.0)
    assert ncc(a, -a) == pytest.approx(-1.0)
    assert -1.0 <= r <= 1.0
    with pytest.raises(ConstantInputError):
        ncc(a, np.zeros(500))
    with pytest.raises(ValueError):
        ncc(a, a[:10])
