import numpy as np
import pytest

from symplane.volume import (
    Volume,
    VoxelDomain,
    downsample2,
    gradient_magnitude,
    load_mhd,
    sample_trilinear,
    sample_trilinear_many,
    save_mhd,
)


def _linear_volume(dims=(7, 6, 5), spacing=(1.0, 2.0, 0.5), origin=(-3.0, 1.0, 2.0)):
    """f(x, y, z) = 2x + 3y - z + 5 sampled on the grid (world coords)."""
    nx, ny, nz = dims
    zz, yy, xx = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx),
                             indexing="ij")
    x = origin[0] + xx * spacing[0]
    y = origin[1] + yy * spacing[1]
    z = origin[2] + zz * spacing[2]
    return Volume(2 * x + 3 * y - z + 5, spacing, origin)


def test_volume_validates_inputs():
    with pytest.raises(ValueError):
        Volume(np.zeros((4, 4)), (1, 1, 1), (0, 0, 0))
    with pytest.raises(ValueError):
        Volume(np.zeros((4, 4, 4)), (1, 0, 1), (0, 0, 0))
    v = Volume(np.zeros((2, 3, 4)), (1, 1, 1), (0, 0, 0))
    assert v.dims == (4, 3, 2)
    assert v.n_voxels == 24


def test_world_voxel_mapping_roundtrip(rng):
    vol = _linear_volume()
    pts = rng.uniform(-5, 5, size=(20, 3))
    np.testing.assert_allclose(vol.voxel_to_world(vol.world_to_voxel(pts)), pts)


def test_mhd_roundtrip_is_bit_identical(tmp_path, rng):
    data = rng.normal(size=(5, 6, 7)).astype(np.float32)
    vol = Volume(data, (0.5, 1.0, 2.0), (-1.0, 3.5, 0.25))
    save_mhd(vol, tmp_path / "vol.mhd")
    back = load_mhd(tmp_path / "vol.mhd")
    assert back.data.tobytes() == vol.data.tobytes()
    np.testing.assert_array_equal(back.spacing, vol.spacing)
    np.testing.assert_array_equal(back.origin, vol.origin)


def test_mhd_reads_short_elements(tmp_path):
    raw = np.arange(24, dtype=np.int16).reshape(2, 3, 4)
    (tmp_path / "v.raw").write_bytes(raw.tobytes())
    (tmp_path / "v.mhd").write_text(
        "NDims = 3\nDimSize = 4 3 2\nElementType = MET_SHORT\n"
        "ElementDataFile = v.raw\n"
    )
    vol = load_mhd(tmp_path / "v.mhd")
    assert vol.data.dtype == np.float32
    np.testing.assert_array_equal(vol.data, raw.astype(np.float32))
    np.testing.assert_array_equal(vol.spacing, [1, 1, 1])  # defaulted


def test_mhd_rejects_bad_headers(tmp_path):
    (tmp_path / "v.raw").write_bytes(b"\x00" * 8)
    def write(text):
        (tmp_path / "v.mhd").write_text(text)
        return tmp_path / "v.mhd"

    with pytest.raises(ValueError, match="missing"):
        load_mhd(write("NDims = 3\nDimSize = 2 2 2\nElementDataFile = v.raw\n"))
    with pytest.raises(ValueError, match="NDims"):
        load_mhd(write("NDims = 2\nDimSize = 2 2\nElementType = MET_FLOAT\n"
                       "ElementDataFile = v.raw\n"))
    with pytest.raises(ValueError, match="compressed"):
        load_mhd(write("NDims = 3\nDimSize = 2 2 2\nCompressedData = True\n"
                       "ElementType = MET_FLOAT\nElementDataFile = v.raw\n"))
    with pytest.raises(ValueError, match="bytes"):
        load_mhd(write("NDims = 3\nDimSize = 2 2 2\nElementType = MET_FLOAT\n"
                       "ElementDataFile = v.raw\n"))  # 8 bytes != 32


def test_trilinear_exact_at_voxel_centers(rng):
    data = rng.normal(size=(4, 5, 6)).astype(np.float32)
    vol = Volume(data, (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
    vals, ok = sample_trilinear_many(vol, vol.voxel_centers)
    assert ok.all()
    np.testing.assert_allclose(vals, vol.data.ravel(), rtol=1e-6)


def test_trilinear_reproduces_linear_fields(rng):
    vol = _linear_volume()
    lo, hi = vol.world_bounds()
    pts = rng.uniform(lo, hi, size=(200, 3))
    vals, ok = sample_trilinear_many(vol, pts)
    assert ok.all()
    expect = 2 * pts[:, 0] + 3 * pts[:, 1] - pts[:, 2] + 5
    np.testing.assert_allclose(vals, expect, rtol=1e-5, atol=1e-4)


def test_trilinear_marks_outside_points_invalid():
    vol = _linear_volume()
    lo, hi = vol.world_bounds()
    outside = np.array([lo - 0.01, hi + 0.01, [1e6, 0, 0]])
    vals, ok = sample_trilinear_many(vol, outside)
    assert not ok.any()
    np.testing.assert_array_equal(vals, 0.0)
    assert sample_trilinear(vol, hi + 1.0) is None
    inside = sample_trilinear(vol, (lo + hi) / 2)
    assert inside is not None


def test_gradient_magnitude_of_ramp_is_constant():
    vol = _linear_volume()
    g = gradient_magnitude(vol)
    # |grad| = |(2, 3, -1)| everywhere, including one-sided boundaries
    np.testing.assert_allclose(g.data, np.sqrt(14.0), rtol=1e-5)
    with pytest.raises(ValueError):
        gradient_magnitude(Volume(np.zeros((1, 4, 4)), (1, 1, 1), (0, 0, 0)))


def test_downsample2_box_filter_and_grid():
    vol = _linear_volume(dims=(6, 6, 6), spacing=(1.0, 1.0, 1.0), origin=(0, 0, 0))
    half = downsample2(vol)
    assert half.dims == (3, 3, 3)
    np.testing.assert_array_equal(half.spacing, [2, 2, 2])
    np.testing.assert_array_equal(half.origin, [0.5, 0.5, 0.5])
    # averaging a linear field equals sampling it at the block centres
    zz, yy, xx = np.meshgrid(*([np.arange(3)] * 3), indexing="ij")
    x, y, z = 0.5 + 2 * xx, 0.5 + 2 * yy, 0.5 + 2 * zz
    np.testing.assert_allclose(half.data, 2 * x + 3 * y - z + 5, rtol=1e-6)

    odd = Volume(np.zeros((5, 5, 5)), (1, 1, 1), (0, 0, 0))
    assert downsample2(odd).dims == (2, 2, 2)


def test_voxel_domain_selects_by_intensity_and_box():
    data = np.zeros((4, 4, 4), dtype=np.float32)
    data[1, 2, 3] = 10.0
    data[2, 2, 2] = 7.0
    vol = Volume(data, (1, 1, 1), (0, 0, 0))

    full = VoxelDomain(vol)
    assert full.count == 64
    np.testing.assert_array_equal(full.points, vol.voxel_centers)

    bright = VoxelDomain(vol, min_intensity=5.0)
    assert bright.count == 2
    assert sorted(bright.intensities.tolist()) == [7.0, 10.0]

    strict = VoxelDomain(vol, min_intensity=7.0)  # strictly above
    assert strict.count == 1

    boxed = VoxelDomain(vol, bbox=((0, 4), (0, 4), (0, 2)))
    assert boxed.count == 32
    both = VoxelDomain(vol, min_intensity=5.0, bbox=((0, 4), (0, 4), (0, 2)))
    assert both.count == 1  # only the voxel at z=1 survives
    np.testing.assert_array_equal(both.points[0], [3.0, 2.0, 1.0])
