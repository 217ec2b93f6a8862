"""Scalar 3D volumes: MetaImage I/O, trilinear sampling, gradients, domains.

A :class:`Volume` stores voxels as float32 in a C-ordered array of shape
``(nz, ny, nx)`` so that the flat layout is x-fastest, matching the raw file
convention.  ``dims`` is always reported as ``(nx, ny, nz)``.  Voxel (i, j, k)
is centred at ``origin + (i, j, k) * spacing`` in world millimetres; the
interpolable region is the axis-aligned hull of the voxel centres.
"""

import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np

_MET_TYPES = {
    "MET_UCHAR": np.uint8,
    "MET_SHORT": np.int16,
    "MET_FLOAT": np.float32,
}


@dataclass(frozen=True)
class Volume:
    """Immutable scalar volume on a regular axis-aligned grid."""

    data: np.ndarray  # shape (nz, ny, nx), float32
    spacing: np.ndarray  # (sx, sy, sz), mm
    origin: np.ndarray  # world position of voxel (0, 0, 0) centre, mm

    def __post_init__(self):
        d = np.ascontiguousarray(self.data, dtype=np.float32)
        if d.ndim != 3:
            raise ValueError(f"volume data must be 3D, got {d.ndim}D")
        sp = np.array(self.spacing, dtype=np.float64)
        og = np.array(self.origin, dtype=np.float64)
        if sp.shape != (3,) or og.shape != (3,):
            raise ValueError("spacing and origin must be 3-vectors")
        if np.any(sp <= 0.0):
            raise ValueError("spacing must be positive on every axis")
        for a in (d, sp, og):
            a.setflags(write=False)
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "spacing", sp)
        object.__setattr__(self, "origin", og)

    @property
    def dims(self) -> tuple:
        """Voxel counts (nx, ny, nz)."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def n_voxels(self) -> int:
        return int(self.data.size)

    def world_to_voxel(self, p):
        """Map world point(s) to continuous voxel coordinates (x, y, z)."""
        return (np.asarray(p, dtype=np.float64) - self.origin) / self.spacing

    def voxel_to_world(self, v):
        return np.asarray(v, dtype=np.float64) * self.spacing + self.origin

    @cached_property
    def voxel_centers(self) -> np.ndarray:
        """World coordinates of every voxel centre, shape (N, 3), x-fastest."""
        nx, ny, nz = self.dims
        zz, yy, xx = np.meshgrid(
            np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij"
        )
        v = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1).astype(np.float64)
        pts = v * self.spacing + self.origin
        pts.setflags(write=False)
        return pts

    def world_bounds(self) -> tuple:
        """(lower, upper) corners of the interpolable region."""
        lo = self.origin.copy()
        hi = self.origin + (np.array(self.dims) - 1) * self.spacing
        return lo, hi


def load_mhd(path) -> Volume:
    """Read a MetaImage header (.mhd) plus its raw data file.

    Supports the uncompressed subset: ``NDims = 3``, element types MET_UCHAR,
    MET_SHORT and MET_FLOAT, local byte order, data in a separate file named
    by ``ElementDataFile``.  Voxels are converted to float32.
    """
    path = os.fspath(path)
    header = {}
    with open(path, "r") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"malformed MetaImage header line: {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            header[key] = val
            if key == "ElementDataFile":
                break
    for req in ("NDims", "DimSize", "ElementType", "ElementDataFile"):
        if req not in header:
            raise ValueError(f"MetaImage header is missing {req!r}")
    if header.get("ObjectType", "Image") != "Image":
        raise ValueError(f"unsupported ObjectType {header['ObjectType']!r}")
    if int(header["NDims"]) != 3:
        raise ValueError(f"only NDims = 3 is supported, got {header['NDims']}")
    if header.get("CompressedData", "False").lower() == "true":
        raise ValueError("compressed MetaImage data is not supported")
    if header["ElementType"] not in _MET_TYPES:
        raise ValueError(f"unsupported ElementType {header['ElementType']!r}")
    if header.get("BinaryDataByteOrderMSB", "False").lower() == "true":
        raise ValueError("big-endian MetaImage data is not supported")

    dims = tuple(int(s) for s in header["DimSize"].split())
    if len(dims) != 3 or min(dims) <= 0:
        raise ValueError(f"bad DimSize {header['DimSize']!r}")
    spacing = [float(s) for s in header.get("ElementSpacing", "1 1 1").split()]
    origin = [float(s) for s in header.get("Offset", "0 0 0").split()]

    datafile = header["ElementDataFile"]
    if datafile in ("LOCAL", "LIST"):
        raise ValueError(f"ElementDataFile {datafile!r} is not supported")
    rawpath = os.path.join(os.path.dirname(path), datafile)
    dtype = _MET_TYPES[header["ElementType"]]
    expected = dims[0] * dims[1] * dims[2] * np.dtype(dtype).itemsize
    actual = os.path.getsize(rawpath)
    if actual != expected:
        raise ValueError(
            f"raw file {datafile!r} has {actual} bytes, expected {expected} "
            f"for DimSize {dims}"
        )
    raw = np.fromfile(rawpath, dtype=dtype)
    data = raw.reshape(dims[2], dims[1], dims[0])  # x-fastest on disk
    return Volume(data.astype(np.float32), spacing, origin)


def save_mhd(vol: Volume, path) -> None:
    """Write ``vol`` as a float32 MetaImage header + raw file pair.

    The raw file sits next to the header with the same stem and a ``.raw``
    suffix; a round trip through :func:`load_mhd` is bit-identical.
    """
    path = os.fspath(path)
    stem = os.path.splitext(os.path.basename(path))[0]
    rawname = stem + ".raw"
    nx, ny, nz = vol.dims
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "CompressedData = False",
        f"DimSize = {nx} {ny} {nz}",
        "ElementSpacing = " + " ".join(repr(float(s)) for s in vol.spacing),
        "Offset = " + " ".join(repr(float(o)) for o in vol.origin),
        "ElementType = MET_FLOAT",
        f"ElementDataFile = {rawname}",
    ]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    vol.data.tofile(os.path.join(os.path.dirname(path), rawname))


def sample_trilinear_many(vol: Volume, points: np.ndarray):
    """Trilinearly sample ``vol`` at world ``points`` (N, 3).

    Returns ``(values, valid)`` where ``valid`` marks points inside the
    interpolable region; values of invalid points are 0 and must be ignored
    by the caller (never substituted for real data).
    """
    v = vol.world_to_voxel(points)
    nx, ny, nz = vol.dims
    vx, vy, vz = v[:, 0], v[:, 1], v[:, 2]
    valid = (
        (vx >= 0.0) & (vx <= nx - 1)
        & (vy >= 0.0) & (vy <= ny - 1)
        & (vz >= 0.0) & (vz <= nz - 1)
    )

    # Clip everything into range and blend unconditionally; out-of-range rows
    # are zeroed afterwards, which is cheaper than compacting the array.
    hi = np.array([nx - 1, ny - 1, nz - 1], dtype=np.float64)
    vc = np.clip(v, 0.0, hi)
    i0 = np.minimum(vc.astype(np.int64), (np.array([nx, ny, nz]) - 2).clip(min=0))
    f = vc - i0
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]

    # Gather the 8 cell corners through flat indices; stepping by 0 along a
    # single-voxel axis clamps the neighbour without branching.
    flat = vol.data.ravel()
    dx = 1 if nx > 1 else 0
    dy = nx if ny > 1 else 0
    dz = nx * ny if nz > 1 else 0
    base = (i0[:, 2] * ny + i0[:, 1]) * nx + i0[:, 0]
    c000 = np.take(flat, base)
    c100 = np.take(flat, base + dx)
    c010 = np.take(flat, base + dy)
    c110 = np.take(flat, base + (dx + dy))
    c001 = np.take(flat, base + dz)
    c101 = np.take(flat, base + (dx + dz))
    c011 = np.take(flat, base + (dy + dz))
    c111 = np.take(flat, base + (dx + dy + dz))

    wx0, wx1 = 1.0 - fx, fx
    wy0, wy1 = 1.0 - fy, fy
    wz0, wz1 = 1.0 - fz, fz
    vals = (
        wz0 * (wy0 * (wx0 * c000 + wx1 * c100) + wy1 * (wx0 * c010 + wx1 * c110))
        + wz1 * (wy0 * (wx0 * c001 + wx1 * c101) + wy1 * (wx0 * c011 + wx1 * c111))
    )
    vals[~valid] = 0.0
    return vals, valid


def sample_trilinear(vol: Volume, point):
    """Sample a single world point; ``None`` outside the interpolable region."""
    vals, ok = sample_trilinear_many(vol, np.asarray(point, dtype=np.float64)[None, :])
    return float(vals[0]) if ok[0] else None


def gradient_magnitude(vol: Volume) -> Volume:
    """Voxelwise gradient magnitude in intensity units per millimetre.

    Central differences in the interior, one-sided at the boundary; requires
    at least two voxels along every axis.
    """
    if min(vol.dims) < 2:
        raise ValueError("gradient needs at least 2 voxels per axis")
    gz, gy, gx = np.gradient(
        vol.data.astype(np.float64), vol.spacing[2], vol.spacing[1], vol.spacing[0]
    )
    mag = np.sqrt(gx * gx + gy * gy + gz * gz)
    return Volume(mag.astype(np.float32), vol.spacing, vol.origin)


def downsample2(vol: Volume) -> Volume:
    """Halve the resolution with a 2x2x2 box filter.

    Odd trailing slices are dropped.  The output grid covers the same world
    region: spacing doubles and the origin moves to the centre of the first
    2x2x2 block.
    """
    nx, ny, nz = vol.dims
    if min(nx, ny, nz) < 2:
        raise ValueError("volume too small to downsample")
    mx, my, mz = (nx // 2) * 2, (ny // 2) * 2, (nz // 2) * 2
    d = vol.data[:mz, :my, :mx].astype(np.float64)
    d = d.reshape(mz // 2, 2, my // 2, 2, mx // 2, 2).mean(axis=(1, 3, 5))
    return Volume(
        d.astype(np.float32), vol.spacing * 2.0, vol.origin + vol.spacing * 0.5
    )


@dataclass(frozen=True)
class VoxelDomain:
    """Subset of a volume's voxels selected by intensity and/or index box.

    ``min_intensity`` keeps voxels with intensity strictly above the
    threshold; ``bbox`` is ``((x0, x1), (y0, y1), (z0, z1))`` in voxel
    indices, inclusive of ``x0`` and exclusive of ``x1``.  Each selected
    voxel appears exactly once.
    """

    volume: Volume
    min_intensity: float | None = None
    bbox: tuple | None = None

    @cached_property
    def mask(self) -> np.ndarray:
        nx, ny, nz = self.volume.dims
        m = np.ones((nz, ny, nx), dtype=bool)
        if self.min_intensity is not None:
            m &= self.volume.data > self.min_intensity
        if self.bbox is not None:
            (x0, x1), (y0, y1), (z0, z1) = self.bbox
            box = np.zeros_like(m)
            box[z0:z1, y0:y1, x0:x1] = True
            m &= box
        m.setflags(write=False)
        return m

    @cached_property
    def count(self) -> int:
        return int(self.mask.sum())

    @cached_property
    def points(self) -> np.ndarray:
        """World coordinates of the selected voxel centres, (N, 3)."""
        if self.min_intensity is None and self.bbox is None:
            return self.volume.voxel_centers
        pts = self.volume.voxel_centers[self.mask.ravel()]
        pts.setflags(write=False)
        return pts

    @cached_property
    def intensities(self) -> np.ndarray:
        vals = self.volume.data.ravel()[self.mask.ravel()].astype(np.float64)
        vals.setflags(write=False)
        return vals
