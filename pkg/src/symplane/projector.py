"""DRR rendering, edge-map extraction, and X-ray overlay composition.

A DRR (digitally reconstructed radiograph) is produced by marching fixed
steps along each source-to-pixel ray, summing trilinear volume samples, and
scaling by the step length.  Edge maps come from a Sobel detector with a
relative threshold and one non-maximum-suppression pass; overlays paint the
edge pixels in a solid color on top of the grayscale X-ray.

All rays are integrated with vectorized, reduction-order-fixed numpy code,
so renders are deterministic regardless of threading configuration.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraPose, RigidTransform
from .metrics import ConstantInputError
from .volume import Volume, gradient_magnitude, sample_trilinear_many

__all__ = [
    "Image2D",
    "OverlaySpec",
    "render_drr",
    "render_gradient_drr",
    "extract_edges",
    "compose_overlay",
    "downsample2_image",
    "make_camera",
    "write_pgm",
    "read_pgm",
    "write_png",
    "read_png",
]


@dataclass(frozen=True)
class Image2D:
    """A scalar detector image: row-major float32 ``data`` of shape (H, W).

    ``pixel_spacing`` is (du, dv) in millimetres; ``dims`` mirrors the
    camera convention of (width, height).
    """

    data: np.ndarray
    pixel_spacing: tuple = (1.0, 1.0)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 2 or d.size == 0:
            raise ValueError("image data must be a non-empty 2D array")
        du, dv = float(self.pixel_spacing[0]), float(self.pixel_spacing[1])
        if du <= 0.0 or dv <= 0.0:
            raise ValueError("pixel spacing must be positive")
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "pixel_spacing", (du, dv))

    @property
    def dims(self) -> tuple:
        return (self.data.shape[1], self.data.shape[0])


@dataclass(frozen=True)
class OverlaySpec:
    """Parameters for edge extraction and overlay painting."""

    edge_threshold: float = 0.2
    edge_color: tuple = (0, 255, 0)
    background: Image2D | None = None

    def __post_init__(self):
        if not (0.0 < self.edge_threshold < 1.0):
            raise ValueError("edge_threshold must lie in (0, 1)")
        c = tuple(int(v) for v in self.edge_color)
        if len(c) != 3 or any(v < 0 or v > 255 for v in c):
            raise ValueError("edge_color must be three channel values in 0..255")
        object.__setattr__(self, "edge_color", c)


def _ray_box_range(src: np.ndarray, unit: np.ndarray, lo, hi):
    """Entry/exit distances of rays from ``src`` against an axis box.

    Returns (t0, t1); rays that miss the box get t0 > t1.
    """
    t0 = np.zeros(len(unit))
    t1 = np.full(len(unit), np.inf)
    for ax in range(3):
        u = unit[:, ax]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (lo[ax] - src[ax]) / u
            b = (hi[ax] - src[ax]) / u
        near = np.minimum(a, b)
        far = np.maximum(a, b)
        # A ray parallel to this slab either always satisfies it or never does.
        par = np.abs(u) < 1e-12
        inside = (src[ax] >= lo[ax]) & (src[ax] <= hi[ax])
        near[par] = np.where(inside, -np.inf, np.inf)
        far[par] = np.where(inside, np.inf, -np.inf)
        t0 = np.maximum(t0, near)
        t1 = np.minimum(t1, far)
    return t0, t1


def render_drr(
    vol: Volume,
    cam: CameraPose,
    step_mm: float | None = None,
    min_intensity: float | None = 0.0,
) -> Image2D:
    """Ray-cast ``vol`` onto the camera's detector.

    Each pixel receives ``step_mm * sum(samples)`` over equidistant trilinear
    samples between the ray's entry into and exit from the volume's
    interpolable box.  Samples below ``min_intensity`` contribute nothing
    (pass ``None`` to integrate raw values, e.g. for linearity tests); the
    default of 0 suppresses air and keeps water and denser tissue.

    Raises ``ValueError`` when the source sits inside the volume box or when
    ``step_mm`` exceeds the smallest voxel spacing.
    """
    if step_mm is None:
        step_mm = 0.5 * float(np.min(vol.spacing))
    step_mm = float(step_mm)
    if step_mm <= 0.0 or step_mm > float(np.min(vol.spacing)):
        raise ValueError("step_mm must be positive and at most the smallest spacing")

    lo, hi = vol.world_bounds()
    src = cam.source_world
    if np.all(src >= lo) and np.all(src <= hi):
        raise ValueError("X-ray source lies inside the volume")

    w, h = cam.det_dims
    pix = cam.pixel_centers_world().reshape(-1, 3)
    d = pix - src
    length = np.linalg.norm(d, axis=1)
    unit = d / length[:, None]

    t0, t1 = _ray_box_range(src, unit, lo, hi)
    t0 = np.maximum(t0, 0.0)
    span = np.maximum(t1 - t0, 0.0)
    n_steps = int(np.ceil(span.max() / step_mm)) if span.max() > 0.0 else 0

    acc = np.zeros(len(unit))
    for k in range(n_steps):
        t = t0 + (k + 0.5) * step_mm
        live = t < t1
        if not live.any():
            break
        pts = src + unit * t[:, None]
        vals, ok = sample_trilinear_many(vol, pts)
        keep = live & ok
        if min_intensity is not None:
            keep &= vals >= min_intensity
        acc += np.where(keep, vals, 0.0)
    return Image2D((acc * step_mm).reshape(h, w), cam.pixel_spacing)


def render_gradient_drr(
    vol: Volume,
    cam: CameraPose,
    step_mm: float | None = None,
    min_intensity: float | None = 0.0,
) -> Image2D:
    """DRR of the volume's gradient magnitude: bright along bone silhouettes."""
    return render_drr(gradient_magnitude(vol), cam, step_mm, min_intensity)


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def _convolve3(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    p = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img, dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            k = kernel[dy, dx]
            if k != 0.0:
                out += k * p[dy : dy + img.shape[0], dx : dx + img.shape[1]]
    return out


def extract_edges(img: Image2D, spec: OverlaySpec = OverlaySpec()) -> Image2D:
    """Binary edge map: Sobel magnitude, relative threshold, thinning.

    The threshold is ``spec.edge_threshold`` times the maximum gradient
    magnitude.  Thinning keeps a pixel only where its magnitude beats the
    neighbour ahead along the gradient direction and at least ties the one
    behind, so a two-pixel-wide ideal step keeps exactly one line.
    """
    a = img.data.astype(np.float64)
    if np.ptp(a) == 0.0:
        raise ConstantInputError("cannot extract edges from a constant image")
    gx = _convolve3(a, _SOBEL_X)
    gy = _convolve3(a, _SOBEL_X.T)
    mag = np.hypot(gx, gy)
    thr = spec.edge_threshold * mag.max()

    # Quantize gradient direction into 4 bins; pick the "ahead" neighbour as
    # the one the gradient points toward.
    ang = np.mod(np.degrees(np.arctan2(gy, gx)), 360.0)
    offsets = np.array(
        [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)]
    )
    octant = ((ang + 22.5) // 45.0).astype(int) % 8
    pad = np.pad(mag, 1, mode="constant")
    h, w = mag.shape
    ahead = np.zeros_like(mag)
    behind = np.zeros_like(mag)
    for b in range(8):
        m = octant == b
        if not m.any():
            continue
        dy, dx = offsets[b]
        fwd = pad[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        bwd = pad[1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        ahead[m] = fwd[m]
        behind[m] = bwd[m]
    keep = (mag >= thr) & (mag > ahead) & (mag >= behind)
    return Image2D(keep.astype(np.float32), img.pixel_spacing)


def compose_overlay(
    xray: Image2D, edges: Image2D, spec: OverlaySpec = OverlaySpec()
) -> np.ndarray:
    """Paint ``edges`` in ``spec.edge_color`` over the normalized X-ray.

    Returns an (H, W, 3) uint8 array: the X-ray min-max scaled to 0..255 and
    replicated across channels, with nonzero edge pixels replaced by the
    edge color.  Raises ``ValueError`` on dimension mismatch.
    """
    if xray.data.shape != edges.data.shape:
        raise ValueError(
            f"X-ray {xray.data.shape} and edge map {edges.data.shape} differ in shape"
        )
    a = xray.data.astype(np.float64)
    span = a.max() - a.min()
    if span > 0.0:
        gray = np.round((a - a.min()) * (255.0 / span)).astype(np.uint8)
    else:
        gray = np.zeros_like(a, dtype=np.uint8)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    rgb[edges.data != 0.0] = np.array(spec.edge_color, dtype=np.uint8)
    return rgb


def downsample2_image(img: Image2D) -> Image2D:
    """Halve resolution with a 2x2 box filter; odd trailing rows/cols drop."""
    h, w = img.data.shape
    if min(h, w) < 2:
        raise ValueError("image too small to downsample")
    mh, mw = (h // 2) * 2, (w // 2) * 2
    d = img.data[:mh, :mw].astype(np.float64)
    d = d.reshape(mh // 2, 2, mw // 2, 2).mean(axis=(1, 3))
    return Image2D(
        d.astype(np.float32),
        (img.pixel_spacing[0] * 2.0, img.pixel_spacing[1] * 2.0),
    )


def make_camera(
    vol: Volume,
    sdd: float = 1000.0,
    sid: float = 700.0,
    det_dims: tuple = (128, 128),
    pixel_spacing: tuple = (1.0, 1.0),
    view: str = "ap",
) -> CameraPose:
    """Camera looking through the volume centre along a cardinal direction.

    ``view="ap"`` places the principal axis along world +y (image x = world
    x, image y = world -z, i.e. head-up); ``view="lateral"`` looks along
    world +x.  The isocenter coincides with the volume centre.
    """
    axes = {
        "ap": np.array([[1.0, 0, 0], [0, 0, -1.0], [0, 1.0, 0]]),
        "lateral": np.array([[0, 1.0, 0], [0, 0, -1.0], [1.0, 0, 0]]),
    }
    if view not in axes:
        raise ValueError(f"unknown view {view!r}; expected 'ap' or 'lateral'")
    rot = axes[view]
    lo, hi = vol.world_bounds()
    center = (lo + hi) / 2.0
    t = np.array([0.0, 0.0, sid]) - rot @ center
    return CameraPose(sdd, sid, det_dims, pixel_spacing, RigidTransform(rot, t))


# ---------------------------------------------------------------------------
# Image file I/O: 16-bit binary PGM for scalar images, 8-bit PNG for overlays.
# ---------------------------------------------------------------------------


def write_pgm(img: Image2D, path) -> None:
    """Save as binary 16-bit PGM, min-max scaled to 0..65535.

    The pixel spacing rides along in a comment so :func:`read_pgm` can
    restore it; raw intensities are not preserved (NCC-style uses are
    unaffected by the affine rescale).
    """
    a = img.data.astype(np.float64)
    span = a.max() - a.min()
    if span > 0.0:
        q = np.round((a - a.min()) * (65535.0 / span)).astype(np.uint16)
    else:
        q = np.zeros_like(a, dtype=np.uint16)
    h, w = q.shape
    du, dv = img.pixel_spacing
    header = f"P5\n# spacing {du!r} {dv!r}\n{w} {h}\n65535\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(q.astype(">u2").tobytes())


def read_pgm(path) -> Image2D:
    """Read a binary PGM (8- or 16-bit) written by this package or others."""
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(b"P5"):
        raise ValueError("not a binary PGM file")
    pos = 2
    fields = []
    spacing = (1.0, 1.0)
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            end = blob.index(b"\n", pos)
            comment = blob[pos + 1 : end].decode("ascii", "replace").split()
            if len(comment) == 3 and comment[0] == "spacing":
                spacing = (float(comment[1]), float(comment[2]))
            pos = end + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    dt = ">u2" if maxval > 255 else np.uint8
    n = w * h
    data = np.frombuffer(blob, dtype=dt, count=n, offset=pos)
    if data.size != n:
        raise ValueError("PGM pixel data is truncated")
    return Image2D(data.reshape(h, w).astype(np.float32), spacing)


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def write_png(arr: np.ndarray, path) -> None:
    """Write an 8-bit grayscale (H, W) or RGB (H, W, 3) PNG.

    Scanlines use filter type 0 and a fixed zlib level, so identical arrays
    produce byte-identical files — suitable for golden-file tests.
    """
    a = np.asarray(arr)
    if a.dtype != np.uint8:
        raise ValueError("PNG writer expects uint8 data")
    if a.ndim == 2:
        color = 0
        rows = a[:, :, None]
    elif a.ndim == 3 and a.shape[2] == 3:
        color = 2
        rows = a
    else:
        raise ValueError("expected (H, W) or (H, W, 3) array")
    h, w = a.shape[:2]
    ihdr = struct.pack(">IIBBBBB", w, h, 8, color, 0, 0, 0)
    raw = b"".join(b"\x00" + rows[y].tobytes() for y in range(h))
    payload = zlib.compress(raw, 6)
    with open(path, "wb") as f:
        f.write(b"\x89PNG\r\n\x1a\n")
        f.write(_png_chunk(b"IHDR", ihdr))
        f.write(_png_chunk(b"IDAT", payload))
        f.write(_png_chunk(b"IEND", b""))


def _unfilter_scanlines(raw: bytes, w: int, h: int, nch: int) -> np.ndarray:
    stride = w * nch
    out = np.zeros((h, stride), dtype=np.uint8)
    pos = 0
    prev = np.zeros(stride, dtype=np.int32)
    for y in range(h):
        ftype = raw[pos]
        line = np.frombuffer(raw, np.uint8, stride, pos + 1).astype(np.int32)
        pos += 1 + stride
        if ftype == 0:
            cur = line
        elif ftype == 2:  # Up
            cur = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):  # Sub / Average / Paeth need a running pass
            cur = np.zeros(stride, dtype=np.int32)
            for i in range(stride):
                left = cur[i - nch] if i >= nch else 0
                up = prev[i]
                ul = prev[i - nch] if i >= nch else 0
                if ftype == 1:
                    pred = left
                elif ftype == 3:
                    pred = (left + up) // 2
                else:
                    p = left + up - ul
                    pa, pb, pc = abs(p - left), abs(p - up), abs(p - ul)
                    pred = left if pa <= pb and pa <= pc else (up if pb <= pc else ul)
                cur[i] = (line[i] + pred) & 0xFF
        else:
            raise ValueError(f"unsupported PNG filter type {ftype}")
        out[y] = cur.astype(np.uint8)
        prev = cur
    return out


def read_png(path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB PNG into a uint8 array."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != b"\x89PNG\r\n\x1a\n":
        raise ValueError("not a PNG file")
    pos = 8
    idat = b""
    w = h = None
    color = None
    while pos < len(blob):
        (ln,) = struct.unpack(">I", blob[pos : pos + 4])
        tag = blob[pos + 4 : pos + 8]
        payload = blob[pos + 8 : pos + 8 + ln]
        pos += 12 + ln
        if tag == b"IHDR":
            w, h, depth, color, comp, filt, interlace = struct.unpack(
                ">IIBBBBB", payload
            )
            if depth != 8 or color not in (0, 2) or interlace != 0:
                raise ValueError("only non-interlaced 8-bit gray/RGB PNGs supported")
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if w is None:
        raise ValueError("PNG is missing its header chunk")
    nch = 1 if color == 0 else 3
    raw = zlib.decompress(idat)
    flat = _unfilter_scanlines(raw, w, h, nch)
    return flat.reshape(h, w) if nch == 1 else flat.reshape(h, w, 3)
