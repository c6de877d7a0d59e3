"""Raster primitives for the lane pipelines.

Frames are plain numpy arrays: ``uint8`` of shape ``(height, width)`` for
grayscale images and ``bool`` of the same shape for binary masks. Pixel
coordinates are x rightward, y downward, origin top-left, with pixel centers
on integers.

Canny non-maximum suppression and the Hough accumulator are written so that a
horizontally mirrored input produces exactly mirrored output; the lane
detectors rely on that for their left/right symmetry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from . import _kernels


class DimensionError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class SingularSystemError(ValueError):
    pass


@dataclass(frozen=True)
class RoiSpec:
    top_fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.top_fraction < 1.0:
            raise ParameterError(f"top_fraction must be in [0, 1), got {self.top_fraction}")


@dataclass(frozen=True)
class LineSegment:
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def dx(self) -> float:
        return self.x2 - self.x1

    @property
    def dy(self) -> float:
        return self.y2 - self.y1

    @property
    def length(self) -> float:
        return math.hypot(self.dx, self.dy)

    @property
    def is_vertical(self) -> bool:
        return abs(self.dx) < 1e-9

    @property
    def slope(self) -> float | None:
        """dy/dx, or None for a vertical segment."""
        if self.is_vertical:
            return None
        return self.dy / self.dx

    @property
    def abs_slope(self) -> float:
        return math.inf if self.is_vertical else abs(self.dy / self.dx)

    @property
    def midpoint(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def shifted(self, dx: float = 0.0, dy: float = 0.0) -> "LineSegment":
        return LineSegment(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)


def _check_gray(img: np.ndarray) -> None:
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D raster, got shape {img.shape}")


# --- preprocessing -----------------------------------------------------------

def to_grayscale(rgb) -> np.ndarray:
    """Luma conversion. Accepts an (H, W, 3) array or a tuple of three planes."""
    if isinstance(rgb, (tuple, list)):
        if len(rgb) != 3:
            raise DimensionError("expected three channels")
        planes = [np.asarray(c) for c in rgb]
        if any(p.shape != planes[0].shape for p in planes):
            raise DimensionError("channel planes differ in shape")
        r, g, b = (p.astype(np.float64) for p in planes)
    else:
        arr = np.asarray(rgb)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DimensionError(f"expected (H, W, 3), got {arr.shape}")
        r, g, b = (arr[..., i].astype(np.float64) for i in range(3))
    luma = np.floor(0.299 * r + 0.587 * g + 0.114 * b + 0.5)
    return np.clip(luma, 0, 255).astype(np.uint8)


def median_blur(img: np.ndarray, k: int) -> np.ndarray:
    """k x k median with edge replication at the borders."""
    _check_gray(img)
    if k < 1 or k % 2 == 0:
        raise ParameterError(f"median kernel must be odd and >= 1, got {k}")
    if k > min(img.shape):
        raise ParameterError(f"kernel {k} larger than image {img.shape}")
    if k == 1:
        return img.copy()
    # cv2.medianBlur replicates borders, matching the required policy
    return cv2.medianBlur(np.ascontiguousarray(img, dtype=np.uint8), k)


def threshold_white(img: np.ndarray, lo: int = 200, hi: int = 255) -> np.ndarray:
    if lo > hi:
        raise ParameterError(f"lo ({lo}) > hi ({hi})")
    _check_gray(img)
    return (img >= lo) & (img <= hi)


def crop_roi(mask: np.ndarray, roi: RoiSpec) -> tuple[np.ndarray, int]:
    """Drop the top rows of the frame; returns the crop and its row offset."""
    offset = int(math.floor(roi.top_fraction * mask.shape[0]))
    offset = min(offset, mask.shape[0] - 1)
    return mask[offset:], offset


@dataclass(frozen=True)
class PreprocessConfig:
    median_k: int = 5
    threshold_lo: int = 200
    threshold_hi: int = 255
    roi_top_fraction: float = 0.5
    blur: bool = True
    roi: bool = True


def preprocess(img: np.ndarray, cfg: PreprocessConfig = PreprocessConfig()) -> tuple[np.ndarray, int]:
    """Blur, threshold and crop one grayscale frame. Returns (mask, row_offset)."""
    if cfg.blur and cfg.median_k > 1:
        img = median_blur(img, cfg.median_k)
    mask = threshold_white(img, cfg.threshold_lo, cfg.threshold_hi)
    if not cfg.roi:
        return mask, 0
    return crop_roi(mask, RoiSpec(cfg.roi_top_fraction))


# --- Canny -------------------------------------------------------------------

_TAN_22_5 = math.tan(math.radians(22.5))
_TAN_67_5 = math.tan(math.radians(67.5))


def _gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D Gaussian with weights in multiples of 1/256.

    With 8-bit inputs every partial sum of the separable filter is a multiple
    of 2**-16 below 256, which float32 holds exactly; the smoothing is then
    independent of summation order, hence exactly mirror-symmetric.
    """
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    q = np.rint(g / g.sum() * 256.0)
    q[radius] += 256.0 - q.sum()
    nz = np.flatnonzero(q)
    r = max(radius - nz[0], nz[-1] - radius)
    return (q[radius - r:radius + r + 1] / 256.0).astype(np.float32)


def canny(img: np.ndarray, lo_thresh: float = 50.0, hi_thresh: float = 150.0,
          sigma: float = 1.4) -> np.ndarray:
    """Gaussian smoothing, 3x3 Sobel, 4-direction NMS, hysteresis.

    Bool masks are treated as 0/255 images. Magnitudes are L2 norms of the raw
    Sobel responses. All filtering is exact, so a mirrored input yields
    exactly the mirrored edge map.
    """
    if lo_thresh > hi_thresh:
        raise ParameterError(f"lo_thresh ({lo_thresh}) > hi_thresh ({hi_thresh})")
    _check_gray(img)
    if img.dtype == bool:
        src = img.view(np.uint8) * np.uint8(255)
    elif img.dtype == np.uint8:
        src = img
    else:
        raise DimensionError(f"canny expects uint8 or bool input, got {img.dtype}")
    if sigma > 0:
        k = _gaussian_kernel(sigma)
        f = cv2.sepFilter2D(src, cv2.CV_32F, k, k, borderType=cv2.BORDER_REPLICATE)
    else:
        f = src.astype(np.float32)
    cls = _kernels.sobel_nms(f, lo_thresh * lo_thresh, hi_thresh * hi_thresh, _TAN_22_5, _TAN_67_5)
    return _kernels.hysteresis(cls)


# --- probabilistic Hough -----------------------------------------------------

def _theta_tables(theta_res: float) -> tuple[np.ndarray, np.ndarray]:
    n = max(1, int(round(math.pi / theta_res)))
    thetas = np.arange(n) * theta_res
    cos, sin = np.cos(thetas), np.sin(thetas)
    if abs(n * theta_res - math.pi) < 1e-12:
        # make theta and pi - theta exact mirrors of each other
        for i in range(1, (n + 1) // 2):
            cos[n - i] = -cos[i]
            sin[n - i] = sin[i]
        if n % 2 == 0:
            cos[n // 2] = 0.0
    return cos, sin


def hough_segments(edges: np.ndarray, rho_res: float = 1.0, theta_res: float = math.pi / 180,
                   votes_min: int = 30, min_len: float = 25.0, max_gap: float = 10.0,
                   max_iter: int = 200) -> list[LineSegment]:
    """Extract line segments from an edge mask.

    Repeatedly takes the strongest accumulator cell, walks the edge pixels lying
    on that line, splits them into runs wherever consecutive pixels are more
    than ``max_gap`` apart, and emits every run at least ``min_len`` long.
    Pixels of emitted segments are withdrawn from the accumulator and the cell
    is retired. Coordinates are measured from the image center internally so
    the accumulator is exactly mirror-symmetric.
    """
    if rho_res <= 0 or theta_res <= 0:
        raise ParameterError("resolutions must be positive")
    h, w = edges.shape
    ys, xs = np.nonzero(edges)
    if len(xs) == 0:
        return []
    cx, cy = 0.5 * (w - 1), 0.5 * (h - 1)
    cos, sin = _theta_tables(theta_res)
    n_half = int(math.ceil(math.hypot(cx + 1, cy + 1) / rho_res)) + 1
    tol = max(1.0, 0.5 * rho_res + 0.5)
    raw = _kernels.hough(xs - cx, ys - cy, cos, sin, float(rho_res), n_half, int(votes_min),
                         float(min_len), float(max_gap), int(max_iter), tol)
    return [LineSegment(float(a) + cx, float(b) + cy, float(c) + cx, float(d) + cy)
            for a, b, c, d in raw]


# --- perspective -------------------------------------------------------------

def _collinear(a, b, c, tol=1e-9) -> bool:
    return abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])) < tol


def birdseye_warp(src_quad, dst_quad) -> np.ndarray:
    """3x3 homography mapping src_quad onto dst_quad (h33 fixed to 1)."""
    src = np.asarray(src_quad, dtype=np.float64).reshape(4, 2)
    dst = np.asarray(dst_quad, dtype=np.float64).reshape(4, 2)
    for quad in (src, dst):
        for i in range(4):
            a, b, c = (quad[j] for j in range(4) if j != i)
            if _collinear(a, b, c):
                raise SingularSystemError("degenerate quad: three collinear points")
    A = np.zeros((8, 8))
    rhs = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        A[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        A[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        rhs[2 * i], rhs[2 * i + 1] = u, v
    try:
        h = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    return np.append(h, 1.0).reshape(3, 3)


def apply_homography(H: np.ndarray, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    flat = pts.reshape(-1, 2)
    hom = flat @ H[:, :2].T + H[:, 2]
    out = hom[:, :2] / hom[:, 2:3]
    return out.reshape(pts.shape)


class WarpMap:
    """Precomputed nearest-neighbour inverse map for one homography.

    ``H`` maps source pixels to destination pixels; every destination pixel
    samples the source pixel that ``H^-1`` sends it to.
    """

    def __init__(self, H: np.ndarray, src_shape: tuple[int, int], dst_shape: tuple[int, int]):
        self.H = np.asarray(H, dtype=np.float64)
        self.src_shape = tuple(src_shape)
        self.dst_shape = tuple(dst_shape)
        hd, wd = dst_shape
        hs, ws = src_shape
        vv, uu = np.mgrid[0:hd, 0:wd]
        back = apply_homography(np.linalg.inv(self.H), np.stack([uu, vv], axis=-1).astype(np.float64))
        sx = np.floor(back[..., 0] + 0.5)
        sy = np.floor(back[..., 1] + 0.5)
        inside = (sx >= 0) & (sx < ws) & (sy >= 0) & (sy < hs) & np.isfinite(sx) & np.isfinite(sy)
        self._dst_ix = np.flatnonzero(inside.ravel())
        self._src_ix = (sy.ravel()[self._dst_ix] * ws + sx.ravel()[self._dst_ix]).astype(np.intp)

    def __call__(self, img: np.ndarray) -> np.ndarray:
        if img.shape != self.src_shape:
            raise DimensionError(f"warp expects {self.src_shape}, got {img.shape}")
        out = np.zeros(self.dst_shape[0] * self.dst_shape[1], dtype=img.dtype)
        out[self._dst_ix] = img.ravel()[self._src_ix]
        return out.reshape(self.dst_shape)


def warp_image(H: np.ndarray, img: np.ndarray, dst_shape: tuple[int, int] | None = None) -> np.ndarray:
    return WarpMap(H, img.shape, dst_shape or img.shape)(img)


# --- contours ----------------------------------------------------------------

@dataclass(frozen=True)
class Contour:
    """One 8-connected component, stored as its pixel coordinates."""

    xs: np.ndarray
    ys: np.ndarray

    def __len__(self) -> int:
        return len(self.xs)


def find_contours(mask: np.ndarray) -> list[Contour]:
    """8-connected components in scanline discovery order."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return []
    n, labels = cv2.connectedComponents(mask.view(np.uint8), connectivity=8)
    flat = labels.ravel()
    fg = np.flatnonzero(flat)
    lab = flat[fg]
    order = np.argsort(lab, kind="stable")  # stable keeps raster order inside a label
    fg, lab = fg[order], lab[order]
    starts = np.flatnonzero(np.r_[True, lab[1:] != lab[:-1]])
    groups = np.split(fg, starts[1:])
    groups.sort(key=lambda g: g[0])
    w = mask.shape[1]
    return [Contour(xs=g % w, ys=g // w) for g in groups]


def contour_area(c: Contour) -> int:
    if len(c) == 0:
        raise ValueError("empty contour")
    return len(c)


def contour_centroid(c: Contour) -> tuple[float, float]:
    if len(c) == 0:
        raise ValueError("empty contour")
    m00 = len(c)
    return float(c.xs.sum()) / m00, float(c.ys.sum()) / m00


# --- debug dumps -------------------------------------------------------------

def write_pgm(path, img: np.ndarray) -> None:
    """Binary P5 with maxval 255; masks are written as {0, 255}."""
    _check_gray(img)
    data = (img.astype(np.uint8) * 255) if img.dtype == bool else img.astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    pos += 1
    return np.frombuffer(raw[pos:pos + w * h], dtype=np.uint8).reshape(h, w).copy()


def dump_frame(directory, tick: int, stage: str, img: np.ndarray) -> Path:
    path = Path(directory) / f"frame_{tick}_{stage}.pgm"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(path, img)
    return path
