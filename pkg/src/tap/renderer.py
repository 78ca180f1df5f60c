"""Ground-truth view images: depth-shaded point splats under parallel projection."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tap import geometry
from tap.errors import ContractError, DataError, FormatError

FG_THRESHOLD = 1.0 - 1.0 / 255.0
SHADE_NEAR = 0.15
SHADE_RANGE = 0.7


@dataclass
class ViewImage:
    pixels: np.ndarray  # H x W x 3, values in [0, 1]

    @property
    def fg_mask(self) -> np.ndarray:
        return fg_mask(self.pixels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]


def fg_mask(pixels: np.ndarray) -> np.ndarray:
    """True where any channel is darker than the white threshold."""
    return np.any(np.asarray(pixels) < FG_THRESHOLD, axis=-1)


def default_splat_radius(H: int) -> int:
    # radius 2 at 224 px, scaled with resolution, never below one pixel
    return max(1, int(round(2 * H / 224)))


def disc_offsets(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    di, dj = np.meshgrid(r, r, indexing="ij")
    keep = di**2 + dj**2 <= radius**2
    return np.stack([di[keep], dj[keep]], axis=1)


def splat_centers(points: np.ndarray, R: np.ndarray, H: int, W: int, margin: float = geometry.DEFAULT_MARGIN):
    """Integer pixel centers and depths of every point (rows follow ``u``)."""
    p_rot = geometry.rotate_points(points, R)
    pp = geometry.fit_projection(p_rot, H, W, margin)
    uvd = geometry.project_to_grid(p_rot, pp)
    rows = np.floor(uvd[:, 0] + 0.5).astype(np.int64)
    cols = np.floor(uvd[:, 1] + 0.5).astype(np.int64)
    return np.clip(rows, 0, H - 1), np.clip(cols, 0, W - 1), uvd[:, 2]


def depth_shade(depth: np.ndarray) -> np.ndarray:
    lo, hi = depth.min(), depth.max()
    z = (depth - lo) / (hi - lo) if hi > lo else np.zeros_like(depth)
    return SHADE_NEAR + SHADE_RANGE * z


def render(points: np.ndarray, R: np.ndarray, H: int, W: int, splat_radius: int | None = None,
           margin: float = geometry.DEFAULT_MARGIN) -> ViewImage:
    """Rasterize a cloud seen from pose ``R``.

    Each point covers a disc of pixels; the nearest point (smallest depth,
    then lowest index) wins each pixel. Untouched pixels stay white.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise DataError("render: empty point cloud")
    if H < 8 or W < 8:
        raise ContractError(f"render: image must be at least 8x8, got {H}x{W}")
    if splat_radius is None:
        splat_radius = default_splat_radius(H)
    if splat_radius < 0:
        raise ContractError(f"render: negative splat radius {splat_radius}")
    rows, cols, depth = splat_centers(points, R, H, W, margin)
    shade = depth_shade(depth)

    offs = disc_offsets(splat_radius)
    n = points.shape[0]
    pr = (rows[:, None] + offs[None, :, 0]).reshape(-1)
    pc = (cols[:, None] + offs[None, :, 1]).reshape(-1)
    pid = np.repeat(np.arange(n), len(offs))
    ok = (pr >= 0) & (pr < H) & (pc >= 0) & (pc < W)
    pix = pr[ok] * W + pc[ok]
    pid = pid[ok]
    order = np.lexsort((pid, depth[pid], pix))
    pix, pid = pix[order], pid[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]

    img = np.ones(H * W)
    img[pix[first]] = shade[pid[first]]
    img = img.reshape(H, W)
    return ViewImage(np.repeat(img[:, :, None], 3, axis=2))


# --------------------------------------------------------------------------
# binary PPM (P6) files

_PPM_HEADER = re.compile(rb"P6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def save_image(path, image: ViewImage | np.ndarray) -> None:
    pixels = image.pixels if isinstance(image, ViewImage) else np.asarray(image)
    H, W, _ = pixels.shape
    q = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(f"P6\n{W} {H}\n255\n".encode("ascii") + q.tobytes())


def load_image(path) -> ViewImage:
    raw = Path(path).read_bytes()
    m = _PPM_HEADER.match(raw)
    if not m:
        raise FormatError(f"{path}: not a binary P6 pixmap", 0)
    W, H, maxval = (int(x) for x in m.groups())
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}", m.start(3))
    start = m.end()
    expected = W * H * 3
    if len(raw) - start != expected:
        raise FormatError(f"{path}: payload has {len(raw) - start} bytes, header {W}x{H} needs {expected}", start)
    q = np.frombuffer(raw, dtype=np.uint8, offset=start).reshape(H, W, 3)
    return ViewImage(q.astype(np.float64) / 255.0)
