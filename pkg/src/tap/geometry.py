"""Poses, parallel projection onto a grid, and per-cell optical lines.

Conventions used throughout the package:

* a pose ``R`` maps canonical coordinates to view coordinates, ``x' = R x``;
* the viewer looks along ``+z'`` (smaller ``z'`` is nearer);
* grid coordinate ``u`` follows ``x'`` and indexes rows, ``v`` follows ``y'``
  and indexes columns;
* one grid size ``g`` is shared by both axes so objects keep their aspect.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tap.errors import ContractError, DataError, PoseError

ORTHO_TOL = 1e-9
MIN_GRID_SIZE = 1e-9
DEFAULT_MARGIN = 0.1
DEFAULT_ELEVATION = 30.0


def check_pose(R: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise PoseError(f"pose must be 3x3, got {R.shape}")
    if not np.allclose(R.T @ R, np.eye(3), atol=tol, rtol=0) or abs(np.linalg.det(R) - 1.0) > tol:
        raise PoseError("pose is not a proper rotation (R^T R != I or det != +1)")
    return R


def rot_x(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(deg: float) -> np.ndarray:
    c, s = np.cos(np.radians(deg)), np.sin(np.radians(deg))
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def compose(*poses: np.ndarray) -> np.ndarray:
    """``compose(R2, R1)`` applies ``R1`` first, then ``R2``."""
    out = np.eye(3)
    for R in poses:
        out = out @ R
    return out


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed proper rotation (QR of a Gaussian matrix)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rotate_points(points: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Apply ``x' = R x`` to every row of an ``N x 3`` array."""
    R = check_pose(R)
    return np.asarray(points, dtype=np.float64) @ R.T


def sample_poses(count: int, elevation_deg: float = DEFAULT_ELEVATION) -> list[np.ndarray]:
    """Evenly spaced azimuths ``k * 360/count`` around the object's up axis.

    The camera first turns the object by the azimuth about the canonical
    ``y`` axis, then tilts it by the elevation about the view ``x'`` axis.
    """
    if count < 1:
        raise ContractError(f"sample_poses: count must be >= 1, got {count}")
    step = 360.0 / count
    return [compose(rot_x(elevation_deg), rot_y(k * step)) for k in range(count)]


@dataclass(frozen=True)
class ProjectionParams:
    h: int
    w: int
    g: float
    o_h: float
    o_w: float
    x0: float
    y0: float
    margin: float = DEFAULT_MARGIN


def fit_projection(p_rot: np.ndarray, h: int, w: int, margin: float = DEFAULT_MARGIN) -> ProjectionParams:
    """Grid size and centering offsets that fit a rotated cloud into an ``h x w`` grid."""
    p_rot = np.asarray(p_rot, dtype=np.float64)
    if p_rot.ndim != 2 or p_rot.shape[0] == 0:
        raise DataError("fit_projection: empty point cloud")
    if not 0 <= margin < 0.5:
        raise ContractError(f"fit_projection: margin must lie in [0, 0.5), got {margin}")
    x0, y0 = p_rot[:, 0].min(), p_rot[:, 1].min()
    ext_x = p_rot[:, 0].max() - x0
    ext_y = p_rot[:, 1].max() - y0
    g = max(ext_x, ext_y) / ((min(h, w) - 1) * (1 - 2 * margin))
    g = max(g, MIN_GRID_SIZE)
    o_h = ((h - 1) - ext_x / g) / 2
    o_w = ((w - 1) - ext_y / g) / 2
    return ProjectionParams(h, w, float(g), float(o_h), float(o_w), float(x0), float(y0), margin)


def project_to_grid(p_rot: np.ndarray, pp: ProjectionParams) -> np.ndarray:
    """Rows of ``(u, v, depth)`` for each rotated point."""
    p_rot = np.asarray(p_rot, dtype=np.float64)
    u = (p_rot[:, 0] - pp.x0) / pp.g + pp.o_h
    v = (p_rot[:, 1] - pp.y0) / pp.g + pp.o_w
    return np.stack([u, v, p_rot[:, 2]], axis=1)


def grid_to_view(u, v, pp: ProjectionParams):
    """Inverse of the grid mapping: view-plane ``(x', y')`` of grid coordinate ``(u, v)``."""
    return pp.g * (np.asarray(u) - pp.o_h) + pp.x0, pp.g * (np.asarray(v) - pp.o_w) + pp.y0


@dataclass(frozen=True)
class OpticalLine:
    origin: np.ndarray
    direction: np.ndarray
    grid_pos: tuple[float, float]


def optical_line(R: np.ndarray, pp: ProjectionParams, u: int, v: int) -> OpticalLine:
    """The canonical-frame line of points that land on grid cell ``(u, v)`` under ``R``.

    The origin is the point of the line on the view plane ``z' = 0``.
    """
    if not (0 <= u <= pp.h - 1 and 0 <= v <= pp.w - 1):
        raise ContractError(f"optical_line: cell ({u}, {v}) outside {pp.h}x{pp.w} grid")
    origins, dirs = optical_lines(R, pp, np.array([u]), np.array([v]))
    return OpticalLine(origins[0], dirs[0], (u / pp.h, v / pp.w))


def optical_lines(R: np.ndarray, pp: ProjectionParams, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized origins ``[K, 3]`` and unit directions ``[K, 3]`` for cells ``(u[k], v[k])``."""
    A = check_pose(R).T  # inverse of a rotation
    xp, yp = grid_to_view(u, v, pp)
    origins = np.outer(xp, A[:, 0]) + np.outer(yp, A[:, 1])
    d = A[:, 2] / np.linalg.norm(A[:, 2])
    return origins, np.broadcast_to(d, origins.shape).copy()
