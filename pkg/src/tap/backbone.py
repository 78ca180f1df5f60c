"""Reference point-cloud encoder: per-point MLP, FPS centers, kNN max-pool, center MLP.

Any encoder that maps a batch of clouds to :class:`EncodedCloud` can replace
this one; the photograph module and the classification heads only look at
``centers`` and ``features``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tap import ndcompute as nd
from tap.errors import ContractError


@dataclass(frozen=True)
class EncoderConfig:
    point_dims: tuple[int, ...] = (3, 64, 128)
    centers: int = 64
    k: int = 16
    channels: int = 256  # C3d
    fps_start: int = 0

    @property
    def center_dims(self) -> tuple[int, int]:
        return (self.point_dims[-1], self.channels)


@dataclass
class EncodedCloud:
    centers: np.ndarray  # [B, n, 3], canonical frame
    features: nd.Tensor  # [B, n, C3d]


def farthest_point_sample(points: np.ndarray, n: int, start_index: int = 0) -> np.ndarray:
    """Greedy max-min subset of ``n`` indices; ties go to the lowest index."""
    points = np.asarray(points, dtype=np.float64)
    N = points.shape[0]
    if not 1 <= n <= N:
        raise ContractError(f"farthest_point_sample: need 1 <= n <= N, got n={n}, N={N}")
    if not 0 <= start_index < N:
        raise ContractError(f"farthest_point_sample: start index {start_index} out of range")
    picked = np.empty(n, dtype=np.int64)
    picked[0] = start_index
    diff = points - points[start_index]
    dist = (diff * diff).sum(axis=1)
    for i in range(1, n):
        nxt = int(np.argmax(dist))  # argmax returns the first maximum
        picked[i] = nxt
        diff = points - points[nxt]
        dist = np.minimum(dist, (diff * diff).sum(axis=1))
    return picked


def knn_indices(points: np.ndarray, queries: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest points to each query, nearest first (stable on ties)."""
    if k > points.shape[0]:
        raise ContractError(f"knn: k={k} exceeds cloud size {points.shape[0]}")
    d = ((queries[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def init_encoder(params: nd.ParamSet, cfg: EncoderConfig, rng: np.random.Generator, prefix: str = "encoder") -> None:
    nd.init_mlp(params, f"{prefix}.point", cfg.point_dims, rng)
    nd.init_mlp(params, f"{prefix}.center", cfg.center_dims, rng)


def group(points: np.ndarray, cfg: EncoderConfig) -> tuple[np.ndarray, np.ndarray]:
    """Center coordinates ``[B, n, 3]`` and neighbor indices ``[B, n, k]`` for a batch."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 2:
        points = points[None]
    if cfg.k > points.shape[1]:
        raise ContractError(f"encode: k={cfg.k} exceeds cloud size {points.shape[1]}")
    centers, neighbors = [], []
    for p in points:
        idx = farthest_point_sample(p, cfg.centers, cfg.fps_start)
        centers.append(p[idx])
        neighbors.append(knn_indices(p, p[idx], cfg.k))
    return np.stack(centers), np.stack(neighbors)


def encode(points: np.ndarray, params: nd.ParamSet, cfg: EncoderConfig, prefix: str = "encoder",
           grouping: tuple[np.ndarray, np.ndarray] | None = None) -> EncodedCloud:
    """Encode one cloud ``[N, 3]`` or a batch ``[B, N, 3]``.

    ``grouping`` lets callers reuse a precomputed :func:`group` result; it
    depends only on coordinates, never on parameters.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 2:
        points = points[None]
    centers, neighbors = grouping if grouping is not None else group(points, cfg)
    x = nd.tensor(points)
    feats = nd.mlp_forward(x, params, cfg.point_dims, f"{prefix}.point")  # [B, N, C]
    pooled = nd.group_max(feats, neighbors)  # [B, n, C]
    out = nd.mlp_forward(pooled, params, cfg.center_dims, f"{prefix}.center")
    return EncodedCloud(centers, out)


def pooled_features(enc: EncodedCloud) -> nd.Tensor:
    """Global max-pool concatenated with mean-pool over centers: ``[B, 2 * C3d]``."""
    return nd.concat([nd.max_axis(enc.features, 1), nd.mean_axis(enc.features, 1)], axis=1)
