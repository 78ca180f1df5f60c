"""Weighted foreground/background pixel loss and the Chamfer distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tap import ndcompute as nd
from tap.errors import ContractError, DataError
from tap.renderer import fg_mask

REGION_NORMS = ("image", "region")


@dataclass(frozen=True)
class LossWeights:
    w_fg: float = 20.0
    w_bg: float = 1.0
    # "image": divide region sums by H*W; "region": by the region's own pixel count
    region_norm: str = "image"

    def __post_init__(self):
        if self.w_fg < 0 or self.w_bg < 0:
            raise ContractError(f"loss weights must be nonnegative, got {self.w_fg}, {self.w_bg}")
        if self.region_norm not in REGION_NORMS:
            raise ContractError(f"region_norm must be one of {REGION_NORMS}")


def fg_bg_mask(gt: np.ndarray) -> np.ndarray:
    """Boolean foreground mask ``[..., H, W]``; background is (near-)white in every channel."""
    return fg_mask(gt)


def _pixel_weights(gt: np.ndarray, w: LossWeights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel fg/bg normalizers ``[B, H, W]`` such that D_k = sum(err * norm_k)."""
    fg = fg_bg_mask(gt).astype(np.float64)
    bg = 1.0 - fg
    H, W = gt.shape[-3:-1]
    if w.region_norm == "image":
        return fg, fg / (H * W), bg / (H * W)
    n_fg = np.maximum(fg.sum(axis=(-1, -2), keepdims=True), 1.0)
    n_bg = np.maximum(bg.sum(axis=(-1, -2), keepdims=True), 1.0)
    return fg, fg / n_fg, bg / n_bg


def tap_loss(gen: nd.Tensor, gt: np.ndarray, w: LossWeights = LossWeights()) -> nd.Tensor:
    """``w_fg * D_fg + w_bg * D_bg``, averaged over the batch when ``gen`` is batched.

    ``D_k`` sums the channel-mean squared error over region ``k`` after
    clamping ``gen`` to [0, 1].
    """
    gt = np.asarray(gt, dtype=np.float64)
    if gen.shape != gt.shape:
        raise ContractError(f"tap_loss: generated {gen.shape} vs ground truth {gt.shape}")
    batch = gen.shape[0] if gen.ndim == 4 else 1
    _, nf, nb = _pixel_weights(gt, w)
    weights = (w.w_fg * nf + w.w_bg * nb) / batch
    err = nd.mean_axis(nd.square(nd.sub(nd.clamp(gen, 0.0, 1.0), nd.tensor(gt, dtype=gen.dtype))), -1)
    return nd.sum(nd.mul_const(err, weights))


def region_errors(gen: np.ndarray, gt: np.ndarray, w: LossWeights = LossWeights()) -> tuple[float, float]:
    """Batch-mean ``(D_fg, D_bg)`` as plain floats (unweighted)."""
    gt = np.asarray(gt, dtype=np.float64)
    err = ((np.clip(np.asarray(gen, dtype=np.float64), 0, 1) - gt) ** 2).mean(axis=-1)
    _, nf, nb = _pixel_weights(gt, w)
    batch = gt.shape[0] if gt.ndim == 4 else 1
    return float((err * nf).sum() / batch), float((err * nb).sum() / batch)


def chamfer_terms(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Directed terms (a->b, b->a): mean squared distance to the nearest neighbor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise DataError("chamfer: empty point set")
    d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    return float(d.min(axis=1).mean()), float(d.min(axis=0).mean())


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    ab, ba = chamfer_terms(a, b)
    return ab + ba
