"""End-to-end pre-training graph: encoder -> photograph module -> generator -> loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tap import backbone, decoder2d, objective, photograph
from tap import ndcompute as nd
from tap.trainer.config import TapConfig


def init_params(cfg: TapConfig, seed: int) -> nd.ParamSet:
    """Fresh pre-training parameters in the active precision.

    Each component draws from its own seeded stream, so the encoder
    initialization for a seed does not depend on the photograph mode or
    decoder shape.
    """
    params = nd.ParamSet()
    streams = np.random.SeedSequence(seed).spawn(3)
    backbone.init_encoder(params, cfg.encoder, np.random.default_rng(streams[0]))
    photograph.init_photograph(params, cfg.photo, cfg.encoder.channels, np.random.default_rng(streams[1]))
    decoder2d.init_decoder(params, cfg.decoder, np.random.default_rng(streams[2]))
    return params


@dataclass
class Batch:
    points: np.ndarray  # [B, N, 3]
    poses: list[np.ndarray]
    images: np.ndarray  # [B, H, W, 3]
    grouping: tuple[np.ndarray, np.ndarray] | None = None
    pps: list | None = None


def prepare(batch: Batch, cfg: TapConfig) -> Batch:
    """Fill in the parameter-independent parts (FPS/kNN grouping, grid projections)."""
    if batch.grouping is None:
        batch.grouping = backbone.group(batch.points, cfg.encoder)
    if batch.pps is None:
        batch.pps = [photograph.grid_projection(p, R, cfg.photo) for p, R in zip(batch.points, batch.poses)]
    return batch


def generate(params: nd.ParamSet, batch: Batch, cfg: TapConfig, rng: np.random.Generator | None = None,
             trace: photograph.AttentionTrace | None = None) -> nd.Tensor:
    """Predicted view images ``[B, H, W, 3]`` (unclamped)."""
    prepare(batch, cfg)
    enc = backbone.encode(batch.points, params, cfg.encoder, grouping=batch.grouping)
    fmap = photograph.photograph_forward(enc, batch.poses, batch.pps, params, cfg.photo, rng=rng, trace=trace)
    return decoder2d.decode(fmap, params, cfg.decoder)


def pipeline_loss(params: nd.ParamSet, batch: Batch, cfg: TapConfig, rng: np.random.Generator | None = None,
                  trace: photograph.AttentionTrace | None = None) -> tuple[nd.Tensor, nd.Tensor]:
    """(loss, generated images) for one batch."""
    gen = generate(params, batch, cfg, rng, trace)
    return objective.tap_loss(gen, batch.images, cfg.loss), gen
