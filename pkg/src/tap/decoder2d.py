"""Transposed-convolution generator from a view-feature map to an RGB image."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tap import ndcompute as nd
from tap.errors import ConfigError

Stage = tuple[int, int, int, int, int, int]  # c_in, c_out, kernel, stride, pad, out_pad

# 7x7x256 -> 28 -> 56 -> 112 -> 224x224x3
PAPER_STAGES: tuple[Stage, ...] = (
    (256, 128, 5, 4, 1, 1),
    (128, 64, 3, 2, 1, 1),
    (64, 32, 3, 2, 1, 1),
    (32, 3, 3, 2, 1, 1),
)
# 4x4x128 -> 16 -> 32 -> 32x32x3
DESK_STAGES: tuple[Stage, ...] = (
    (128, 64, 5, 4, 1, 1),
    (64, 32, 3, 2, 1, 1),
    (32, 3, 3, 1, 1, 0),
)
OUT_BIAS_INIT = 0.5


@dataclass(frozen=True)
class DecoderConfig:
    stages: tuple[Stage, ...] = PAPER_STAGES

    def validate(self) -> DecoderConfig:
        if not self.stages:
            raise ConfigError("decoder needs at least one stage")
        for a, b in zip(self.stages[:-1], self.stages[1:]):
            if a[1] != b[0]:
                raise ConfigError(f"decoder stage channels do not chain: {a} -> {b}")
        if self.stages[-1][1] != 3:
            raise ConfigError(f"decoder must end with 3 channels, got {self.stages[-1][1]}")
        return self

    def output_size(self, size: int) -> int:
        for _, _, k, s, p, op in self.stages:
            size = nd.tconv_out_size(size, k, s, p, op)
        return size


def init_decoder(params: nd.ParamSet, cfg: DecoderConfig, rng: np.random.Generator, prefix: str = "decoder") -> None:
    cfg.validate()
    last = len(cfg.stages) - 1
    for i, (cin, cout, k, s, _, _) in enumerate(cfg.stages):
        fan_in = cin * k * k / (s * s)
        std = np.sqrt((1.0 if i == last else 2.0) / fan_in)
        params[f"{prefix}.{i}.kernel"] = nd.tensor(rng.standard_normal((k, k, cin, cout)) * std)
        params[f"{prefix}.{i}.bias"] = nd.tensor(np.full(cout, OUT_BIAS_INIT if i == last else 0.0))


def decode(fmap: nd.Tensor, params: nd.ParamSet, cfg: DecoderConfig, prefix: str = "decoder") -> nd.Tensor:
    """Upsample ``[B, h, w, C]`` (or unbatched) to an unclamped ``[B, H, W, 3]`` image."""
    cfg.validate()
    if fmap.shape[-1] != cfg.stages[0][0]:
        raise ConfigError(f"feature map has {fmap.shape[-1]} channels, first stage expects {cfg.stages[0][0]}")
    x = fmap
    last = len(cfg.stages) - 1
    for i, (_, _, _, s, p, op) in enumerate(cfg.stages):
        x = nd.tconv2d(x, params[f"{prefix}.{i}.kernel"], s, p, op, params[f"{prefix}.{i}.bias"])
        if i < last:
            x = nd.relu(x)
    return x
