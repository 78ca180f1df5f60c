"""Pose-conditioned photograph module.

Turns unordered 3D feature tokens into an ordered ``h x w`` grid of 2D
features for a requested pose. Three modes:

``cross_attention``
    queries are lifted optical-line descriptors of each grid cell, memory is
    the encoded centers plus a learnable pad token;
``learnable_query``
    queries come from an MLP over the flattened pose matrix;
``direct_projection``
    no attention; memory rows are scattered into the cells their centers
    project onto, the pad token fills empty cells.

Grid cells are laid out row-major: ``u`` (first axis) major, ``v`` minor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tap import geometry
from tap import ndcompute as nd
from tap.backbone import EncodedCloud
from tap.errors import ConfigError

MODES = ("cross_attention", "learnable_query", "direct_projection")
QUERY_WIDTH = 8


@dataclass(frozen=True)
class PhotoConfig:
    layers: int = 6
    channels: int = 256  # C2d
    heads: int = 4
    drop_path: float = 0.1
    mode: str = "cross_attention"
    grid: int = 7
    query_hidden: int = 128
    ffn_mult: int = 4
    margin: float = geometry.DEFAULT_MARGIN

    def validate(self) -> PhotoConfig:
        if self.mode not in MODES:
            raise ConfigError(f"unknown photograph mode {self.mode!r}; expected one of {MODES}")
        if self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if not 0 <= self.drop_path < 1:
            raise ConfigError(f"drop_path must lie in [0, 1), got {self.drop_path}")
        return self


@dataclass
class QueryGrid:
    init: np.ndarray  # [B, h*w, 8]
    lifted: nd.Tensor  # [B, h*w, C2d]


@dataclass
class MemoryTokens:
    tokens: nd.Tensor  # [B, n + 1, C2d], pad token last


@dataclass
class AttentionTrace:
    """Collects attention weight arrays ``[B, heads, queries, memory]`` per layer."""

    weights: list[np.ndarray] = field(default_factory=list)


def init_photograph(params: nd.ParamSet, cfg: PhotoConfig, c3d: int, rng: np.random.Generator,
                    prefix: str = "photo") -> None:
    cfg.validate()
    C = cfg.channels
    hw = cfg.grid * cfg.grid
    nd.init_mlp(params, f"{prefix}.memory", (c3d + 3, C), rng)
    params[f"{prefix}.pad"] = nd.tensor(rng.standard_normal(C) * 0.02)
    if cfg.mode == "direct_projection":
        return
    if cfg.mode == "cross_attention":
        nd.init_mlp(params, f"{prefix}.query", (QUERY_WIDTH, cfg.query_hidden, C), rng)
    else:
        nd.init_mlp(params, f"{prefix}.lquery", (9, cfg.query_hidden, hw * C), rng)
    for i in range(cfg.layers):
        p = f"{prefix}.block{i}"
        for ln in ("ln1", "ln2"):
            params[f"{p}.{ln}.gain"] = nd.tensor(np.ones(C))
            params[f"{p}.{ln}.bias"] = nd.tensor(np.zeros(C))
        for proj in ("q", "k", "v", "o"):
            nd.init_linear(params, f"{p}.attn.{proj}", C, C, rng, gain=1.0)
        nd.init_mlp(params, f"{p}.ffn", (C, cfg.ffn_mult * C, C), rng)
    params[f"{prefix}.norm_out.gain"] = nd.tensor(np.ones(C))
    params[f"{prefix}.norm_out.bias"] = nd.tensor(np.zeros(C))


# --------------------------------------------------------------------------
# queries


def grid_projection(points: np.ndarray, R: np.ndarray, cfg: PhotoConfig) -> geometry.ProjectionParams:
    """Projection parameters of a cloud under ``R`` at feature-grid resolution."""
    return geometry.fit_projection(geometry.rotate_points(points, R), cfg.grid, cfg.grid, cfg.margin)


def query_init(R: np.ndarray, pp: geometry.ProjectionParams) -> np.ndarray:
    """``[h*w, 8]`` rows ``[origin xyz, unit direction xyz, u/h, v/w]``."""
    u, v = np.meshgrid(np.arange(pp.h), np.arange(pp.w), indexing="ij")
    u, v = u.reshape(-1), v.reshape(-1)
    origins, dirs = geometry.optical_lines(R, pp, u, v)
    return np.concatenate([origins, dirs, (u / pp.h)[:, None], (v / pp.w)[:, None]], axis=1)


def build_queries(poses, pps, params: nd.ParamSet, cfg: PhotoConfig, prefix: str = "photo") -> QueryGrid:
    init = np.stack([query_init(R, pp) for R, pp in zip(poses, pps)])
    dims = (QUERY_WIDTH, cfg.query_hidden, cfg.channels)
    return QueryGrid(init, nd.mlp_forward(nd.tensor(init), params, dims, f"{prefix}.query"))


def learnable_queries(poses, params: nd.ParamSet, cfg: PhotoConfig, prefix: str = "photo") -> nd.Tensor:
    flat = np.stack([np.asarray(R, dtype=np.float64).reshape(9) for R in poses])
    hw = cfg.grid * cfg.grid
    q = nd.mlp_forward(nd.tensor(flat), params, (9, cfg.query_hidden, hw * cfg.channels), f"{prefix}.lquery")
    return nd.reshape(q, (len(poses), hw, cfg.channels))


# --------------------------------------------------------------------------
# memory


def build_memory(enc: EncodedCloud, params: nd.ParamSet, prefix: str = "photo") -> MemoryTokens:
    feats = enc.features
    B, n, c3d = feats.shape
    C = params[f"{prefix}.pad"].shape[0]
    x = nd.concat([feats, nd.tensor(enc.centers)], axis=2)
    rows = nd.mlp_forward(x, params, (c3d + 3, C), f"{prefix}.memory")
    pad = nd.tile_batch(nd.reshape(params[f"{prefix}.pad"], (1, C)), B)
    return MemoryTokens(nd.concat([rows, pad], axis=1))


# --------------------------------------------------------------------------
# attention


def split_heads(x: nd.Tensor, heads: int) -> nd.Tensor:
    B, L, C = x.shape
    return nd.transpose(nd.reshape(x, (B, L, heads, C // heads)), (0, 2, 1, 3))


def merge_heads(x: nd.Tensor) -> nd.Tensor:
    B, H, L, d = x.shape
    return nd.reshape(nd.transpose(x, (0, 2, 1, 3)), (B, L, H * d))


def attention(q: nd.Tensor, k: nd.Tensor, v: nd.Tensor) -> tuple[nd.Tensor, nd.Tensor]:
    """Scaled dot-product attention on ``[..., L, d]`` operands; returns (output, weights)."""
    d = q.shape[-1]
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    logits = nd.scale(nd.matmul(q, nd.transpose(k, axes)), 1.0 / np.sqrt(d))
    w = nd.softmax_rows(logits)
    return nd.matmul(w, v), w


def _drop_path(x: nd.Tensor, rate: float, rng: np.random.Generator | None) -> nd.Tensor:
    if rng is None or rate <= 0:
        return x
    keep = (rng.random(x.shape[0]) >= rate) / (1.0 - rate)
    return nd.scale_rows(x, keep)


def _ln(x: nd.Tensor, params: nd.ParamSet, name: str) -> nd.Tensor:
    return nd.layer_norm(x, params[f"{name}.gain"], params[f"{name}.bias"])


def cross_attention_block(q: nd.Tensor, mem: MemoryTokens, params: nd.ParamSet, cfg: PhotoConfig, layer: int,
                          prefix: str = "photo", rng: np.random.Generator | None = None,
                          trace: AttentionTrace | None = None) -> nd.Tensor:
    """Pre-norm block: attention to fixed memory, then feed-forward, both residual.

    Passing ``rng`` switches on drop-path (training); ``None`` is the
    deterministic inference path.
    """
    cfg.validate()
    p = f"{prefix}.block{layer}"
    if q.shape[-1] != cfg.channels:
        raise ConfigError(f"query width {q.shape[-1]} != channels {cfg.channels}")

    def proj(x, name):
        return nd.linear(x, params[f"{p}.attn.{name}.weight"], params[f"{p}.attn.{name}.bias"])

    h = _ln(q, params, f"{p}.ln1")
    out, w = attention(split_heads(proj(h, "q"), cfg.heads),
                       split_heads(proj(mem.tokens, "k"), cfg.heads),
                       split_heads(proj(mem.tokens, "v"), cfg.heads))
    if trace is not None:
        trace.weights.append(w.data)
    x = nd.add(q, _drop_path(proj(merge_heads(out), "o"), cfg.drop_path, rng))
    f = nd.mlp_forward(_ln(x, params, f"{p}.ln2"), params, (cfg.channels, cfg.ffn_mult * cfg.channels, cfg.channels), f"{p}.ffn")
    return nd.add(x, _drop_path(f, cfg.drop_path, rng))


# --------------------------------------------------------------------------
# direct projection (no attention)


def projection_scatter(centers: np.ndarray, R: np.ndarray, pp: geometry.ProjectionParams) -> np.ndarray:
    """``[h*w, n+1]`` averaging matrix: each cell means its projected centers, else takes the pad row."""
    n = centers.shape[0]
    uvd = geometry.project_to_grid(geometry.rotate_points(centers, R), pp)
    rows = np.clip(np.floor(uvd[:, 0] + 0.5).astype(np.int64), 0, pp.h - 1)
    cols = np.clip(np.floor(uvd[:, 1] + 0.5).astype(np.int64), 0, pp.w - 1)
    S = np.zeros((pp.h * pp.w, n + 1))
    np.add.at(S, (rows * pp.w + cols, np.arange(n)), 1.0)
    counts = S.sum(axis=1, keepdims=True)
    empty = counts[:, 0] == 0
    S[empty, n] = 1.0
    counts[empty] = 1.0
    return S / counts


# --------------------------------------------------------------------------


def photograph_forward(enc: EncodedCloud, poses, pps, params: nd.ParamSet, cfg: PhotoConfig, prefix: str = "photo",
                       rng: np.random.Generator | None = None, trace: AttentionTrace | None = None) -> nd.Tensor:
    """View-feature map ``[B, h, w, C2d]`` for a batch of (encoded cloud, pose) pairs.

    ``poses`` and ``pps`` hold one rotation / projection-parameter set per
    sample; ``pps`` must be fitted at the config's grid resolution.
    """
    cfg.validate()
    B = enc.features.shape[0]
    if len(poses) != B or len(pps) != B:
        raise ConfigError(f"photograph_forward: {B} clouds but {len(poses)} poses / {len(pps)} projections")
    h = w = cfg.grid
    mem = build_memory(enc, params, prefix)
    if cfg.mode == "direct_projection":
        S = np.stack([projection_scatter(enc.centers[b], poses[b], pps[b]) for b in range(B)])
        x = nd.matmul(nd.tensor(S), mem.tokens)
    else:
        if cfg.mode == "cross_attention":
            x = build_queries(poses, pps, params, cfg, prefix).lifted
        else:
            x = learnable_queries(poses, params, cfg, prefix)
        for i in range(cfg.layers):
            x = cross_attention_block(x, mem, params, cfg, i, prefix, rng, trace)
        x = _ln(x, params, f"{prefix}.norm_out")
    return nd.reshape(x, (B, h, w, cfg.channels))
