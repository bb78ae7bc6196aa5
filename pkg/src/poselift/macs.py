"""Analytic multiply-accumulate counts for the model's building blocks.

Counts cover matrix products and the scan's elementwise multiplies;
normalizations and activations are excluded. Used for scaling checks
(attention grows quadratically with sequence length, the scan linearly)
and for the per-frame cost report.
"""

from __future__ import annotations

from .model import ModelConfig


def attn_mixer_macs(length: int, dim: int) -> int:
    """Attention sublayer: Q/K/V/out projections plus score and mix terms."""
    return 4 * length * dim * dim + 2 * length * length * dim


def attn_block_macs(length: int, dim: int) -> int:
    """Attention sublayer plus its 2x expansion feed-forward."""
    return attn_mixer_macs(length, dim) + 4 * length * dim * dim


def ssm_mixer_macs(length: int, dim: int, state_dim: int) -> int:
    """Selective-scan block: projections, discretization and recurrence."""
    return length * (dim * dim + 5 * dim * state_dim + dim)


def _stream_macs(kind: str, frames: int, joints: int, dim: int, state_dim: int) -> int:
    if kind == "ssm":
        spatial = frames * ssm_mixer_macs(joints, dim, state_dim)
        temporal = joints * ssm_mixer_macs(frames, dim, state_dim)
    else:
        spatial = frames * attn_block_macs(joints, dim)
        temporal = joints * attn_block_macs(frames, dim)
    return spatial + temporal


def count_macs(cfg: ModelConfig) -> dict:
    """Per-sample MAC breakdown for one forward pass of the model."""
    cfg.validate()
    t, j, d = cfg.frames, cfg.joints, cfg.hidden_dim
    tp = cfg.pooled_frames
    k = cfg.prototypes
    n = cfg.state_dim
    hidden = d // 2

    breakdown: dict[str, int] = {}
    breakdown["stem"] = t * j * 2 * d

    per_layer: dict[str, int] = {}
    if cfg.use_dual_stream:
        per_layer["stream1"] = _stream_macs(cfg.stream1_kind, t, j, d, n)
        per_layer["stream2"] = _stream_macs(cfg.stream2_kind, t, j, d, n)
        per_layer["fusion"] = t * j * 2 * d * 2 if cfg.use_enhanced else 0
    retrieval = j * (2 * tp * d * d + 2 * t * d * d + 2 * tp * t * d)
    propagation = j * (2 * t * d * d + 2 * tp * d * d + 2 * t * tp * d)
    per_layer["proxy_attention"] = retrieval + propagation
    if cfg.use_pattern_reuse:
        enhance = (tp * (j * j * d + j * d * d)
                   + j * (tp * tp * d + tp * d * d)
                   + 2 * tp * j * d)
        select = tp * (d * hidden + hidden * k)
        blend = tp * k * j * j
        gate = tp * d
        smooth = 2 * tp * j * j
        gconv = 2 * tp * j * j + tp * (j * j * d + j * d * d)
        per_layer["memory"] = enhance + select + blend + gate + smooth + gconv

    breakdown["per_layer"] = per_layer
    breakdown["layer_total"] = sum(per_layer.values())
    breakdown["head"] = t * j * (d * d + 3 * d)
    total = breakdown["stem"] + cfg.layers * breakdown["layer_total"] + breakdown["head"]
    breakdown["total"] = total
    breakdown["per_frame"] = total / t
    return breakdown
