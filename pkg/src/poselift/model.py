"""Full 2D-to-3D lifting model: stem, encoder layers, regression head.

Each layer runs (1) the dual sequence streams fused per position, (2) the
proxy-token passes that compress and re-expand the time axis, and (3) the
prototype-memory graph convolution at proxy resolution. The smoothed
memory state of layer l feeds layer l+1 within a forward pass.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graphconv import DualPathEnhance, MemoryGraphConv, build_adjacency
from .memory import GraphMemoryBank
from .nn import Affine, Module, MultiHeadAttention
from .skeleton import NormStats, Skeleton, default_skeleton
from .streams import EncoderStream, StreamFusion

CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    joints: int = 17
    frames: int = 27
    hidden_dim: int = 32
    heads: int = 4
    layers: int = 3
    prototypes: int = 8
    compression_ratio: int = 3
    state_dim: int = 16
    stream1_kind: str = "ssm"        # spatial-first stream
    stream2_kind: str = "attention"  # temporal-first stream
    use_dual_stream: bool = True
    use_pattern_reuse: bool = True
    use_enhanced: bool = True
    carry_memory_across_windows: bool = False
    lambda_velocity: float = 0.5

    def validate(self) -> None:
        if self.joints < 2:
            raise ConfigError(f"joints must be >= 2, got {self.joints}")
        if self.frames < 1:
            raise ConfigError(f"frames must be >= 1, got {self.frames}")
        if self.hidden_dim < 2:
            raise ConfigError(f"hidden_dim must be >= 2, got {self.hidden_dim}")
        if self.heads < 1 or self.hidden_dim % self.heads != 0:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} must divide evenly into heads {self.heads}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.prototypes < 1:
            raise ConfigError(f"prototypes must be >= 1, got {self.prototypes}")
        if self.compression_ratio < 1:
            raise ConfigError(f"compression_ratio must be >= 1, got {self.compression_ratio}")
        if self.state_dim < 1:
            raise ConfigError(f"state_dim must be >= 1, got {self.state_dim}")
        for field_name in ("stream1_kind", "stream2_kind"):
            kind = getattr(self, field_name)
            if kind not in EncoderStream.KINDS:
                raise ConfigError(f"{field_name} must be one of {EncoderStream.KINDS}, got {kind!r}")
        if self.use_enhanced and not self.use_pattern_reuse:
            raise ConfigError("use_enhanced requires use_pattern_reuse")
        if self.lambda_velocity < 0:
            raise ConfigError(f"lambda_velocity must be >= 0, got {self.lambda_velocity}")

    @property
    def pooled_frames(self) -> int:
        return math.ceil(self.frames / self.compression_ratio)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


# Component toggle chain mirroring the sequential ablation rows.
ABLATION_ROWS: dict[str, dict[str, bool]] = {
    "proxy_only": dict(use_dual_stream=False, use_pattern_reuse=False, use_enhanced=False),
    "dual_stream": dict(use_dual_stream=True, use_pattern_reuse=False, use_enhanced=False),
    "pattern_reuse": dict(use_dual_stream=True, use_pattern_reuse=True, use_enhanced=False),
    "full": dict(use_dual_stream=True, use_pattern_reuse=True, use_enhanced=True),
}


def _cross_time(attn: MultiHeadAttention, query: Tensor, kv: Tensor) -> Tensor:
    """Per-joint temporal cross-attention on (B, L, J, D) grids."""
    b, lq, j, d = query.shape
    lk = kv.shape[1]
    q = ad.reshape(ad.transpose(query, (0, 2, 1, 3)), (b * j, lq, d))
    k = ad.reshape(ad.transpose(kv, (0, 2, 1, 3)), (b * j, lk, d))
    mixed = attn(q, k)
    return ad.transpose(ad.reshape(mixed, (b, j, lq, d)), (0, 2, 1, 3))


def proxy_aggregate(x: Tensor, proxies: Tensor, retrieval: MultiHeadAttention,
                    propagation: MultiHeadAttention) -> tuple[Tensor, Tensor]:
    """Two residual cross-attention passes linking sequence and proxies.

    Pass one: proxies query the full sequence (per joint, along time).
    Pass two: the sequence queries the updated proxies.
    Returns (updated proxies, updated sequence).
    """
    new_proxies = proxies + _cross_time(retrieval, proxies, x)
    new_x = x + _cross_time(propagation, x, new_proxies)
    return new_proxies, new_x


class LiftLayer(Module):
    def __init__(self, cfg: ModelConfig, scan_order: list[int], rng: np.random.Generator):
        d, h = cfg.hidden_dim, cfg.heads
        self.cfg = cfg
        self.stream1 = EncoderStream(cfg.stream1_kind, "spatial_first", d, h,
                                     cfg.state_dim, scan_order, rng)
        self.stream2 = EncoderStream(cfg.stream2_kind, "temporal_first", d, h,
                                     cfg.state_dim, scan_order, rng)
        self.fusion = StreamFusion(d, rng, adaptive=cfg.use_enhanced)
        self.retrieval_attn = MultiHeadAttention(d, h, rng)
        self.propagation_attn = MultiHeadAttention(d, h, rng)
        self.enhance = DualPathEnhance(d, rng, adaptive=cfg.use_enhanced)
        self.bank = GraphMemoryBank(cfg.prototypes, cfg.joints, d, rng)
        self.gconv = MemoryGraphConv(d, rng)

    def __call__(self, x: Tensor, proxies: Tensor, memory_state: Tensor | None,
                 spatial_adj: Tensor, temporal_adj: Tensor,
                 capture: dict | None = None):
        cfg = self.cfg
        if cfg.use_dual_stream:
            first = self.stream1(x)
            second = self.stream2(x)
            x = self.fusion(first, second)
        proxies = proxies + _cross_time(self.retrieval_attn, proxies, x)
        if cfg.use_pattern_reuse:
            pooled = ad.adaptive_avg_pool(x, cfg.pooled_frames, axis=1)
            enhanced = self.enhance(pooled, spatial_adj, temporal_adj)
            feats = enhanced.mean(axis=2)  # pool joints -> (B, T', D)
            retrieved, weights = self.bank.retrieve(feats)
            if capture is not None:
                capture.setdefault("retrieval_weights", []).append(weights.numpy())
                capture.setdefault("memory_inputs", []).append(memory_state)
            state = self.bank.smooth(retrieved, feats, memory_state)
            if capture is not None:
                capture.setdefault("memory_states", []).append(state)
            memory_out = self.gconv(enhanced, spatial_adj, state)
            proxies = proxies + memory_out
            memory_state = state
        x = x + _cross_time(self.propagation_attn, x, proxies)
        return x, proxies, memory_state


class PoseLiftModel(Module):
    """Lift (B, T, J, 2) screen points to (B, T, J, 3) root-relative poses."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, skeleton: Skeleton | None = None):
        cfg.validate()
        skeleton = skeleton if skeleton is not None else default_skeleton()
        if skeleton.joint_count != cfg.joints:
            raise ConfigError(
                f"config says {cfg.joints} joints but skeleton has {skeleton.joint_count}")
        self.cfg = cfg
        self.skeleton = skeleton
        rng = np.random.default_rng(seed)
        d = cfg.hidden_dim

        adj = build_adjacency(skeleton, cfg.pooled_frames)
        self.spatial_adj = Tensor(adj.spatial)
        self.temporal_adj = Tensor(adj.temporal)

        self.input_proj = Affine(2, d, rng)
        self.joint_embed = Tensor(rng.normal(0.0, 0.02, size=(cfg.joints, d)),
                                  requires_grad=True)
        self.proxy_tokens = Tensor(rng.normal(0.0, 0.02, size=(cfg.pooled_frames, d)),
                                   requires_grad=True)
        scan_order = skeleton.depth_first_order()
        self.blocks = [LiftLayer(cfg, scan_order, rng) for _ in range(cfg.layers)]
        self.head_hidden = Affine(d, d, rng)
        self.head_out = Affine(d, 3, rng)

    def forward(self, inputs: Tensor, capture: dict | None = None,
                memory_in: Tensor | None = None) -> Tensor:
        b, t, j, c = inputs.shape
        cfg = self.cfg
        if (t, j, c) != (cfg.frames, cfg.joints, 2):
            raise ConfigError(
                f"input shape {inputs.shape} does not match config "
                f"(T={cfg.frames}, J={cfg.joints}, 2)")
        x = self.input_proj(inputs) + self.joint_embed
        tokens = ad.reshape(self.proxy_tokens, (1, cfg.pooled_frames, 1, cfg.hidden_dim))
        proxies = ad.broadcast_to(tokens, (b, cfg.pooled_frames, j, cfg.hidden_dim))
        state = memory_in if cfg.carry_memory_across_windows else None
        for block in self.blocks:
            x, proxies, state = block(x, proxies, state, self.spatial_adj,
                                      self.temporal_adj, capture)
        if capture is not None:
            capture["final_memory"] = state
        return self.head_out(ad.gelu(self.head_hidden(x)))

    def __call__(self, inputs: Tensor, **kw) -> Tensor:
        return self.forward(inputs, **kw)


def pose_loss(pred: Tensor, target: Tensor, lambda_velocity: float = 0.5):
    """Mean per-joint position error plus weighted mean velocity error.

    Single-frame sequences contribute no velocity term.
    """
    pos = ad.vector_norm(pred - target).mean()
    frames = pred.shape[1]
    if frames > 1 and lambda_velocity != 0.0:
        pred_vel = pred[:, 1:] - pred[:, :-1]
        tgt_vel = target[:, 1:] - target[:, :-1]
        vel = ad.vector_norm(pred_vel - tgt_vel).mean()
    else:
        vel = Tensor(np.zeros(()))
    total = pos + lambda_velocity * vel
    return total, pos, vel


# ---- checkpointing --------------------------------------------------------

def save_checkpoint(stem: str | Path, model: PoseLiftModel,
                    norm_stats: NormStats | None = None,
                    extra: dict | None = None) -> tuple[Path, Path]:
    """Write <stem>.json (manifest) and <stem>.bin (flat little-endian f8)."""
    stem = Path(stem)
    manifest_path = stem.with_suffix(".json")
    binary_path = stem.with_suffix(".bin")
    entries = []
    chunks = []
    offset = 0
    for name, tensor in model.named_parameters():
        flat = np.ascontiguousarray(tensor.data, dtype="<f8").reshape(-1)
        entries.append({"name": name, "shape": list(tensor.data.shape),
                        "offset": offset, "size": int(flat.size)})
        chunks.append(flat)
        offset += flat.size
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "params": entries,
        "total_values": offset,
        "binary": binary_path.name,
        "norm_stats": norm_stats.to_dict() if norm_stats is not None else None,
    }
    if extra:
        manifest["extra"] = extra
    binary_path.write_bytes(np.concatenate(chunks).astype("<f8").tobytes() if chunks else b"")
    manifest_path.write_text(json.dumps(manifest, indent=1) + "\n")
    return manifest_path, binary_path


class CheckpointError(ValueError):
    pass


def load_checkpoint(manifest_path: str | Path,
                    skeleton: Skeleton | None = None):
    """Rebuild (model, norm_stats, manifest) from a checkpoint manifest."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{manifest_path}: invalid JSON ({e.msg})") from e
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{manifest_path}: format_version {version} unsupported (expected {CHECKPOINT_VERSION})")
    cfg = ModelConfig.from_dict(manifest["config"])
    model = PoseLiftModel(cfg, seed=0, skeleton=skeleton)
    binary_path = manifest_path.parent / manifest["binary"]
    blob = np.frombuffer(binary_path.read_bytes(), dtype="<f8")
    if blob.size != manifest["total_values"]:
        raise CheckpointError(
            f"{binary_path}: holds {blob.size} values, manifest says {manifest['total_values']}")
    by_name = dict(model.named_parameters())
    listed = {e["name"] for e in manifest["params"]}
    missing = set(by_name) - listed
    extra_names = listed - set(by_name)
    if missing or extra_names:
        raise CheckpointError(
            f"{manifest_path}: parameter set mismatch (missing {sorted(missing)}, "
            f"unexpected {sorted(extra_names)})")
    for entry in manifest["params"]:
        tensor = by_name[entry["name"]]
        shape = tuple(entry["shape"])
        if tensor.data.shape != shape:
            raise CheckpointError(
                f"{manifest_path}: {entry['name']} has shape {shape}, "
                f"model expects {tensor.data.shape}")
        chunk = blob[entry["offset"]:entry["offset"] + entry["size"]]
        tensor.data = chunk.reshape(shape).astype(np.float64).copy()
    stats = manifest.get("norm_stats")
    norm_stats = NormStats.from_dict(stats) if stats else None
    return model, norm_stats, manifest
