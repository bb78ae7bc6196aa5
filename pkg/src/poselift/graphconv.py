"""Graph convolution over the skeleton and its memory-fused variant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Affine, LayerNorm, Module
from .skeleton import Skeleton


def normalize_adjacency(raw: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization with self loops: D^-1/2 (A+I) D^-1/2."""
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise ad.DimensionError(f"adjacency must be square, got {raw.shape}")
    with_self = raw + np.eye(raw.shape[0])
    degree = with_self.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degree)
    return inv_sqrt[:, None] * with_self * inv_sqrt[None, :]


def temporal_chain(length: int) -> np.ndarray:
    """0/1 adjacency of a path graph linking consecutive time steps."""
    a = np.zeros((length, length))
    idx = np.arange(length - 1)
    a[idx, idx + 1] = 1.0
    a[idx + 1, idx] = 1.0
    return a


@dataclass
class AdjacencySet:
    """Fixed, non-learnable adjacency pair shared by every layer."""
    spatial: np.ndarray   # (J, J) normalized skeleton graph
    temporal: np.ndarray  # (T', T') normalized time chain


def build_adjacency(skeleton: Skeleton, pooled_len: int) -> AdjacencySet:
    return AdjacencySet(
        spatial=normalize_adjacency(skeleton.adjacency_raw()),
        temporal=normalize_adjacency(temporal_chain(pooled_len)),
    )


def fuse_adjacency(static_adj: Tensor, memory_state: Tensor, lam: Tensor) -> Tensor:
    """Convex blend lam * A + (1 - lam) * S; lam may be a scalar tensor."""
    one = Tensor(np.ones(()))
    return lam * static_adj + (one - lam) * memory_state


class MemoryGraphConv(Module):
    """Graph convolution whose mixing matrix is fused with a memory state.

    y = GELU(LayerNorm(A' x W + b)) with A' = lam * A + (1 - lam) * S.
    """

    def __init__(self, dim: int, rng: np.random.Generator):
        self.proj = Affine(dim, dim, rng)
        self.norm = LayerNorm(dim)
        # sigmoid(0) = 0.5: start as an even blend of skeleton and memory.
        self.lam_param = Tensor(np.zeros(()), requires_grad=True)

    def blend_weight(self) -> Tensor:
        return ad.sigmoid(self.lam_param)

    def __call__(self, x: Tensor, static_adj: Tensor, memory_state: Tensor,
                 lam: Tensor | None = None) -> Tensor:
        lam = self.blend_weight() if lam is None else lam
        fused = fuse_adjacency(static_adj, memory_state, lam)
        mixed = ad.matmul(fused, x)
        return ad.gelu(self.norm(self.proj(mixed)))


class DualPathEnhance(Module):
    """Blend of a joint-graph pass and a pooled-time-graph pass.

    spatial path: A_s x W_s contracts over joints of (B, T', J, D);
    temporal path: A_t x W_t contracts over the pooled time axis.
    When adaptive is False the blend is fixed at one half each.
    """

    def __init__(self, dim: int, rng: np.random.Generator, adaptive: bool = True):
        self.spatial_proj = Affine(dim, dim, rng, bias=False)
        self.temporal_proj = Affine(dim, dim, rng, bias=False)
        self.adaptive = adaptive
        self.alpha_param = Tensor(np.zeros(()), requires_grad=True)

    def blend_weight(self) -> Tensor:
        if self.adaptive:
            return ad.sigmoid(self.alpha_param)
        return Tensor(np.asarray(0.5))

    def __call__(self, pooled: Tensor, spatial_adj: Tensor, temporal_adj: Tensor) -> Tensor:
        spatial = self.spatial_proj(ad.matmul(spatial_adj, pooled))
        swapped = ad.transpose(pooled, (0, 2, 1, 3))  # (B, J, T', D)
        temporal = ad.matmul(temporal_adj, swapped)
        temporal = ad.transpose(self.temporal_proj(temporal), (0, 2, 1, 3))
        alpha = self.blend_weight()
        one = Tensor(np.ones(()))
        return alpha * spatial + (one - alpha) * temporal
