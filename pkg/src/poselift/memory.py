"""Bank of joint-relation prototypes with learned retrieval and smoothing.

The bank holds K learnable (J, J) prototype matrices. A retrieval network
maps pooled sequence features to softmax weights over the bank; the
weighted prototype sum is smoothed against the previous layer's state by
a learned gate before it reaches the graph convolution.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Affine, Module


def entropy_of_weights(weights: np.ndarray) -> float:
    """Mean Shannon entropy (nats) of retrieval weight rows."""
    clipped = np.clip(weights, 1e-300, None)
    return float(-(clipped * np.log(clipped)).sum(axis=-1).mean())


class GraphMemoryBank(Module):
    """K prototype joint-relation matrices plus retrieval and gate nets."""

    def __init__(self, prototypes: int, joints: int, dim: int,
                 rng: np.random.Generator):
        if prototypes < 1:
            raise ad.DimensionError(f"need at least one prototype, got {prototypes}")
        if dim < 2:
            raise ad.DimensionError(f"feature width must be >= 2, got {dim}")
        self.count = prototypes
        self.joints = joints
        self.prototypes = Tensor(rng.normal(0.0, 1.0, size=(prototypes, joints, joints)),
                                 requires_grad=True)
        hidden = dim // 2
        self.select_hidden = Affine(dim, hidden, rng)
        # Small head: retrieval starts near uniform so specialization is
        # observable as falling entropy.
        self.select_out = Affine(hidden, prototypes, rng, weight_scale=0.01)
        self.gate = Affine(dim, 1, rng)

    def retrieval_weights(self, pooled_features: Tensor) -> Tensor:
        """(B, T', D) features -> (B, T', K) softmax weights."""
        logits = self.select_out(ad.gelu(self.select_hidden(pooled_features)))
        return ad.softmax(logits, axis=-1)

    def retrieve(self, pooled_features: Tensor) -> tuple[Tensor, Tensor]:
        """Weighted prototype blend: (B, T', J, J) plus the weights used."""
        weights = self.retrieval_weights(pooled_features)
        b, tp, k = weights.shape
        flat_protos = ad.reshape(self.prototypes, (self.count, self.joints * self.joints))
        blended = ad.matmul(ad.reshape(weights, (b * tp, k)), flat_protos)
        retrieved = ad.reshape(blended, (b, tp, self.joints, self.joints))
        return retrieved, weights

    def smooth(self, retrieved: Tensor, pooled_features: Tensor,
               previous: Tensor | None) -> Tensor:
        """Gate-blend the new retrieval against the previous layer's state.

        With no previous state the retrieval passes through unchanged.
        """
        if previous is None:
            return retrieved
        gate = ad.sigmoid(self.gate(pooled_features))          # (B, T', 1)
        gate = ad.reshape(gate, gate.shape[:2] + (1, 1))       # broadcast over (J, J)
        one = Tensor(np.ones(()))
        return gate * retrieved + (one - gate) * previous

    def __call__(self, pooled_features: Tensor,
                 previous: Tensor | None) -> tuple[Tensor, Tensor]:
        retrieved, weights = self.retrieve(pooled_features)
        return self.smooth(retrieved, pooled_features, previous), weights
