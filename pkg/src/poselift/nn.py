"""Parameter containers and shared layers built on the autodiff engine."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Base class: recursive named-parameter discovery over attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{prefix}{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grads(self) -> None:
        for t in self.parameters():
            t.grad = None


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in) if fan_in > 0 else 1.0
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Affine(Module):
    """y = x @ weight + bias over the last axis."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 bias: bool = True, weight_scale: float | None = None):
        if weight_scale is None:
            self.weight = uniform_init(rng, (in_dim, out_dim), in_dim)
        else:
            self.weight = Tensor(rng.normal(0.0, weight_scale, size=(in_dim, out_dim)),
                                 requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ad.affine(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, eps=self.eps)


# Above this many score entries per query block, attention runs in query
# chunks so temporaries stay cache-resident at long sequence lengths.
QUERY_CHUNK_ENTRIES = 32768


def _attend(q: Tensor, k_t: Tensor, v: Tensor, inv_sqrt_d: float) -> Tensor:
    scores = ad.matmul(q, k_t) * inv_sqrt_d
    return ad.matmul(ad.softmax(scores, axis=-1), v)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes; any batch prefix.

    Softmax rows are independent, so chunking the query axis is exact.
    """
    d = q.shape[-1]
    if k.shape[-1] != d:
        raise ad.DimensionError(f"query width {d} != key width {k.shape[-1]}")
    inv_sqrt_d = 1.0 / np.sqrt(d)
    k_t = ad.transpose(k, _swap_last(k.ndim))
    lq, lk = q.shape[-2], k.shape[-2]
    rows = max(1, QUERY_CHUNK_ENTRIES // lk)
    if lq <= rows:
        return _attend(q, k_t, v, inv_sqrt_d)
    chunks = []
    for start in range(0, lq, rows):
        q_chunk = ad.getitem(q, (Ellipsis, slice(start, start + rows), slice(None)))
        chunks.append(_attend(q_chunk, k_t, v, inv_sqrt_d))
    return ad.concat(chunks, axis=-2)


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class MultiHeadAttention(Module):
    """Multi-head attention; query and key/value sources may differ.

    Operates on (batch, length, dim) inputs; the feature width must split
    evenly across heads.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads != 0:
            raise ad.DimensionError(f"feature width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.q_proj = Affine(dim, dim, rng)
        self.k_proj = Affine(dim, dim, rng)
        self.v_proj = Affine(dim, dim, rng)
        self.out_proj = Affine(dim, dim, rng)

    def __call__(self, query_src: Tensor, kv_src: Tensor) -> Tensor:
        b, lq, d = query_src.shape
        lk = kv_src.shape[1]
        h = self.heads
        dk = d // h
        q = self._split(self.q_proj(query_src), b, lq, h, dk)
        k = self._split(self.k_proj(kv_src), b, lk, h, dk)
        v = self._split(self.v_proj(kv_src), b, lk, h, dk)
        mixed = scaled_dot_attention(q, k, v)
        merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (b, lq, d))
        return self.out_proj(merged)

    @staticmethod
    def _split(x: Tensor, b: int, length: int, h: int, dk: int) -> Tensor:
        return ad.transpose(ad.reshape(x, (b, length, h, dk)), (0, 2, 1, 3))
