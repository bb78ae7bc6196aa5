"""Finite-difference verification of analytic gradients, model-wide."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, finite_difference, gradcheck_entry
from .model import ModelConfig, PoseLiftModel, pose_loss
from .skeleton import Skeleton


def toy_skeleton(joints: int = 5) -> Skeleton:
    """Small branching tree for fast checks: root with two child chains."""
    if joints < 2:
        raise ValueError("toy skeleton needs at least 2 joints")
    parents = [-1]
    for j in range(1, joints):
        parents.append((j - 1) // 2)  # heap-shaped binary tree
    names = tuple(f"j{i:02d}" for i in range(joints))
    return Skeleton(names, tuple(parents))


def tiny_config() -> ModelConfig:
    return ModelConfig(joints=5, frames=6, hidden_dim=8, heads=2, layers=2,
                       prototypes=3, compression_ratio=3, state_dim=4)


@dataclass
class GradCheckRow:
    name: str
    checked: int
    max_rel_err: float


def model_gradcheck(cfg: ModelConfig, skeleton: Skeleton, seed: int = 0,
                    batch: int = 2, max_entries: int = 24,
                    h: float = 1e-5) -> list[GradCheckRow]:
    """Compare backward() against central differences per parameter.

    Every parameter tensor is sampled at up to max_entries positions;
    small tensors are checked exhaustively.
    """
    model = PoseLiftModel(cfg, seed=seed, skeleton=skeleton)
    rng = np.random.default_rng(seed + 1)
    inputs = Tensor(rng.uniform(-1.0, 1.0, size=(batch, cfg.frames, cfg.joints, 2)))
    targets = Tensor(rng.uniform(-1.0, 1.0, size=(batch, cfg.frames, cfg.joints, 3)))

    def loss_fn() -> Tensor:
        pred = model(inputs)
        total, _, _ = pose_loss(pred, targets, cfg.lambda_velocity)
        return total

    loss = loss_fn()
    loss.backward()

    rows = []
    for p_index, (name, param) in enumerate(model.named_parameters()):
        grad = param.grad if param.grad is not None else np.zeros_like(param.data)
        size = param.data.size
        pick = np.random.default_rng([seed, p_index])
        if size <= max_entries:
            flat_indices = np.arange(size)
        else:
            flat_indices = pick.choice(size, size=max_entries, replace=False)
        worst = 0.0
        for flat in flat_indices:
            idx = np.unravel_index(int(flat), param.data.shape)
            numeric = finite_difference(loss_fn, param, idx, h=h)
            analytic = float(grad[idx])
            # Floor the denominator at the finite-difference resolution
            # limit (~ulp(loss)/h); below it only absolute agreement counts.
            worst = max(worst, gradcheck_entry(analytic, numeric, floor=1e-4))
        rows.append(GradCheckRow(name=name, checked=len(flat_indices), max_rel_err=worst))
    return rows
