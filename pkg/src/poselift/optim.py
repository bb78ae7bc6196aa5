"""AdamW with decoupled weight decay, plus the exponential lr schedule."""

from __future__ import annotations

import numpy as np

from .autodiff import NumericError, Tensor


class AdamW:
    """Decoupled-decay Adam over named parameter tensors.

    Decay multiplies parameters by (1 - lr * weight_decay) before the
    bias-corrected adaptive step, so a zero gradient still shrinks them.
    """

    def __init__(self, named_params: list[tuple[str, Tensor]], lr: float = 5e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(t.data) for _, t in self.named_params]
        self.v = [np.zeros_like(t.data) for _, t in self.named_params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for i, (name, tensor) in enumerate(self.named_params):
            grad = tensor.grad
            if grad is None:
                grad = np.zeros_like(tensor.data)
            if not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite gradient for parameter '{name}'")
            if self.weight_decay != 0.0:
                tensor.data *= (1.0 - lr * self.weight_decay)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            tensor.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grads(self) -> None:
        for _, tensor in self.named_params:
            tensor.grad = None


def lr_schedule(base_lr: float, epoch: int, decay: float = 0.99) -> float:
    """Exponential decay: base_lr * decay ** epoch (epoch 0 = base_lr)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return base_lr * decay ** epoch
