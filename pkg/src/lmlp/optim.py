"""Adaptive-moment optimizer with decoupled weight decay and linear warmup."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, UsageError


class AdamW:
    """Per-parameter first/second moment estimates; weight decay is applied
    directly to the parameter (decoupled from the adaptive update)."""

    def __init__(self, named_params: list[tuple[str, Tensor]], lr: float = 2e-4,
                 betas: tuple[float, float] = (0.9, 0.9), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        if not 0.0 <= betas[0] < 1.0 or not 0.0 <= betas[1] < 1.0:
            raise UsageError("betas must lie in [0, 1)")
        self.names = [name for name, _ in named_params]
        self.params = [p for _, p in named_params]
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.exp_avg = [np.zeros_like(p.data) for p in self.params]
        self.exp_avg_sq = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        """One update using each parameter's accumulated gradient."""
        lr_now = self.lr if lr is None else lr
        beta1, beta2 = self.betas
        self.step_count += 1
        bias1 = 1.0 - beta1 ** self.step_count
        bias2 = 1.0 - beta2 ** self.step_count
        for p, m, v in zip(self.params, self.exp_avg, self.exp_avg_sq):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.data -= lr_now * (update + self.weight_decay * p.data)

    # -- persistence ---------------------------------------------------------
    def state_arrays(self) -> tuple[int, list[np.ndarray], list[np.ndarray]]:
        return self.step_count, self.exp_avg, self.exp_avg_sq

    def load_state(self, step_count: int, exp_avg: list[np.ndarray],
                   exp_avg_sq: list[np.ndarray]) -> None:
        if len(exp_avg) != len(self.params) or len(exp_avg_sq) != len(self.params):
            raise UsageError("optimizer state does not match the parameter list")
        self.step_count = step_count
        for slot, incoming in zip(self.exp_avg, exp_avg):
            slot[...] = incoming.reshape(slot.shape)
        for slot, incoming in zip(self.exp_avg_sq, exp_avg_sq):
            slot[...] = incoming.reshape(slot.shape)


def warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    """Linear ramp to base_lr over warmup_steps, constant afterwards."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, (step + 1) / warmup_steps)


__all__ = ["AdamW", "warmup_lr"]
