"""AdamW with decoupled weight decay, gradient clipping, and the lr schedule.

The schedule follows the training recipe: linear warmup from 0.01 * lr to
lr over the warmup epochs, then cosine decay to lr_min at the final epoch.
`lr_at` takes a fractional epoch so per-step granularity falls out for free.
The effective base lr obeys the linear scaling rule lr_b * scale / 256.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass(frozen=True)
class Schedule:
    """Warmup-then-cosine learning-rate profile."""

    base_lr: float
    warmup_epochs: float = 4.0
    total_epochs: float = 20.0
    lr_min: float = 1e-6

    def __post_init__(self) -> None:
        if self.warmup_epochs > self.total_epochs:
            raise ValueError("warmup must not exceed total epochs")


def lr_at(schedule: Schedule, epoch: float) -> float:
    """Learning rate at a (fractional) epoch index."""
    lr = schedule.base_lr
    if schedule.warmup_epochs > 0 and epoch < schedule.warmup_epochs:
        frac = epoch / schedule.warmup_epochs
        return lr * (0.01 + 0.99 * frac)
    span = schedule.total_epochs - schedule.warmup_epochs
    if span <= 0:
        return schedule.lr_min
    progress = min((epoch - schedule.warmup_epochs) / span, 1.0)
    return schedule.lr_min + (lr - schedule.lr_min) * 0.5 * (1.0 + np.cos(np.pi * progress))


def scaled_lr(lr_b: float, batch_size: int, n_devices: int = 1) -> float:
    """Linear scaling rule: lr_b * (batch_size * n_devices) / 256."""
    return lr_b * (batch_size * n_devices) / 256.0


def clip_global_norm(params, max_norm: float = 1.0) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    total = 0.0
    grads = []
    for p in params:
        if p.grad is not None:
            grads.append(p.grad)
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class AdamW:
    """AdamW with bias correction and decoupled weight decay."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params: list[Tensor] = list(params)
        if not all(p.requires_grad for p in self.params):
            raise ValueError("optimizer parameters must require gradients")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_arrays(self) -> dict:
        """Optimizer state as named arrays for checkpointing."""
        out = {"adamw.step": np.array([self.step_count], np.int64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"adamw.m.{i}"] = m
            out[f"adamw.v.{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        self.step_count = int(arrays["adamw.step"][0])
        for i in range(len(self.params)):
            self.m[i] = np.array(arrays[f"adamw.m.{i}"])
            self.v[i] = np.array(arrays[f"adamw.v.{i}"])
