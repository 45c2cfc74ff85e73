"""Parameterized building blocks on top of the autodiff core.

Each block owns its Tensors and exposes params(prefix) returning a flat
name -> Tensor dict for optimizers and checkpoints.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear:
    """Affine map on the last axis: x @ w + b."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.w = ad.Tensor(uniform_fan_in(rng, fan_in, (fan_in, fan_out), dtype),
                           requires_grad=True)
        self.b = ad.Tensor(uniform_fan_in(rng, fan_in, (fan_out,), dtype),
                           requires_grad=True)

    def __call__(self, x) -> ad.Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)

    def params(self, prefix: str) -> dict:
        return {prefix + ".w": self.w, prefix + ".b": self.b}


class LayerNorm:
    """Layer normalization over the last axis with learnable gain and bias."""

    def __init__(self, dim: int, dtype=np.float32):
        self.gain = ad.Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.bias = ad.Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x) -> ad.Tensor:
        return ad.layer_norm(x, self.gain, self.bias)

    def params(self, prefix: str) -> dict:
        return {prefix + ".gain": self.gain, prefix + ".bias": self.bias}


class GroupNorm:
    """Group normalization over contiguous channel groups at each position."""

    def __init__(self, dim: int, groups: int, dtype=np.float32):
        if dim % groups:
            raise ValueError(f"channels {dim} not divisible by groups {groups}")
        self.groups = groups
        self.gain = ad.Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.bias = ad.Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x) -> ad.Tensor:
        return ad.group_norm(x, self.gain, self.bias, self.groups)

    def params(self, prefix: str) -> dict:
        return {prefix + ".gain": self.gain, prefix + ".bias": self.bias}


class DepthwiseConv1d:
    """Depthwise conv along the sequence axis, kernel 3, channel multiplier."""

    def __init__(self, in_channels: int, multiplier: int, rng: np.random.Generator,
                 dtype=np.float32):
        cout = in_channels * multiplier
        self.multiplier = multiplier
        self.w = ad.Tensor(uniform_fan_in(rng, 3, (cout, 3), dtype),
                           requires_grad=True)
        self.b = ad.Tensor(uniform_fan_in(rng, 3, (cout,), dtype),
                           requires_grad=True)

    def __call__(self, x) -> ad.Tensor:
        return ad.depthwise_conv1d(x, self.w, self.b, self.multiplier)

    def params(self, prefix: str) -> dict:
        return {prefix + ".w": self.w, prefix + ".b": self.b}


def collect_params(parts: dict) -> dict:
    """Merge {prefix: block} into one flat name -> Tensor dict."""
    out: dict = {}
    for prefix, block in parts.items():
        if isinstance(block, ad.Tensor):
            out[prefix] = block
        else:
            out.update(block.params(prefix))
    return out


def param_count(params: dict) -> int:
    return sum(t.data.size for t in params.values())


def param_bytes(params: dict) -> int:
    return sum(t.data.nbytes for t in params.values())
