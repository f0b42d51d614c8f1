"""Parameter containers with deterministic dotted names."""

from __future__ import annotations

import math
from collections import OrderedDict
from typing import Iterator

import numpy as np

from ..numerics import Tensor, conv2d, depthwise_conv2d, layer_norm, linear

# Kaiming fan-in gain. SiLU has no closed-form gain; the ReLU value sqrt(2) is used.
CONV_GAIN = math.sqrt(2.0)


class Module:
    """Base class: attributes that are parameters or sub-modules are registered in order."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
            value.name = name
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data) for n, p in self.named_parameters())

    def load_state_dict(self, state, strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict and set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"state dict mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, arr in state.items():
            p = own[name]
            arr = np.asarray(arr)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(arr: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


def kaiming_normal(rng, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * (CONV_GAIN / math.sqrt(fan_in))


def xavier_uniform(rng, fan_out: int, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


class Conv2d(Module):
    """3x3 (by default) convolution with zero "same" padding.

    ``zero_init`` starts the kernel at zero (used to close residual branches);
    the RNG is advanced either way so later layers draw the same values.
    """

    def __init__(self, cin, cout, rng, k: int = 3, dtype=np.float64, zero_init: bool = False):
        super().__init__()
        w = kaiming_normal(rng, (cout, cin, k, k), cin * k * k)
        self.weight = param(np.zeros_like(w) if zero_init else w, dtype)
        self.bias = param(np.zeros(cout), dtype)
        self.pad = (k - 1) // 2

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, zero_pad=self.pad)


class DWConv(Module):
    def __init__(self, c, rng, k: int = 3, dtype=np.float64):
        super().__init__()
        self.weight = param(kaiming_normal(rng, (c, 1, k, k), k * k), dtype)
        self.bias = param(np.zeros(c), dtype)

    def forward(self, x):
        return depthwise_conv2d(x, self.weight, self.bias)


class Linear(Module):
    def __init__(self, cin, cout, rng, bias: bool = True, dtype=np.float64):
        super().__init__()
        self.weight = param(xavier_uniform(rng, cout, cin), dtype)
        self.bias = param(np.zeros(cout), dtype) if bias else None

    def forward(self, x):
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, c, eps: float = 1e-6, dtype=np.float64):
        super().__init__()
        self.weight = param(np.ones(c), dtype)
        self.bias = param(np.zeros(c), dtype)
        self.eps = eps

    def forward(self, x):
        return layer_norm(x, self.weight, self.bias, self.eps)
