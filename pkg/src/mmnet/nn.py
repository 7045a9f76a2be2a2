"""Parameter containers: a tiny Module base plus conv/batchnorm/linear layers."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .tensor import Tensor, get_default_dtype


class Module:
    training: bool = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield f"{name}.{i}", v
                    elif isinstance(v, (list, tuple)):
                        for j, u in enumerate(v):
                            if isinstance(u, Module):
                                yield f"{name}.{i}.{j}", u

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in vars(self).items():
            if isinstance(value, np.ndarray):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self._children():
            yield from child.modules()

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


def _param(arr, name=None) -> Tensor:
    return Tensor(arr, dtype=get_default_dtype(), requires_grad=True, name=name)


class Conv(Module):
    """N-d convolution with bias; Kaiming-normal (fan-in) initialisation."""

    def __init__(self, cin: int, cout: int, kernel, stride=1, padding=0, nd: int = 3,
                 rng: np.random.Generator | None = None, bias: bool = True):
        rng = rng or np.random.default_rng(0)
        kernel = (kernel,) * nd if isinstance(kernel, int) else tuple(kernel)
        fan_in = cin * math.prod(kernel)
        self.weight = _param(rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(cout, cin) + kernel))
        self.bias = _param(np.zeros(cout)) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    def __init__(self, channels: int):
        self.gamma = _param(np.ones(channels))
        self.beta = _param(np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.decay = ops.BN_DECAY  # 1.0 freezes the running statistics

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batchnorm(x, self.gamma, self.beta, "train" if self.training else "eval",
                             self.running_mean, self.running_var, self.decay)


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / math.sqrt(fin)
        self.weight = _param(rng.uniform(-bound, bound, size=(fout, fin)))
        self.bias = _param(np.zeros(fout))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)
