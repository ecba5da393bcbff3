"""Parameter containers, layers, SGD and the ``.npz`` parameter checkpoint."""

from __future__ import annotations

import os
from typing import Iterator

import numpy as np

from .numerics import ConvSpec, Tensor, conv2d, matmul, mean, sqrt


class Module:
    """Base class: any ``Tensor`` attribute with ``requires_grad`` is a parameter."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
            elif isinstance(value, dict):
                for key, item in value.items():
                    if isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{key}", item

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: np.array(v.data) for k, v in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        extra = sorted(set(state) - set(params))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint {arr.shape}, model {p.shape}")
            arr = arr.copy()
            arr.setflags(write=False)
            p.data = arr

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True)


class Conv2d(Module):
    """Convolution layer; He-normal weights unless ``init_std`` is given."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, stride: int = 1,
                 padding: int | None = None, groups: int = 1, rng: np.random.Generator | None = None,
                 bias: bool = True, init_std: float | None = None, bias_init: float = 0.0):
        rng = np.random.default_rng() if rng is None else rng
        if padding is None:
            padding = kernel_size // 2
        self.spec = ConvSpec(kernel=(kernel_size, kernel_size), stride=stride, padding=padding, groups=groups)
        if in_channels % groups or out_channels % groups:
            raise ValueError(f"channels {in_channels}->{out_channels} not divisible by groups {groups}")
        fan_in = in_channels // groups * kernel_size * kernel_size
        std = np.sqrt(2.0 / fan_in) if init_std is None else init_std
        self.weight = _param(rng.standard_normal((out_channels, in_channels // groups, kernel_size, kernel_size)) * std)
        self.bias = _param(np.full(out_channels, bias_init)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.spec)


class Linear(Module):
    """Affine map on the last axis: ``x @ weight + bias``."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None,
                 bias: bool = True, scale: float | None = None):
        rng = np.random.default_rng() if rng is None else rng
        scale = 1.0 / np.sqrt(in_features) if scale is None else scale
        self.weight = _param(rng.standard_normal((in_features, out_features)) * scale)
        self.bias = _param(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class GroupNorm(Module):
    """
    Normalise each group of channels over (C/g, H, W), then a per-channel affine.

    Built from differentiable primitives, so it needs no dedicated backward.
    """

    def __init__(self, num_groups: int, num_channels: int, eps: float = 1e-5):
        if num_channels % num_groups:
            raise ValueError(f"{num_channels} channels not divisible into {num_groups} groups")
        self.num_groups = num_groups
        self.eps = eps
        self.weight = _param(np.ones((1, num_channels, 1, 1)))
        self.bias = _param(np.zeros((1, num_channels, 1, 1)))

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        g = x.reshape(n, self.num_groups, c // self.num_groups * h * w)
        centred = g - mean(g, axis=2, keepdims=True)
        var = mean(centred * centred, axis=2, keepdims=True)
        normed = (centred / sqrt(var + self.eps)).reshape(n, c, h, w)
        return normed * self.weight + self.bias


class SGD:
    """
    Minibatch SGD with momentum and L2 weight decay.

    The update is ``v <- momentum * v + (grad + weight_decay * p)`` followed
    by ``p <- p - lr * v``. Parameters without a gradient are treated as
    having a zero gradient, so they still decay.
    """

    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros(p.shape) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        for name, p in self.params.items():
            g = np.zeros(p.shape) if p.grad is None else p.grad
            g = g + self.weight_decay * p.data
            v = self.momentum * self.velocity[name] + g
            self.velocity[name] = v
            new = p.data - self.lr * v
            new.setflags(write=False)
            p.data = new


def save_checkpoint(path: str | os.PathLike, module: Module) -> None:
    """Write every parameter as a named array (shape stored explicitly by ``.npz``)."""
    np.savez(path, **module.state_dict())


def load_checkpoint(path: str | os.PathLike, module: Module) -> None:
    with np.load(path) as f:
        module.load_state_dict({k: f[k] for k in f.files})
