"""Small learnable building blocks shared by the codec, transformer and bridge."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

NORM_EPS = 1e-5


class Conv2d:
    """Conv layer owning its kernel (and optional bias) parameters."""

    def __init__(self, name: str, cin: int, cout: int, k: int,
                 rng: np.random.Generator, bias: bool = True,
                 stride: int = 1, dtype=np.float32):
        self.stride = stride
        self.w = Parameter(np.zeros((cout, cin, k, k), dtype), name + ".w")
        T.init_uniform(self.w, cin * k * k, rng)
        self.b = Parameter(np.zeros((cout,), dtype), name + ".b") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.w, self.b, stride=self.stride)

    def parameters(self) -> list[Parameter]:
        return [self.w] + ([self.b] if self.b is not None else [])


class ConvTranspose2d:
    """Transposed conv; stride 2 doubles the spatial extent."""

    def __init__(self, name: str, cin: int, cout: int, k: int,
                 rng: np.random.Generator, bias: bool = True,
                 stride: int = 2, dtype=np.float32):
        self.stride = stride
        # kernel layout matches the adjoint conv: (cin, cout, k, k)
        self.w = Parameter(np.zeros((cin, cout, k, k), dtype), name + ".w")
        T.init_uniform(self.w, cin * k * k, rng)
        self.b = Parameter(np.zeros((cout,), dtype), name + ".b") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.w, self.b, stride=self.stride)

    def parameters(self) -> list[Parameter]:
        return [self.w] + ([self.b] if self.b is not None else [])


def channel_spatial_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Normalize each channel of each sample over its spatial extent.

    x: (N, C, H, W); gamma/beta: (C, 1, 1).  Mean and (population) std are
    taken per (sample, channel); eps lands on the std, not the variance.
    """
    mu = T.mean(x, axis=(-2, -1), keepdims=True)
    centred = T.sub(x, mu)
    var = T.mean(T.mul(centred, centred), axis=(-2, -1), keepdims=True)
    xh = T.div(centred, T.add(T.sqrt(var), NORM_EPS))
    return T.add(T.mul(xh, gamma), beta)


class ChannelSpatialNorm:
    def __init__(self, name: str, channels: int, dtype=np.float32):
        self.gamma = Parameter(np.ones((channels, 1, 1), dtype), name + ".gamma")
        self.beta = Parameter(np.zeros((channels, 1, 1), dtype), name + ".beta")

    def __call__(self, x: Tensor) -> Tensor:
        return channel_spatial_norm(x, self.gamma, self.beta)

    def parameters(self) -> list[Parameter]:
        return [self.gamma, self.beta]
