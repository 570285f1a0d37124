"""Trainable primitives: parameters, linear / pReLU / batch-norm layers, Adam."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, batchnorm_train, prelu


class Parameter(Tensor):
    """A named leaf tensor with a persistent gradient buffer."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear:
    """y = x W + b with exact taped gradients for x, W and b.

    ``scale`` multiplies the glorot-uniform init. Layers followed by a
    batch norm are insensitive to it function-wise, but a smaller scale
    makes a fixed optimizer step a proportionally larger relative update,
    which is what the short desk-scale training budgets need.
    """

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, name: str,
                 scale: float = 1.0):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Parameter(scale * glorot_uniform(rng, in_dim, out_dim), f"{name}.weight")
        self.bias = Parameter(np.zeros(out_dim), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[-1] != self.in_dim:
            raise ShapeError(
                f"linear expects input width {self.in_dim}, got shape {x.data.shape}")
        return x @ self.weight + self.bias

    def parameters(self):
        return [self.weight, self.bias]


class PReLU:
    """Per-channel learnable negative slope, initialized at 0.25."""

    def __init__(self, channels: int, name: str, init_slope: float = 0.25):
        self.slope = Parameter(np.full(channels, init_slope), f"{name}.slope")

    def __call__(self, x: Tensor) -> Tensor:
        return prelu(x, self.slope)

    def parameters(self):
        return [self.slope]


class BatchNorm:
    """Per-channel batch normalization over rows.

    Train mode normalizes with batch statistics and updates the running
    buffers; eval mode applies the running statistics as constants. The
    running variance stores the unbiased estimate.
    """

    def __init__(self, channels: int, name: str, eps: float = 1e-5, momentum: float = 0.1):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.training = True
        self.scale = Parameter(np.ones(channels), f"{name}.scale")
        self.shift = Parameter(np.zeros(channels), f"{name}.shift")
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self._name = name

    def __call__(self, x: Tensor) -> Tensor:
        if self.training:
            out, mean, var = batchnorm_train(x, self.scale, self.shift, self.eps)
            rows = x.data.shape[0]
            unbiased = var * (rows / (rows - 1.0))
            m = self.momentum
            self.running_mean = (1.0 - m) * self.running_mean + m * mean
            self.running_var = (1.0 - m) * self.running_var + m * unbiased
            return out
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        return (x - self.running_mean) * (self.scale * inv) + self.shift

    def parameters(self):
        return [self.scale, self.shift]

    def buffers(self):
        return [(f"{self._name}.running_mean", self.running_mean),
                (f"{self._name}.running_var", self.running_var)]

    def load_buffers(self, entries: dict):
        self.running_mean = entries[f"{self._name}.running_mean"].copy()
        self.running_var = entries[f"{self._name}.running_var"].copy()


class Adam:
    """Adam with bias-corrected first and second moments."""

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        correct1 = 1.0 - self.beta1 ** self.step_count
        correct2 = 1.0 - self.beta2 ** self.step_count
        for p, m, v in zip(self.params, self.first_moment, self.second_moment):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)
