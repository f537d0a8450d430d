"""Parameter containers and the standard layers used by both networks."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Holds parameters and sub-modules as attributes.

    Parameter order follows attribute assignment order, which keeps
    checkpoints and optimizer state deterministic.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def param(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=True)


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """y = x @ W + b over the last axis; W has shape (in, out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 zero_init: bool = False):
        w = np.zeros((n_in, n_out)) if zero_init else _uniform(rng, (n_in, n_out), n_in)
        self.weight = param(w)
        self.bias = param(np.zeros(n_out) if zero_init else _uniform(rng, (n_out,), n_in)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight) if x.ndim >= 2 else ad.reshape(
            ad.matmul(ad.reshape(x, (1, -1)), self.weight), (-1,))
        if self.bias is not None:
            y = ad.add(y, self.bias)
        return y


class Conv1d(Module):
    def __init__(self, n_in: int, n_out: int, kernel: int, rng: np.random.Generator, dilation: int = 1,
                 bias: bool = True, zero_init: bool = False):
        fan_in = n_in * kernel
        self.weight = param(np.zeros((n_out, n_in, kernel)) if zero_init
                            else _uniform(rng, (n_out, n_in, kernel), fan_in))
        self.bias = param(np.zeros(n_out) if zero_init else _uniform(rng, (n_out,), fan_in)) if bias else None
        self.kernel = kernel
        self.dilation = dilation

    def forward(self, x: Tensor) -> Tensor:
        # "same" padding for odd kernels
        pad = self.dilation * (self.kernel - 1) // 2
        return ad.conv1d(x, self.weight, self.bias, padding=pad, dilation=self.dilation)


class Conv2d(Module):
    def __init__(self, n_in: int, n_out: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 bias: bool = True):
        fan_in = n_in * kernel * kernel
        self.weight = param(_uniform(rng, (n_out, n_in, kernel, kernel), fan_in))
        self.bias = param(_uniform(rng, (n_out,), fan_in)) if bias else None
        self.kernel = kernel
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.kernel // 2)


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator, scale: float = 1.0):
        self.weight = param(rng.standard_normal((n, dim)) * scale)

    def forward(self, ids) -> Tensor:
        return ad.embed(self.weight, np.asarray(ids))


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = param(np.ones(dim))
        self.beta = param(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return ad.add(ad.mul(ad.layer_norm(x), self.gamma), self.beta)


def sinusoidal_embedding(positions, dim: int) -> np.ndarray:
    """(N,) positions -> (N, dim) sin/cos features with geometric frequencies."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = positions[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    if dim % 2:
        emb = np.pad(emb, ((0, 0), (0, 1)))
    return emb


def channels_last(x: Tensor) -> Tensor:
    """(B, C, L) <-> (B, L, C)."""
    return ad.transpose(x, (0, 2, 1))
