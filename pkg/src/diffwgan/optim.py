"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError, Tensor


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0


def adamw_step(params: list[np.ndarray], grads: list[np.ndarray | None], state: OptimizerState, lr: float,
               beta1: float, beta2: float, weight_decay: float, eps: float = 1e-8) -> None:
    """In-place AdamW update of ``params``.

    Missing gradients count as zero; the decoupled decay ``p -= lr * wd * p``
    still applies to them.
    """
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


@dataclass
class AdamW:
    params: list[Tensor]
    lr: float = 1e-4
    betas: tuple[float, float] = (0.5, 0.9)
    weight_decay: float = 1e-6
    eps: float = 1e-8
    state: OptimizerState = field(init=False)

    def __post_init__(self):
        self.state = OptimizerState([np.zeros_like(p.data) for p in self.params],
                                    [np.zeros_like(p.data) for p in self.params])

    @property
    def step_count(self) -> int:
        return self.state.step

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, names: list[str] | None = None) -> None:
        grads = [None if p.grad is None else p.grad.data for p in self.params]
        for i, g in enumerate(grads):
            if g is not None and not np.isfinite(g).all():
                who = names[i] if names else f"parameter {i}"
                raise NonFiniteError(f"non-finite gradient in {who}")
        adamw_step([p.data for p in self.params], grads, self.state, self.lr, self.betas[0], self.betas[1],
                   self.weight_decay, self.eps)
