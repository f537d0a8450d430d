"""Finite-difference gradient checks, first and second order.

``PRIMITIVE_CASES`` holds one randomized check per primitive; the CLI's
``gradcheck`` command and the test-suite both run through it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ops
from .engine import grad
from .tensor import Tensor, set_grad_enabled


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5,
                 weights: np.ndarray | None = None) -> list[np.ndarray]:
    """Central differences of ``sum(weights * f(*arrays))`` per input."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]

    def scalar(xs):
        with set_grad_enabled(False):
            y = f(*[Tensor(x) for x in xs]).data
        return float((y * weights).sum()) if weights is not None else float(y.sum())

    out = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = scalar(arrays)
            flat[i] = orig - h
            fm = scalar(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def analytic_grad(f: Callable[..., Tensor], arrays: Sequence[np.ndarray],
                  weights: np.ndarray | None = None) -> list[np.ndarray]:
    xs = [Tensor(a, requires_grad=True) for a in arrays]
    y = f(*xs)
    if weights is not None:
        y = ops.mul(y, Tensor(weights))
    gs = grad(ops.sum(y), xs)
    return [g.data for g in gs]


def gradcheck(f: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5,
              seed: int = 0) -> float:
    """Worst relative error between analytic and numeric first derivatives.

    The output is contracted with a fixed random weight tensor so that every
    output element contributes with a distinct coefficient.
    """
    rng = np.random.default_rng(seed)
    with set_grad_enabled(False):
        y = f(*[Tensor(a) for a in arrays])
    w = rng.standard_normal(y.shape)
    ana = analytic_grad(f, arrays, w)
    num = numeric_grad(f, arrays, h, w)
    return max(rel_error(a, n) for a, n in zip(ana, num))


def gradgradcheck(f: Callable[..., Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5,
                  seed: int = 0) -> float:
    """Check the derivative of ``<v, grad(<w, f>)>`` against finite differences."""
    rng = np.random.default_rng(seed)
    with set_grad_enabled(False):
        y = f(*[Tensor(a) for a in arrays])
    w = rng.standard_normal(y.shape)
    vs = [rng.standard_normal(np.shape(a)) for a in arrays]

    def contracted_grad(xs: list[Tensor]) -> Tensor:
        # <v, d<w, f>/dx>, kept differentiable with respect to xs
        out = ops.sum(ops.mul(f(*xs), Tensor(w)))
        gs = grad(out, xs, create_graph=True)
        total = ops.sum(ops.mul(gs[0], Tensor(vs[0])))
        for g, v in zip(gs[1:], vs[1:]):
            total = ops.add(total, ops.sum(ops.mul(g, Tensor(v))))
        return total

    def first_order(*xs):
        with set_grad_enabled(True):
            return contracted_grad([Tensor(x.data, requires_grad=True) for x in xs]).detach()

    def ana_fn(*arrs):
        with set_grad_enabled(True):
            xs = [Tensor(a, requires_grad=True) for a in arrs]
            total = contracted_grad(xs)
            if not total.requires_grad:
                return [np.zeros(np.shape(a)) for a in arrs]
            return [g.data for g in grad(total, xs)]

    ana = ana_fn(*arrays)
    num = numeric_grad(first_order, arrays, h)
    return max(rel_error(a, n) for a, n in zip(ana, num))


# ----------------------------------------------------------- per-primitive suite


@dataclass
class Case:
    name: str
    fn: Callable[..., Tensor]
    shapes: list[tuple[int, ...]]
    positive: bool = False
    away_from_zero: bool = False
    second_order: bool = True

    def inputs(self, rng: np.random.Generator) -> list[np.ndarray]:
        arrays = []
        for s in self.shapes:
            a = rng.standard_normal(s)
            if self.positive:
                a = np.abs(a) + 0.5
            elif self.away_from_zero:
                a = np.sign(a) * (np.abs(a) + 0.2)
            arrays.append(a)
        return arrays


PRIMITIVE_CASES: list[Case] = [
    Case("add", ops.add, [(3, 4), (4,)]),
    Case("sub", ops.sub, [(3, 4), (3, 1)]),
    Case("mul", ops.mul, [(2, 3), (2, 3)]),
    Case("div", ops.div, [(2, 3), (2, 3)], positive=True),
    Case("neg", ops.neg, [(5,)]),
    Case("pow", lambda a: ops.pow_scalar(a, 3.0), [(4,)]),
    Case("exp", ops.exp, [(2, 3)]),
    Case("log", ops.log, [(2, 3)], positive=True),
    Case("sqrt", ops.sqrt, [(2, 3)], positive=True),
    Case("square", ops.square, [(2, 3)]),
    Case("abs", lambda a: ops.mul(ops.abs(a), a), [(6,)], away_from_zero=True),
    Case("tanh", ops.tanh, [(2, 3)]),
    Case("sigmoid", ops.sigmoid, [(2, 3)]),
    Case("silu", ops.silu, [(2, 3)]),
    Case("leaky_relu", lambda a: ops.mul(ops.leaky_relu(a, 0.2), a), [(6,)], away_from_zero=True),
    Case("clamp_min", lambda a: ops.square(ops.clamp_min(a, 0.0)), [(6,)], away_from_zero=True),
    Case("matmul", ops.matmul, [(3, 4), (2, 4, 5)]),
    Case("sum", lambda a: ops.square(ops.sum(a, axis=1)), [(3, 4)]),
    Case("mean", lambda a: ops.square(ops.mean(a, axis=0, keepdims=True)), [(3, 4)]),
    Case("l2_norm", lambda a: ops.l2_norm(a, axis=1), [(3, 4)]),
    Case("softmax", lambda a: ops.softmax(a, axis=-1), [(2, 5)]),
    Case("layer_norm", ops.layer_norm, [(3, 6)]),
    Case("reshape", lambda a: ops.square(ops.reshape(a, (6, 2))), [(3, 4)]),
    Case("transpose", lambda a: ops.square(ops.transpose(a, (1, 0, 2))), [(2, 3, 2)]),
    Case("broadcast_to", lambda a: ops.square(ops.broadcast_to(a, (4, 3))), [(1, 3)]),
    Case("sum_to", lambda a: ops.square(ops.sum_to(a, (1, 3))), [(4, 3)]),
    Case("index", lambda a: ops.square(ops.getitem(a, (slice(1, 3), np.array([0, 2, 2])))), [(4, 3)]),
    Case("embed", lambda w: ops.square(ops.embed(w, np.array([2, 0, 2, 1]))), [(3, 4)]),
    Case("scatter", lambda a: ops.square(ops.scatter(a, np.array([0, 2, 0]), (4,))), [(3,)]),
    Case("concat", lambda a, b: ops.square(ops.concat([a, b], axis=1)), [(2, 2), (2, 3)]),
    Case("pad", lambda a: ops.square(ops.pad(a, ((1, 0), (2, 1)))), [(2, 3)]),
    Case("unfold2d", lambda a: ops.square(ops.unfold2d(a, (2, 3), (1, 2), (2, 1))), [(1, 2, 5, 6)]),
    Case("fold2d", lambda a: ops.square(ops.fold2d(a, (1, 1, 4, 4), (2, 2))), [(1, 4, 9)]),
    Case("conv1d", lambda x, w, b: ops.tanh(ops.conv1d(x, w, b, padding=2, dilation=2)),
         [(2, 3, 7), (4, 3, 3), (4,)]),
    Case("conv2d", lambda x, w, b: ops.tanh(ops.conv2d(x, w, b, stride=2, padding=1)),
         [(2, 2, 5, 6), (3, 2, 3, 3), (3,)]),
]


def run_primitive_checks(only: str | None = None, second_order: bool = True, seed: int = 0,
                         cases: Sequence[Case] | None = None) -> list[tuple[str, float, float | None]]:
    """Return (name, worst first-order rel. error, worst second-order rel. error)."""
    cases = PRIMITIVE_CASES if cases is None else cases
    if only is not None:
        cases = [c for c in cases if c.name == only]
        if not cases:
            raise KeyError(f"unknown primitive '{only}'")
    rng = np.random.default_rng(seed)
    results = []
    for case in cases:
        arrays = case.inputs(rng)
        e1 = gradcheck(case.fn, arrays, seed=seed)
        e2 = gradgradcheck(case.fn, arrays, seed=seed) if (second_order and case.second_order) else None
        results.append((case.name, e1, e2))
    return results
