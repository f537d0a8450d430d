"""Reverse-mode traversal: ``grad``, ``backward`` and ``grad_of_grad``."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import (
    DoubleBackpropError,
    GraphFreedError,
    ShapeError,
    Tensor,
    as_tensor,
    set_grad_enabled,
)


def _topo_order(roots: Sequence[Tensor]) -> list[Tensor]:
    """Post-order of non-leaf tensors reachable from ``roots``.

    Children are visited in input order, which keeps the traversal (and hence
    floating-point accumulation order) deterministic.
    """
    order: list[Tensor] = []
    seen: set[int] = set()
    for root in roots:
        if root._ctx is None or id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            fn = t._ctx
            if fn.released:
                raise GraphFreedError(
                    f"backward through a freed graph (node '{fn.name}'); "
                    "pass retain_graph=True to the first backward call"
                )
            stack.append((t, True))
            for inp in reversed(fn.inputs):
                if inp._ctx is not None and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def grad(
    outputs: Tensor | Sequence[Tensor],
    inputs: Tensor | Sequence[Tensor],
    grad_outputs: Tensor | Sequence[Tensor] | None = None,
    retain_graph: bool | None = None,
    create_graph: bool = False,
) -> list[Tensor]:
    """Gradients of ``outputs`` w.r.t. ``inputs``.

    Inputs that the outputs do not depend on get a zero gradient. With
    ``create_graph=True`` the returned tensors carry their own graph and can
    be differentiated again.
    """
    outputs = [outputs] if isinstance(outputs, Tensor) else list(outputs)
    single = isinstance(inputs, Tensor)
    inputs = [inputs] if single else list(inputs)
    if retain_graph is None:
        retain_graph = create_graph
    if grad_outputs is None:
        for o in outputs:
            if o.size != 1:
                raise ShapeError(f"grad: implicit output gradient needs a scalar output, got shape {o.shape}")
        grad_outputs = [Tensor(np.ones(o.shape)) for o in outputs]
    elif isinstance(grad_outputs, Tensor):
        grad_outputs = [grad_outputs]
    grad_outputs = [as_tensor(g) for g in grad_outputs]

    order = _topo_order(outputs)
    targets = {id(t) for t in inputs}

    # nodes that lead to at least one requested input
    relevant: set[int] = set()
    for t in order:
        if id(t) in targets or any(
            (id(i) in relevant or id(i) in targets) for i in t._ctx.inputs if i.requires_grad
        ):
            relevant.add(id(t))

    grads: dict[int, Tensor] = {}

    def accumulate(t: Tensor, g: Tensor) -> None:
        prev = grads.get(id(t))
        grads[id(t)] = g if prev is None else ops.add(prev, g)

    with set_grad_enabled(create_graph):
        for o, g in zip(outputs, grad_outputs):
            if g.shape != o.shape:
                raise ShapeError(f"grad: output gradient shape {g.shape} does not match output {o.shape}")
            if o.requires_grad:
                accumulate(o, g)
        for t in reversed(order):
            if id(t) not in relevant:
                continue
            g = grads.get(id(t))
            if g is None:
                continue
            fn = t._ctx
            if create_graph and not fn.differentiable_backward:
                raise DoubleBackpropError(
                    f"no double-backprop: primitive '{fn.name}' has no differentiable backward rule"
                )
            saved_needs = fn.needs_input_grad
            fn.needs_input_grad = tuple(
                n and (id(i) in relevant or id(i) in targets) for n, i in zip(saved_needs, fn.inputs)
            )
            try:
                in_grads = fn.backward(g)
            finally:
                fn.needs_input_grad = saved_needs
            for inp, ig in zip(fn.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if id(inp) not in relevant and id(inp) not in targets:
                    continue
                if ig.shape != inp.shape:
                    raise ShapeError(
                        f"{fn.name}: backward produced gradient of shape {ig.shape} for input {inp.shape}"
                    )
                accumulate(inp, ig)

    result = []
    for t in inputs:
        g = grads.get(id(t))
        result.append(g if g is not None else Tensor(np.zeros(t.shape)))

    if not retain_graph:
        for t in order:
            t._ctx.release()
    return result


def backward(loss: Tensor, retain_graph: bool = False, create_graph: bool = False) -> dict[int, Tensor]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every requires_grad leaf.

    Returns a map ``id(leaf) -> gradient``.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    order = _topo_order([loss])
    leaves: list[Tensor] = []
    seen: set[int] = set()
    for t in order:
        for inp in t._ctx.inputs:
            if inp._ctx is None and inp.requires_grad and id(inp) not in seen:
                seen.add(id(inp))
                leaves.append(inp)
    gs = grad(loss, leaves, retain_graph=retain_graph, create_graph=create_graph)
    out = {}
    for leaf, g in zip(leaves, gs):
        if not create_graph:
            g = g.detach()
        leaf.grad = g if leaf.grad is None else (ops.add(leaf.grad, g) if create_graph else Tensor(leaf.grad.data + g.data))
        out[id(leaf)] = leaf.grad
    return out


def grad_of_grad(f: Callable[[Tensor], Tensor], x) -> Tensor:
    """Gradient of ``sum(grad f(x))`` with respect to ``x``.

    For scalar ``x`` this is f''(x); in general it is the Hessian applied to
    a ones vector. The first gradient is taken with ``create_graph=True`` so
    its backward rules become graph nodes.
    """
    x = Tensor(as_tensor(x).data, requires_grad=True)
    with set_grad_enabled(True):
        y = f(x)
        if y.size != 1:
            y = ops.sum(y)
        (g1,) = grad(y, x, create_graph=True)
        if not g1.requires_grad:
            return Tensor(np.zeros(x.shape))
        (g2,) = grad(ops.sum(g1), x)
    return g2


Tensor.backward = backward
