"""Tensor container, grad-mode switch and the base class for primitives."""

from __future__ import annotations

import contextlib
import threading
import weakref

import numpy as np


class AutodiffError(RuntimeError):
    pass


class ShapeError(AutodiffError, ValueError):
    pass


class NonFiniteError(AutodiffError, FloatingPointError):
    pass


class GraphFreedError(AutodiffError):
    pass


class DoubleBackpropError(AutodiffError):
    pass


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def set_grad_enabled(mode: bool):
    prev = is_grad_enabled()
    _state.enabled = bool(mode)
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    return set_grad_enabled(False)


def enable_grad():
    return set_grad_enabled(True)


class Tensor:
    """Dense float64 array that can take part in a differentiation graph.

    ``_ctx`` points at the :class:`Function` node that produced the tensor,
    or is ``None`` for leaves and constants.
    """

    __slots__ = ("data", "requires_grad", "grad", "_ctx", "name", "__weakref__")
    # make ndarray <op> Tensor dispatch to Tensor's reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.asarray(arr, order="C")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Tensor | None = None
        self._ctx: Function | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        op = f", op={self._ctx.name}" if self._ctx is not None else ""
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{op}{rg})"


def _raise_item(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """One node of the graph: a primitive with a forward and a backward rule.

    ``backward`` receives the output gradient as a :class:`Tensor` and must
    build input gradients out of other primitives, so that running it with
    grad enabled records a differentiable graph. Primitives whose backward
    works on raw arrays set ``differentiable_backward = False``.

    Primitives that can turn finite inputs into NaN/Inf set ``check_finite``;
    since every such source is checked, non-finite values cannot propagate
    silently through the purely linear or shape-moving ones.
    """

    name = "function"
    differentiable_backward = True
    check_finite = False

    def __init__(self):
        self.inputs: tuple[Tensor, ...] = ()
        self.needs_input_grad: tuple[bool, ...] = ()
        self._out_ref = None
        self.released = False

    @property
    def out(self) -> Tensor | None:
        # weak so that node <-> output does not form a reference cycle
        return self._out_ref() if self._out_ref is not None else None

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: Tensor):
        raise NotImplementedError

    def release(self) -> None:
        self.inputs = ()
        self._out_ref = None
        self.released = True

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        fn = cls()
        for key, value in kwargs.items():
            setattr(fn, key, value)
        tensors = tuple(as_tensor(x) for x in inputs)
        out_data = fn.forward(*(t.data for t in tensors))
        out_data = np.asarray(out_data, dtype=np.float64)
        # a single reduction catches any NaN/Inf; confirm elementwise before raising
        if fn.check_finite and not np.isfinite(out_data.sum()) and not np.isfinite(out_data).all():
            bad = np.count_nonzero(~np.isfinite(out_data))
            raise NonFiniteError(
                f"{fn.name}: produced {bad} non-finite value(s) from input shapes "
                f"{[t.shape for t in tensors]}"
            )
        needs = tuple(t.requires_grad for t in tensors)
        track = is_grad_enabled() and any(needs)
        out = Tensor(out_data, requires_grad=track)
        if track:
            fn.inputs = tensors
            fn.needs_input_grad = needs
            fn._out_ref = weakref.ref(out)
            out._ctx = fn
        return out
