"""Dense float64 tensor with tape-free reverse-mode differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to one gradient per
parent. :meth:`Tensor.backward` walks that graph in reverse topological
order. Leaves that ``requires_grad`` accumulate into ``.grad``; callers zero
gradients explicitly between optimisation steps.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, NumericError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def check_finite(values: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{op} produced non-finite values")


class Tensor:
    """Row-major float64 array plus optional gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple[Tensor, ...] = (),
        _backward: BackwardFn | None = None,
        op: str = "leaf",
    ) -> None:
        if op == "leaf":
            arr = np.array(data, dtype=np.float64)
        else:
            arr = np.ascontiguousarray(data, dtype=np.float64)
        check_finite(arr, op)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self.op = op

    # -- structure -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- autodiff --------------------------------------------------------
    def backward(self) -> None:
        """Populate gradients of every reachable ``requires_grad`` leaf."""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other) -> Tensor:
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> Tensor:
        return add(self, -other if not isinstance(other, Tensor) else neg(other))

    def __rsub__(self, other) -> Tensor:
        return add(neg(self), other)

    def __mul__(self, other) -> Tensor:
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        if isinstance(other, Tensor):
            raise DimensionError("division by a tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __neg__(self) -> Tensor:
        return neg(self)

    def __getitem__(self, index) -> Tensor:
        return take(self, index)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self) -> Tensor:
        return total(self)

    def mean(self) -> Tensor:
        return total(self) / float(self.size)


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Skip graph recording inside the block (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    """Wrap ``data`` as an op output, recording the graph only when needed."""
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if needs:
        return Tensor(data, True, parents, backward, op)
    return Tensor(data, False, (), None, op)


def _operand(other, like: Tensor) -> Tensor | np.ndarray | float:
    if isinstance(other, Tensor):
        if other.shape != like.shape:
            raise DimensionError(f"shape mismatch {like.shape} vs {other.shape}")
        return other
    if np.isscalar(other):
        return float(other)
    arr = np.asarray(other, dtype=np.float64)
    if arr.shape != like.shape:
        raise DimensionError(f"shape mismatch {like.shape} vs {arr.shape}")
    return arr


def add(a: Tensor, b) -> Tensor:
    a = as_tensor(a)
    b = _operand(b, a)
    if isinstance(b, Tensor):
        return make(a.data + b.data, (a, b), lambda g: (g, g), "add")
    return make(a.data + b, (a,), lambda g: (g,), "add")


def neg(a: Tensor) -> Tensor:
    return make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b) -> Tensor:
    a = as_tensor(a)
    b = _operand(b, a)
    if isinstance(b, Tensor):
        ad, bd = a.data, b.data
        return make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")
    return make(a.data * b, (a,), lambda g: (g * b,), "mul")


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return make(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return make(out, (a,), lambda g: (g.reshape(src),), "reshape")


def take(a: Tensor, index) -> Tensor:
    """Basic or advanced indexing; gradient scatters back with addition."""
    out = a.data[index]
    src = a.shape

    basic = _is_basic(index)

    def backward(g):
        full = np.zeros(src)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make(np.array(out), (a,), backward, "take")


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis for i in items)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make(out, tuple(parts), backward, "concat")


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    shapes = {p.shape for p in parts}
    if len(shapes) != 1:
        raise DimensionError(f"cannot stack shapes {sorted(shapes)}")
    out = np.stack([p.data for p in parts], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return make(out, tuple(parts), backward, "stack")
