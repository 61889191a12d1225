"""A small reverse-mode differentiation tape over numpy arrays.

Every differentiable operation in the package returns a :class:`Var` whose
parents carry vector-Jacobian product closures. :func:`backward` walks the
graph once in reverse topological order, so shared sub-expressions receive the
sum of all their adjoints. Gradients land on leaves (``Var(..., requires_grad=True)``).

Accumulation order is fixed by the graph structure, which keeps repeated runs
bit-identical.
"""

from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np


Vjp = Callable[[np.ndarray], np.ndarray]


class Var:
    """A value on the tape."""

    __slots__ = ("value", "requires_grad", "grad", "name", "_parents")

    def __init__(self, value, requires_grad: bool = False, name: Optional[str] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple[Tuple["Var", Vjp], ...] = ()

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return (
            f"Var(name={self.name!r}, shape={self.value.shape}, "
            f"requires_grad={self.requires_grad})"
        )

    def __add__(self, other):
        return add(self, lift(other))

    def __radd__(self, other):
        return add(lift(other), self)

    def __sub__(self, other):
        return sub(self, lift(other))

    def __rsub__(self, other):
        return sub(lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


def lift(x) -> Var:
    """Wrap a constant in a Var that does not require gradients."""
    return x if isinstance(x, Var) else Var(x)


def node(value, parents: Iterable[Tuple[Var, Vjp]]) -> Var:
    """Create a result Var, recording only parents that need gradients."""
    tracked = tuple((p, fn) for p, fn in parents if p.requires_grad)
    out = Var(value, requires_grad=bool(tracked))
    out._parents = tracked
    return out


def backward(root: Var, seed: Optional[np.ndarray] = None) -> None:
    """Accumulate d(root)/d(leaf) into every reachable leaf's ``grad``."""
    if not root.requires_grad:
        return
    if seed is None:
        seed = np.ones_like(root.value)
    order: List[Var] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        current, expanded = stack.pop()
        if expanded:
            order.append(current)
            continue
        if id(current) in visited:
            continue
        visited.add(id(current))
        stack.append((current, True))
        for parent, _ in current._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    pending = {id(root): np.asarray(seed, dtype=np.float64)}
    for current in reversed(order):
        g = pending.pop(id(current), None)
        if g is None:
            continue
        if not current._parents:
            current.grad = g if current.grad is None else current.grad + g
            continue
        for parent, vjp in current._parents:
            contribution = vjp(g)
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + contribution
            else:
                pending[key] = contribution


def _check_same_shape(a: Var, b: Var, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Var, b: Var) -> Var:
    _check_same_shape(a, b, "add")
    return node(a.value + b.value, [(a, lambda g: g), (b, lambda g: g)])


def sub(a: Var, b: Var) -> Var:
    _check_same_shape(a, b, "sub")
    return node(a.value - b.value, [(a, lambda g: g), (b, lambda g: -g)])


def mul(a: Var, b: Var) -> Var:
    _check_same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return node(av * bv, [(a, lambda g: g * bv), (b, lambda g: g * av)])


def scale(a: Var, factor: float) -> Var:
    return node(a.value * factor, [(a, lambda g: g * factor)])


def square(a: Var) -> Var:
    av = a.value
    return node(av * av, [(a, lambda g: 2.0 * g * av)])


def total(a: Var) -> Var:
    """Sum of all elements (a 0-d Var)."""
    shape = a.shape
    return node(np.sum(a.value), [(a, lambda g: np.full(shape, float(g)))])


def mean(a: Var) -> Var:
    size = a.value.size
    return scale(total(a), 1.0 / size)


def relu(a: Var) -> Var:
    active = a.value > 0
    return node(np.where(active, a.value, 0.0), [(a, lambda g: g * active)])


def concat(parts: Sequence[Var], axis: int = 0) -> Var:
    """Concatenate along an existing axis."""
    values = [p.value for p in parts]
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])

    def make_vjp(start, stop):
        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            return g[tuple(index)]

        return vjp

    return node(
        np.concatenate(values, axis=axis),
        [(p, make_vjp(bounds[i], bounds[i + 1])) for i, p in enumerate(parts)],
    )


def stack(parts: Sequence[Var]) -> Var:
    """Stack along a new leading axis."""
    return node(
        np.stack([p.value for p in parts]),
        [(p, (lambda i: lambda g: g[i])(i)) for i, p in enumerate(parts)],
    )


def take(a: Var, index: int) -> Var:
    """Select one entry of the leading axis."""
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[index] = g
        return out

    return node(a.value[index], [(a, vjp)])


def linear(a: Var, forward: Callable, adjoint: Callable) -> Var:
    """Apply a linear map given its forward and transpose actions."""
    return node(forward(a.value), [(a, adjoint)])
