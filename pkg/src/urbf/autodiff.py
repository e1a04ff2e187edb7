"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every :class:`Tensor` produced by an operation remembers its inputs and a
closure that pushes the output gradient back to them.  :func:`backward`
orders the reachable graph topologically and visits each node once.

Broadcasting is deliberately narrow: operands of an elementwise op must have
identical shapes, or be a rank-2 array against a rank-1 array matching its
trailing dimension (the bias-add pattern), or involve a 0-d scalar.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

OP_KINDS = (
    "add",
    "subtract",
    "multiply",
    "divide",
    "negate",
    "exponential",
    "square",
    "matrix_multiply",
    "sum",
    "mean",
    "relu",
    "broadcast_to",
    "concatenate",
)


class ShapeError(ValueError):
    """Operand shapes do not conform to an operation's broadcasting rule."""


class GradientError(RuntimeError):
    """Misuse of the backward pass (non-scalar loss, stale gradients)."""


class Tensor:
    """A float64 array that can take part in a differentiable computation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "op", "inputs", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.op: str | None = None
        self.inputs: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self.op is None

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    # operator sugar; Python scalars become 0-d constants
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matrix_multiply(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(kind: str, data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    out.op = kind
    out.inputs = tuple(inputs)
    out.requires_grad = any(t.requires_grad for t in inputs)
    if out.requires_grad:
        out._backward = backward
    return out


def _check_broadcast(kind: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return
    if len(sa) == 2 and len(sb) == 1 and sa[1] == sb[0]:
        return
    if len(sb) == 2 and len(sa) == 1 and sb[1] == sa[0]:
        return
    raise ShapeError(f"{kind}: cannot broadcast shapes {sa} and {sb}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    # rank-1 operand broadcast along rows of a rank-2 result
    return g.sum(axis=0)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(
        "add", a.data + b.data, (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
    )


def subtract(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("subtract", a, b)
    return _make(
        "subtract", a.data - b.data, (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
    )


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("multiply", a, b)
    return _make(
        "multiply", a.data * b.data, (a, b),
        lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)),
    )


def divide(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("divide", a, b)
    if np.any(b.data == 0.0):
        raise ZeroDivisionError("divide: denominator contains a zero element")
    out = a.data / b.data
    return _make(
        "divide", out, (a, b),
        lambda g: (_reduce_to(g / b.data, a.shape), _reduce_to(-g * out / b.data, b.shape)),
    )


def negate(a) -> Tensor:
    a = as_tensor(a)
    return _make("negate", -a.data, (a,), lambda g: (-g,))


def exponential(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make("exponential", out, (a,), lambda g: (g * out,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make("square", a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def matrix_multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matrix_multiply: cannot contract shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make("matrix_multiply", a.data @ b.data, (a, b), backward)


def _check_axis(kind: str, a: Tensor, axis: int | None) -> None:
    if axis is not None and not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"{kind}: axis {axis} out of range for shape {a.shape}")


def _spread(g: np.ndarray, shape: tuple[int, ...], axis: int | None) -> np.ndarray:
    if axis is not None:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    _check_axis("sum", a, axis)
    return _make("sum", a.data.sum(axis=axis), (a,), lambda g: (_spread(g, a.shape, axis),))


def mean(a, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    _check_axis("mean", a, axis)
    n = a.data.size if axis is None else a.shape[axis]
    return _make("mean", a.data.mean(axis=axis), (a,), lambda g: (_spread(g / n, a.shape, axis),))


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    """Repeat a rank-1 (or scalar) tensor along new leading rows."""
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    ok = a.shape == shape or a.shape == () or (
        len(shape) == 2 and a.data.ndim == 1 and shape[1] == a.shape[0]
    )
    if not ok:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}")
    out = np.array(np.broadcast_to(a.data, shape))
    return _make("broadcast_to", out, (a,), lambda g: (_reduce_to(g, a.shape),))


def concatenate(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concatenate: no inputs")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concatenate: shapes {[t.shape for t in tensors]}: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make("concatenate", out, tensors, lambda g: tuple(np.split(g, sizes, axis=axis)))


_DISPATCH: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "subtract": subtract,
    "multiply": multiply,
    "divide": divide,
    "negate": negate,
    "exponential": exponential,
    "square": square,
    "matrix_multiply": matrix_multiply,
    "sum": sum,
    "mean": mean,
    "relu": relu,
    "broadcast_to": broadcast_to,
    "concatenate": lambda *ts, **kw: concatenate(ts, **kw),
}


def forward_op(kind: str, inputs: Sequence, **kwargs) -> Tensor:
    """Apply the operation named ``kind`` to ``inputs``."""
    try:
        fn = _DISPATCH[kind]
    except KeyError:
        raise ValueError(f"unknown operation kind {kind!r}; expected one of {OP_KINDS}") from None
    return fn(*inputs, **kwargs)


def graph_nodes(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` in topological order (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.inputs:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every ``requires_grad`` leaf reachable from ``loss``.

    Gradients are not accumulated across calls: if any reachable leaf still
    holds a gradient from an earlier pass, :class:`GradientError` is raised.
    Call :func:`zero_grad` (or ``Tensor.zero_grad``) between passes.
    """
    if loss.data.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes = graph_nodes(loss)
    leaves = [n for n in nodes if n.is_leaf and n.requires_grad]
    for leaf in leaves:
        if leaf.grad is not None:
            label = leaf.name or repr(leaf)
            raise GradientError(f"leaf {label} already holds a gradient; reset it before backward")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = np.array(g, dtype=np.float64)
            continue
        if node._backward is None:
            continue
        for parent, pg in zip(node.inputs, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = pending.get(id(parent))
            pending[id(parent)] = pg if prev is None else prev + pg
    for leaf in leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def finite_difference_gradient(
    f: Callable[[], float], params: Sequence[Tensor], step: float = 1e-5
) -> list[np.ndarray]:
    """Central-difference estimate of d f / d p for every scalar in ``params``.

    ``f`` is re-evaluated after each in-place perturbation of a parameter
    entry, so it must read the parameters' current ``.data``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    estimates = []
    for p in params:
        est = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        out = est.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f())
            flat[i] = orig - step
            lo = float(f())
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FloatingPointError(f"non-finite objective at perturbed entry {i} of {p!r}")
            out[i] = (hi - lo) / (2.0 * step)
        estimates.append(est)
    return estimates
