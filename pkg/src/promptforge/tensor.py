"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation graph is held implicitly: every non-leaf tensor keeps an
ordered tuple of parents plus a closure mapping its output adjoint to the
parent adjoints.  ``backward`` replays those records exactly once each, in
reverse topological order, accumulating into ``grad`` stores that must be
zeroed explicitly between optimization steps.

Everything is float64; tolerances elsewhere in the package assume that.
"""

from __future__ import annotations

import numbers
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "LOG_FLOOR",
    "NORM_EPS",
    "ShapeError",
    "Tensor",
    "add",
    "subtract",
    "scale",
    "hadamard",
    "matmul",
    "transpose",
    "relu",
    "tanh",
    "exp",
    "log",
    "normalize_rows",
    "softmax_rows",
    "mean_rows",
    "concat_rows",
    "row",
    "reshape",
    "sum_all",
    "pick",
    "pack",
    "cosine",
    "backward",
    "finite_diff_grad",
]

LOG_FLOOR = 1e-30
NORM_EPS = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class Tensor:
    """A dense float64 value that optionally tracks gradients.

    Leaves are built with ``Tensor(data, requires_grad=...)``; operation
    outputs are created internally and carry the backward record.  ``data``
    must be treated as immutable once the tensor participates in a graph
    (the SGD update between steps is the one sanctioned exception).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], tuple] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self) -> None:
        backward(self)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # Operators cover common compositions; the module functions are the
    # full surface.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return subtract(self, other)

    def __mul__(self, other):
        if isinstance(other, numbers.Real):
            return scale(self, float(other))
        return hadamard(self, other)

    def __rmul__(self, other):
        if isinstance(other, numbers.Real):
            return scale(self, float(other))
        return hadamard(other, self)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _make(data: np.ndarray) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.requires_grad = False
    out.grad = None
    out._parents = ()
    out._grad_fn = None
    out._op = "leaf"
    return out


def _record(out: Tensor, parents: Sequence[Tensor], grad_fn, op: str) -> Tensor:
    # Constant subgraphs are folded away: no parents, no closures, so the
    # frozen-encoder forward passes cost nothing at backward time.
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = np.zeros_like(out.data)
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
        out._op = op
    return out


def _need_2d(a: Tensor, op: str) -> None:
    if a.data.ndim != 2:
        raise ShapeError(f"{op} needs a 2-d tensor, got shape {a.shape}")


# ----------------------------------------------------------------------
# elementwise and structural operations
# ----------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a (1, c) or (c,) right operand row-broadcasts over (r, c)."""
    if a.shape == b.shape:
        out = _make(a.data + b.data)

        def grad_fn(adj):
            return adj, adj

        return _record(out, (a, b), grad_fn, "add")
    if a.data.ndim == 2 and b.data.size == a.shape[1] and b.data.ndim in (1, 2):
        brow = b.data.reshape(1, -1)
        out = _make(a.data + brow)

        def grad_fn(adj):
            return adj, adj.sum(axis=0).reshape(b.shape)

        return _record(out, (a, b), grad_fn, "add_rowcast")
    raise ShapeError(f"add got incompatible shapes {a.shape} and {b.shape}")


def subtract(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"subtract got mismatched shapes {a.shape} and {b.shape}")
    out = _make(a.data - b.data)

    def grad_fn(adj):
        return adj, -adj

    return _record(out, (a, b), grad_fn, "subtract")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = _make(a.data * s)

    def grad_fn(adj):
        return (adj * s,)

    return _record(out, (a,), grad_fn, "scale")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"hadamard got mismatched shapes {a.shape} and {b.shape}")
    out = _make(a.data * b.data)

    def grad_fn(adj):
        return adj * b.data, adj * a.data

    return _record(out, (a, b), grad_fn, "hadamard")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product (r, k) @ (k, c) -> (r, c)."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul needs (r,k) @ (k,c), got {a.shape} and {b.shape}")
    out = _make(a.data @ b.data)

    def grad_fn(adj):
        return adj @ b.data.T, a.data.T @ adj

    return _record(out, (a, b), grad_fn, "matmul")


def transpose(a: Tensor) -> Tensor:
    _need_2d(a, "transpose")
    out = _make(a.data.T.copy())

    def grad_fn(adj):
        return (adj.T,)

    return _record(out, (a,), grad_fn, "transpose")


def relu(a: Tensor) -> Tensor:
    out = _make(np.maximum(a.data, 0.0))

    def grad_fn(adj):
        return (adj * (a.data > 0.0),)

    return _record(out, (a,), grad_fn, "relu")


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    out = _make(out_data)

    def grad_fn(adj):
        return (adj * (1.0 - out_data * out_data),)

    return _record(out, (a,), grad_fn, "tanh")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    out = _make(out_data)

    def grad_fn(adj):
        return (adj * out_data,)

    return _record(out, (a,), grad_fn, "exp")


def log(a: Tensor) -> Tensor:
    """Natural log with a 1e-30 floor, so probabilities never yield -inf."""
    floored = np.maximum(a.data, LOG_FLOOR)
    out = _make(np.log(floored))

    def grad_fn(adj):
        return (adj / floored,)

    return _record(out, (a,), grad_fn, "log")


def normalize_rows(a: Tensor) -> Tensor:
    """Scale each row of a 2-d tensor to unit L2 norm (1e-12 floor)."""
    _need_2d(a, "normalize_rows")
    norms = np.maximum(np.linalg.norm(a.data, axis=1, keepdims=True), NORM_EPS)
    out_data = a.data / norms
    out = _make(out_data)

    def grad_fn(adj):
        inner = (adj * out_data).sum(axis=1, keepdims=True)
        return ((adj - out_data * inner) / norms,)

    return _record(out, (a,), grad_fn, "normalize_rows")


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    _need_2d(a, "softmax_rows")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)
    out = _make(out_data)

    def grad_fn(adj):
        inner = (adj * out_data).sum(axis=1, keepdims=True)
        return (out_data * (adj - inner),)

    return _record(out, (a,), grad_fn, "softmax_rows")


def mean_rows(a: Tensor) -> Tensor:
    """Mean over rows: (r, c) -> (1, c)."""
    _need_2d(a, "mean_rows")
    r = a.shape[0]
    if r == 0:
        raise ShapeError("mean_rows needs at least one row")
    out = _make(a.data.mean(axis=0, keepdims=True))

    def grad_fn(adj):
        return (np.repeat(adj / r, r, axis=0),)

    return _record(out, (a,), grad_fn, "mean_rows")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack 2-d tensors with equal column counts along the row axis."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_rows needs at least one tensor")
    cols = {p.shape[1] for p in parts if p.data.ndim == 2}
    if any(p.data.ndim != 2 for p in parts) or len(cols) != 1:
        raise ShapeError(
            f"concat_rows needs 2-d tensors with equal columns, got {[p.shape for p in parts]}"
        )
    out = _make(np.concatenate([p.data for p in parts], axis=0))
    counts = [p.shape[0] for p in parts]

    def grad_fn(adj):
        grads = []
        offset = 0
        for n in counts:
            grads.append(adj[offset:offset + n])
            offset += n
        return tuple(grads)

    return _record(out, parts, grad_fn, "concat_rows")


def row(a: Tensor, i: int) -> Tensor:
    """Extract row i of a 2-d tensor as a (1, c) tensor."""
    _need_2d(a, "row")
    if not 0 <= i < a.shape[0]:
        raise IndexError(f"row {i} out of range for shape {a.shape}")
    out = _make(a.data[i:i + 1].copy())

    def grad_fn(adj):
        g = np.zeros_like(a.data)
        g[i] = adj[0]
        return (g,)

    return _record(out, (a,), grad_fn, "row")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}")
    out = _make(a.data.reshape(shape).copy())

    def grad_fn(adj):
        return (adj.reshape(a.shape),)

    return _record(out, (a,), grad_fn, "reshape")


def sum_all(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = _make(np.asarray(a.data.sum()))

    def grad_fn(adj):
        return (np.full(a.shape, float(adj)),)

    return _record(out, (a,), grad_fn, "sum")


def pick(a: Tensor, i: int) -> Tensor:
    """Element i of a 1-d tensor, as a scalar tensor."""
    if a.data.ndim != 1:
        raise ShapeError(f"pick needs a 1-d tensor, got shape {a.shape}")
    if not 0 <= i < a.shape[0]:
        raise IndexError(f"index {i} out of range for length {a.shape[0]}")
    out = _make(np.asarray(a.data[i]))

    def grad_fn(adj):
        g = np.zeros_like(a.data)
        g[i] = float(adj)
        return (g,)

    return _record(out, (a,), grad_fn, "pick")


def pack(scalars: Sequence[Tensor]) -> Tensor:
    """Collect scalar tensors into a 1-d tensor, preserving order."""
    scalars = list(scalars)
    if not scalars:
        raise ShapeError("pack needs at least one scalar")
    if any(s.data.size != 1 for s in scalars):
        raise ShapeError(f"pack needs scalars, got shapes {[s.shape for s in scalars]}")
    out = _make(np.array([float(s.data.reshape(())) for s in scalars]))

    def grad_fn(adj):
        return tuple(np.asarray(adj[i]).reshape(s.shape) for i, s in enumerate(scalars))

    return _record(out, scalars, grad_fn, "pack")


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two tensors viewed as flat vectors.

    Raises ValueError when either vector norm falls below 1e-12.
    """
    if a.size != b.size:
        raise ShapeError(f"cosine got mismatched sizes {a.shape} and {b.shape}")
    av = a.data.reshape(-1)
    bv = b.data.reshape(-1)
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na < NORM_EPS or nb < NORM_EPS:
        raise ValueError(f"cosine got a degenerate vector (norms {na:.3e}, {nb:.3e})")
    c = float(av @ bv) / (na * nb)
    out = _make(np.asarray(c))

    def grad_fn(adj):
        s = float(adj)
        ga = s * (bv / (na * nb) - c * av / (na * na))
        gb = s * (av / (na * nb) - c * bv / (nb * nb))
        return ga.reshape(a.shape), gb.reshape(b.shape)

    return _record(out, (a, b), grad_fn, "cosine")


# ----------------------------------------------------------------------
# reverse pass
# ----------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad ancestor of a scalar loss.

    Repeated calls without zeroing accumulate.  The walk visits each graph
    node exactly once, in reverse topological order, so two runs over the
    identical graph produce bitwise-identical gradients.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        adj = adjoints.pop(id(node), None)
        if adj is None:
            continue
        if node.grad is not None:
            node.grad += adj
        if node._grad_fn is None:
            continue
        for parent, padj in zip(node._parents, node._grad_fn(adj)):
            if padj is None or not parent.requires_grad:
                continue
            prev = adjoints.get(id(parent))
            adjoints[id(parent)] = padj if prev is None else prev + padj


# ----------------------------------------------------------------------
# finite-difference oracle
# ----------------------------------------------------------------------

def finite_diff_grad(f: Callable[[Tensor], "Tensor | float"], x: Tensor,
                     h: float = 1e-5) -> Tensor:
    """Central-difference gradient estimate of a scalar function at x.

    Perturbs ``x.data`` in place one coordinate at a time and restores it,
    so ``f`` may simply close over ``x``.
    """
    flat = x.data.reshape(-1)
    grad = np.zeros_like(flat)

    def evaluate() -> float:
        value = f(x)
        if isinstance(value, Tensor):
            return value.item()
        return float(value)

    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        upper = evaluate()
        flat[i] = original - h
        lower = evaluate()
        flat[i] = original
        grad[i] = (upper - lower) / (2.0 * h)
    return _make(grad.reshape(x.shape))
