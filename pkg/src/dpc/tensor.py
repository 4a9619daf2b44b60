"""Dense 2-D tensors with a recorded tape for reverse-mode differentiation.

Every value is a float64 matrix. A batch of ``n`` vectors of size ``d`` is a
``(d, n)`` tensor; column vectors ``(d, 1)`` broadcast across batch columns in
the elementwise ops (and ``(1, 1)`` tensors broadcast everywhere).

A :class:`Graph` is rebuilt for every forward pass. Operations append nodes in
evaluation order, so the node list is already topologically sorted and
:meth:`Graph.backward` is a single reverse sweep.

Example
-------
>>> w = Parameter("w", [[1.0]])
>>> g = Graph()
>>> loss = reduce_sum_squares(g.param(w))
>>> g.backward(loss)["w"]
array([[2.]])
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence, Union

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError, NonFiniteError, RowIndexError

ArrayLike = Union[np.ndarray, Sequence[Sequence[float]], float, int]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def as_matrix(value: ArrayLike) -> np.ndarray:
    """Coerce ``value`` to a 2-D float64 array (scalars become 1x1)."""
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError(f"empty tensor of shape {arr.shape}")
    return arr


class Parameter:
    """Named trainable matrix that persists across graphs.

    The optimizer mutates ``value`` in place; graphs only read it.
    """

    def __init__(self, name: str, value: ArrayLike, trainable: bool = True):
        self.name = name
        self.value = as_matrix(value)
        self.trainable = trainable

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tensor:
    """A value recorded on a :class:`Graph`."""

    __slots__ = ("value", "graph", "index", "parents", "grad_fn", "param")

    def __init__(self, value, graph, index, parents=(), grad_fn=None, param=None):
        self.value = value
        self.graph = graph
        self.index = index
        self.parents = parents
        self.grad_fn = grad_fn
        self.param = param

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def data(self) -> list[float]:
        """Entries in row-major order."""
        return self.value.ravel().tolist()

    def numpy(self) -> np.ndarray:
        return self.value.copy()

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.index})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return hadamard(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return hadamard(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Graph:
    """Tape of recorded operations plus the parameter registry."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._params: dict[str, Tensor] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _record(self, value: np.ndarray, parents=(), grad_fn=None, param=None) -> Tensor:
        t = Tensor(value, self, len(self.nodes), tuple(parents), grad_fn, param)
        self.nodes.append(t)
        return t

    def constant(self, value: ArrayLike) -> Tensor:
        """Leaf that receives no gradient."""
        return self._record(as_matrix(value))

    def param(self, p: Parameter) -> Tensor:
        """Leaf bound to ``p``; repeated calls return the same node."""
        leaf = self._params.get(p.name)
        if leaf is None:
            leaf = self._record(p.value, param=p)
            self._params[p.name] = leaf
        elif leaf.param is not p:
            raise ContractError(f"two different parameters named {p.name!r} on one graph")
        return leaf

    def register(self, params: Iterable[Parameter]) -> None:
        """Add parameters to the registry even if the loss never touches them."""
        for p in params:
            self.param(p)

    @property
    def parameters(self) -> list[Parameter]:
        return [t.param for t in self._params.values()]

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` for every registered trainable parameter.

        Parameters the loss does not depend on get a zero array of their shape.
        """
        if loss.graph is not self:
            raise ContractError("loss belongs to a different graph")
        if loss.shape != (1, 1):
            raise ContractError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
        adj: list[np.ndarray | None] = [None] * (loss.index + 1)
        adj[loss.index] = np.ones((1, 1))
        for i in range(loss.index, -1, -1):
            g = adj[i]
            node = self.nodes[i]
            if g is None or node.grad_fn is None:
                continue
            for parent, pg in zip(node.parents, node.grad_fn(g)):
                if pg is None:
                    continue
                j = parent.index
                if adj[j] is None:
                    adj[j] = pg
                else:
                    adj[j] = adj[j] + pg
        grads = {}
        for name, leaf in self._params.items():
            if not leaf.param.trainable:
                continue
            g = adj[leaf.index] if leaf.index < len(adj) else None
            grads[name] = np.zeros(leaf.shape) if g is None else g
        return grads


def _graph_of(*items) -> Graph:
    graph = None
    for x in items:
        if isinstance(x, Tensor):
            if graph is None:
                graph = x.graph
            elif x.graph is not graph:
                raise ContractError("operands live on different graphs")
    if graph is None:
        raise ContractError("at least one operand must be a Tensor")
    return graph


def _lift(x, graph: Graph) -> Tensor:
    return x if isinstance(x, Tensor) else graph.constant(x)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, int]:
    (ra, ca), (rb, cb) = a.shape, b.shape
    if (ra, ca) == (rb, cb):
        return ra, ca
    if (ra, ca) == (1, 1):
        return rb, cb
    if (rb, cb) == (1, 1):
        return ra, ca
    if ra == rb and (ca == 1 or cb == 1):
        return ra, max(ca, cb)
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[1] == 1:
        g = g.sum(axis=1, keepdims=True)
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    return g


def _check_finite(t: Tensor, op: str) -> None:
    if not np.isfinite(t.value).all():
        raise NonFiniteError(f"{op}: non-finite input")


# -- linear algebra --------------------------------------------------------


def matmul(a, b) -> Tensor:
    graph = _graph_of(a, b)
    a, b = _lift(a, graph), _lift(b, graph)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape} (inner dimensions differ)")
    A, B = a.value, b.value

    def grad_fn(g):
        return g @ B.T, A.T @ g

    return graph._record(A @ B, (a, b), grad_fn)


def add(a, b) -> Tensor:
    graph = _graph_of(a, b)
    a, b = _lift(a, graph), _lift(b, graph)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return graph._record(
        a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a, b) -> Tensor:
    graph = _graph_of(a, b)
    a, b = _lift(a, graph), _lift(b, graph)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return graph._record(
        a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))
    )


def hadamard(a, b) -> Tensor:
    graph = _graph_of(a, b)
    a, b = _lift(a, graph), _lift(b, graph)
    _broadcast_shape(a, b, "hadamard")
    A, B = a.value, b.value

    def grad_fn(g):
        return _unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)

    return graph._record(A * B, (a, b), grad_fn)


def scale(t: Tensor, c: float) -> Tensor:
    c = float(c)
    return t.graph._record(t.value * c, (t,), lambda g: (g * c,))


# -- structural --------------------------------------------------------------


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack ``parts`` vertically in argument order."""
    if not parts:
        raise DimensionError("concat_rows: no parts")
    graph = _graph_of(*parts)
    parts = [_lift(p, graph) for p in parts]
    cols = parts[0].cols
    for p in parts:
        if p.cols != cols:
            raise DimensionError(
                f"concat_rows: column mismatch {parts[0].shape} vs {p.shape}"
            )
    bounds = np.cumsum([0] + [p.rows for p in parts])

    def grad_fn(g):
        return tuple(g[bounds[i] : bounds[i + 1]] for i in range(len(parts)))

    return graph._record(np.vstack([p.value for p in parts]), parts, grad_fn)


def slice_rows(t: Tensor, start: int, length: int) -> Tensor:
    """Rows ``start .. start+length-1`` of ``t``."""
    if start < 0 or length < 1 or start + length > t.rows:
        raise RowIndexError(
            f"slice_rows: rows [{start}, {start + length}) outside tensor with {t.rows} rows"
        )
    shape = t.shape

    def grad_fn(g):
        full = np.zeros(shape)
        full[start : start + length] = g
        return (full,)

    return t.graph._record(t.value[start : start + length], (t,), grad_fn)


def split_rows(t: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    if sum(sizes) != t.rows:
        raise DimensionError(f"split_rows: sizes {list(sizes)} do not sum to {t.rows}")
    out, start = [], 0
    for n in sizes:
        out.append(slice_rows(t, start, n))
        start += n
    return out


# -- activations ---------------------------------------------------------


def relu(t: Tensor) -> Tensor:
    _check_finite(t, "relu")
    mask = t.value > 0
    return t.graph._record(np.where(mask, t.value, 0.0), (t,), lambda g: (g * mask,))


def gelu(t: Tensor) -> Tensor:
    """``x * Phi(x)`` with the exact normal CDF (not the tanh approximation)."""
    _check_finite(t, "gelu")
    x = t.value
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    dydx = cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return t.graph._record(x * cdf, (t,), lambda g: (g * dydx,))


def sigmoid(t: Tensor) -> Tensor:
    _check_finite(t, "sigmoid")
    s = 0.5 * (1.0 + np.tanh(0.5 * t.value))
    return t.graph._record(s, (t,), lambda g: (g * s * (1.0 - s),))


def softplus(t: Tensor) -> Tensor:
    _check_finite(t, "softplus")
    x = t.value
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    return t.graph._record(y, (t,), lambda g: (g * s,))


def identity(t: Tensor) -> Tensor:
    return t


def row_softmax(t: Tensor) -> Tensor:
    """Softmax along each row."""
    _check_finite(t, "row_softmax")
    z = np.exp(t.value - t.value.max(axis=1, keepdims=True))
    s = z / z.sum(axis=1, keepdims=True)

    def grad_fn(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return t.graph._record(s, (t,), grad_fn)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "gelu": gelu,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "identity": identity,
}


# -- reductions ------------------------------------------------------------


def reduce_sum(t: Tensor) -> Tensor:
    shape = t.shape
    return t.graph._record(
        np.array([[t.value.sum()]]), (t,), lambda g: (np.full(shape, g[0, 0]),)
    )


def reduce_mean(t: Tensor) -> Tensor:
    shape, n = t.shape, t.value.size
    return t.graph._record(
        np.array([[t.value.mean()]]), (t,), lambda g: (np.full(shape, g[0, 0] / n),)
    )


def reduce_sum_squares(t: Tensor) -> Tensor:
    x = t.value
    return t.graph._record(
        np.array([[np.sum(x * x)]]), (t,), lambda g: (2.0 * g[0, 0] * x,)
    )
