"""Reverse-mode automatic differentiation over dense float64 arrays.

A Graph is an append-only tape. Every Tensor created through an op is
appended to its graph's tape at construction, so tape order is already a
topological order of the computation. backward() walks the tape in exact
reverse construction order, accumulating vector-Jacobian products into a
per-call adjoint table, then adds the results onto each tensor's .grad.
Repeated backward() calls therefore accumulate gradients until the caller
discards the graph.

All values are float64. No op mutates its inputs; optimizers update
parameter arrays between graphs, never inside one.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError, ShapeError

Array = np.ndarray


def _as_f64(values) -> Array:
    return np.asarray(values, dtype=np.float64)


class Graph:
    """Append-only record of tensors in construction order."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def tensor(self, values) -> "Tensor":
        """Create a leaf tensor (parameter or constant) on this graph."""
        return Tensor(self, _as_f64(values))

    def __len__(self):
        return len(self.nodes)


class Tensor:
    """One node of the tape: values, optional grad, and its adjoint rule."""

    __slots__ = ("graph", "values", "grad", "node_id", "_inputs", "_vjp")

    def __init__(self, graph: Graph, values: Array, inputs=(), vjp=None):
        self.graph = graph
        self.values = values
        self.grad = None
        self.node_id = len(graph.nodes)
        self._inputs = tuple(inputs)
        self._vjp = vjp
        graph.nodes.append(self)

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.values.shape}")
        return float(self.values)

    def detach(self) -> "Tensor":
        """A new leaf with the same values; gradient stops here."""
        return Tensor(self.graph, self.values)

    def backward(self):
        backward(self)

    # -- reductions and elementwise unaries -------------------------------

    def sum(self) -> "Tensor":
        out = _as_f64(self.values.sum())
        def vjp(g):
            return (np.full_like(self.values, float(g)),)
        return Tensor(self.graph, out, (self,), vjp)

    def mean(self) -> "Tensor":
        n = self.values.size
        out = _as_f64(self.values.mean())
        def vjp(g):
            return (np.full_like(self.values, float(g) / n),)
        return Tensor(self.graph, out, (self,), vjp)

    def exp(self) -> "Tensor":
        out = np.exp(self.values)
        def vjp(g):
            return (g * out,)
        return Tensor(self.graph, out, (self,), vjp)

    def log(self, floor: float | None = None) -> "Tensor":
        """Natural log. With a floor, inputs are clamped at floor first and
        the gradient is zero where the clamp is active."""
        if floor is None:
            x = self.values
            out = np.log(x)
            def vjp(g):
                return (g / x,)
        else:
            clamped = np.maximum(self.values, floor)
            active = self.values > floor
            out = np.log(clamped)
            def vjp(g):
                return (np.where(active, g / clamped, 0.0),)
        return Tensor(self.graph, out, (self,), vjp)

    def square(self) -> "Tensor":
        x = self.values
        def vjp(g):
            return (2.0 * x * g,)
        return Tensor(self.graph, x * x, (self,), vjp)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return multiply(self, other)
        return scalar_multiply(self, float(other))

    def __rmul__(self, other):
        return scalar_multiply(self, float(other))

    def __neg__(self):
        return scalar_multiply(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, node_id={self.node_id})"


def _same_graph(a: Tensor, b: Tensor):
    if a.graph is not b.graph:
        raise ParameterError("operands belong to different graphs")


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.values.shape != b.values.shape:
        raise ShapeError(f"{op}: shapes {a.values.shape} and {b.values.shape} differ")


# -- binary elementwise ------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_graph(a, b)
    _same_shape(a, b, "add")
    def vjp(g):
        return (g, g)
    return Tensor(a.graph, a.values + b.values, (a, b), vjp)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _same_graph(a, b)
    _same_shape(a, b, "subtract")
    def vjp(g):
        return (g, -g)
    return Tensor(a.graph, a.values - b.values, (a, b), vjp)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _same_graph(a, b)
    _same_shape(a, b, "multiply")
    av, bv = a.values, b.values
    def vjp(g):
        return (g * bv, g * av)
    return Tensor(a.graph, av * bv, (a, b), vjp)


def scalar_multiply(a: Tensor, c: float) -> Tensor:
    c = float(c)
    def vjp(g):
        return (g * c,)
    return Tensor(a.graph, a.values * c, (a,), vjp)


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _same_graph(a, b)
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(
            f"matmul needs 2-d operands, got {a.values.shape} and {b.values.shape}")
    if a.values.shape[1] != b.values.shape[0]:
        raise ShapeError(
            f"matmul: inner dims of {a.values.shape} and {b.values.shape} differ")
    av, bv = a.values, b.values
    def vjp(g):
        return (g @ bv.T, av.T @ g)
    return Tensor(a.graph, av @ bv, (a, b), vjp)


def broadcast_add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-n bias row to every row of an m-by-n matrix."""
    _same_graph(x, bias)
    if x.values.ndim != 2 or bias.values.ndim != 1:
        raise ShapeError(
            f"broadcast_add_bias needs matrix and vector, got "
            f"{x.values.shape} and {bias.values.shape}")
    if x.values.shape[1] != bias.values.shape[0]:
        raise ShapeError(
            f"broadcast_add_bias: width of {x.values.shape} does not match "
            f"bias {bias.values.shape}")
    def vjp(g):
        return (g, g.sum(axis=0))
    return Tensor(x.graph, x.values + bias.values, (x, bias), vjp)


# -- nonlinearities ----------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    def vjp(g):
        return (g * mask,)
    return Tensor(x.graph, np.where(mask, x.values, 0.0), (x,), vjp)


def softmax_temperature(logits: Tensor, tau: float) -> Tensor:
    """Row-wise softmax of logits / tau, computed in the shifted stable form."""
    if logits.values.ndim != 2:
        raise ShapeError(f"softmax needs a 2-d tensor, got {logits.values.shape}")
    tau = float(tau)
    if tau <= 0.0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    z = logits.values / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    def vjp(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - inner) / tau,)
    return Tensor(logits.graph, p, (logits,), vjp)


# -- indexing and stacking ---------------------------------------------------

def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows by index. Adjoint scatter-adds back, so repeats are safe."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows needs a 1-d index array, got {idx.shape}")
    if x.values.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-d tensor, got {x.values.shape}")
    n = x.values.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ParameterError(f"gather_rows: index out of range for {n} rows")
    xv = x.values
    def vjp(g):
        out = np.zeros_like(xv)
        np.add.at(out, idx, g)
        return (out,)
    return Tensor(x.graph, xv[idx], (x,), vjp)


def concatenate_rows(a: Tensor, b: Tensor) -> Tensor:
    _same_graph(a, b)
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(
            f"concatenate_rows needs 2-d operands, got {a.values.shape} "
            f"and {b.values.shape}")
    if a.values.shape[1] != b.values.shape[1]:
        raise ShapeError(
            f"concatenate_rows: widths of {a.values.shape} and "
            f"{b.values.shape} differ")
    m = a.values.shape[0]
    def vjp(g):
        return (g[:m], g[m:])
    return Tensor(a.graph, np.concatenate([a.values, b.values], axis=0), (a, b), vjp)


def pairwise_sqdist(a: Tensor, b: Tensor) -> Tensor:
    """All squared Euclidean distances between rows of a and rows of b.

    Computed by the expansion |x|^2 + |y|^2 - 2 x.y, clipped at zero to
    absorb cancellation; the adjoint uses the exact difference form, which
    agrees with the clip because the gradient vanishes where distances do.
    """
    _same_graph(a, b)
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(
            f"pairwise_sqdist needs 2-d operands, got {a.values.shape} "
            f"and {b.values.shape}")
    if a.values.shape[1] != b.values.shape[1]:
        raise ShapeError(
            f"pairwise_sqdist: widths of {a.values.shape} and "
            f"{b.values.shape} differ")
    av, bv = a.values, b.values
    aa = (av * av).sum(axis=1)[:, None]
    bb = (bv * bv).sum(axis=1)[None, :]
    d = np.maximum(aa + bb - 2.0 * (av @ bv.T), 0.0)
    def vjp(g):
        ga = 2.0 * (av * g.sum(axis=1)[:, None] - g @ bv)
        gb = 2.0 * (bv * g.sum(axis=0)[:, None] - g.T @ av)
        return (ga, gb)
    return Tensor(a.graph, d, (a, b), vjp)


# -- reverse pass -------------------------------------------------------------

def backward(loss: Tensor):
    """Populate .grad for every tensor the loss depends on.

    The scalar loss is seeded with 1. The tape is walked from the loss node
    back to node 0; adjoints live in a per-call table so that calling
    backward twice adds a second full gradient onto .grad.
    """
    if loss.values.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.values.shape}")
    nodes = loss.graph.nodes
    adjoint: dict[int, Array] = {loss.node_id: np.ones_like(loss.values)}
    for pos in range(loss.node_id, -1, -1):
        t = nodes[pos]
        g = adjoint.get(t.node_id)
        if g is None or t._vjp is None:
            continue
        for inp, contrib in zip(t._inputs, t._vjp(g)):
            if contrib is None:
                continue
            prev = adjoint.get(inp.node_id)
            adjoint[inp.node_id] = contrib if prev is None else prev + contrib
    for node_id, g in adjoint.items():
        t = nodes[node_id]
        t.grad = g if t.grad is None else t.grad + g
