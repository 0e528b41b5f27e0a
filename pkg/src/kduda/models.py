"""Feedforward classifiers with an explicit feature/head split.

A model is a stack of fully connected layers with ReLU after every hidden
layer. features() returns the activation after the last hidden layer; the
head is the final linear layer alone, so logits(x) is head(features(x)) on
the same graph nodes. The alignment losses operate on features, the
classification losses on logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .errors import ParameterError, ShapeError

MODEL_FORMAT_HEADER = "kduda-model v1"


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_widths: tuple[int, ...]
    num_classes: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1:
            raise ParameterError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ParameterError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.hidden_widths) < 1:
            raise ParameterError("at least one hidden layer is required")
        if any(w < 1 for w in self.hidden_widths):
            raise ParameterError(f"hidden widths must be >= 1, got {self.hidden_widths}")

    def layer_dims(self) -> list[tuple[int, int]]:
        widths = [self.input_dim, *self.hidden_widths, self.num_classes]
        return list(zip(widths[:-1], widths[1:]))


class Model:
    """Weight/bias arrays plus graph-bound forward passes.

    Parameter arrays are owned by the model and updated in place by the
    optimizer. Binding to a graph creates leaf tensors that wrap the live
    arrays, so a model bound to a fresh graph always sees current values.
    """

    def __init__(self, spec: ModelSpec, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.spec = spec
        self.weights = weights
        self.biases = biases
        self._bound_graph: Graph | None = None
        self._bound: list[Tensor] = []
        self._cache: dict[int, Tensor] = {}

    # -- parameter access --------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Model":
        return Model(self.spec,
                     [w.copy() for w in self.weights],
                     [b.copy() for b in self.biases])

    def load_parameters_from(self, other: "Model"):
        if other.spec.layer_dims() != self.spec.layer_dims():
            raise ShapeError("parameter copy between models of different layer dims")
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src

    # -- graph binding -----------------------------------------------------

    def bind(self, graph: Graph) -> list[Tensor]:
        """Leaf tensors for every parameter, in parameters() order."""
        if self._bound_graph is not graph:
            self._bound_graph = graph
            self._bound = [graph.tensor(p) for p in self.parameters()]
            self._cache = {}
        return self._bound

    def bound_gradients(self) -> list[np.ndarray]:
        """Per-parameter gradients from the current binding; zeros where unused."""
        if self._bound_graph is None:
            raise ParameterError("model is not bound to a graph")
        return [t.grad if t.grad is not None else np.zeros_like(t.values)
                for t in self._bound]

    def features(self, x: Tensor) -> Tensor:
        """Activation after the last hidden layer (post-ReLU)."""
        leaves = self.bind(x.graph)
        key = id(x)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        if x.values.ndim != 2 or x.values.shape[1] != self.spec.input_dim:
            raise ShapeError(
                f"expected input of shape (n, {self.spec.input_dim}), "
                f"got {x.values.shape}")
        h = x
        for i in range(len(self.weights) - 1):
            w, b = leaves[2 * i], leaves[2 * i + 1]
            h = ad.relu(ad.broadcast_add_bias(ad.matmul(h, w), b))
        self._cache[key] = h
        return h

    def logits(self, x: Tensor) -> Tensor:
        """head(features(x)); shares the feature nodes for the same input."""
        h = self.features(x)
        leaves = self._bound
        key = ("logits", id(x))
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        out = ad.broadcast_add_bias(ad.matmul(h, leaves[-2]), leaves[-1])
        self._cache[key] = out
        return out

    # -- graph-free inference ----------------------------------------------

    def predict_logits(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ShapeError(
                f"expected input of shape (n, {self.spec.input_dim}), got {x.shape}")
        h = x
        for i in range(len(self.weights) - 1):
            h = np.maximum(h @ self.weights[i] + self.biases[i], 0.0)
        return h @ self.weights[-1] + self.biases[-1]


def build(spec: ModelSpec) -> Model:
    """Initialize weights Glorot-uniform and biases to zero, from spec.seed."""
    rng = np.random.default_rng(spec.seed)
    weights, biases = [], []
    for fan_in, fan_out in spec.layer_dims():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Model(spec, weights, biases)


def count_complexity(model_or_spec) -> tuple[int, int]:
    """(parameter count, multiply-accumulate count) for one forward pass.

    params = sum over layers of fan_in*fan_out + fan_out
    MACs   = sum over layers of fan_in*fan_out
    """
    spec = model_or_spec.spec if isinstance(model_or_spec, Model) else model_or_spec
    params = 0
    macs = 0
    for fan_in, fan_out in spec.layer_dims():
        params += fan_in * fan_out + fan_out
        macs += fan_in * fan_out
    return params, macs


# -- flat text serialization ---------------------------------------------------

def save_model(model: Model, path: str):
    """Write header, dims, seed, then one whitespace line per weight row / bias.

    Floats are written with repr(), which round-trips float64 exactly.
    """
    spec = model.spec
    lines = [MODEL_FORMAT_HEADER]
    dims = [spec.input_dim, *spec.hidden_widths, spec.num_classes]
    lines.append(" ".join(str(d) for d in dims))
    lines.append(str(spec.seed))
    for w, b in zip(model.weights, model.biases):
        for row in w:
            lines.append(" ".join(repr(float(v)) for v in row))
        lines.append(" ".join(repr(float(v)) for v in b))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path: str) -> Model:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != MODEL_FORMAT_HEADER:
        raise ParameterError(f"{path}: not a {MODEL_FORMAT_HEADER!r} file")
    dims = [int(tok) for tok in lines[1].split()]
    if len(dims) < 3:
        raise ParameterError(f"{path}: need at least input, one hidden, classes")
    seed = int(lines[2])
    spec = ModelSpec(dims[0], tuple(dims[1:-1]), dims[-1], seed=seed)
    weights, biases = [], []
    pos = 3
    for fan_in, fan_out in spec.layer_dims():
        rows = []
        for _ in range(fan_in):
            rows.append([float(tok) for tok in lines[pos].split()])
            pos += 1
        w = np.array(rows, dtype=np.float64)
        b = np.array([float(tok) for tok in lines[pos].split()], dtype=np.float64)
        pos += 1
        if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise ParameterError(f"{path}: layer block does not match declared dims")
        weights.append(w)
        biases.append(b)
    return Model(spec, weights, biases)
