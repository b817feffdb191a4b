"""Body/head multilayer perceptron used as the base learner."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import numerics as nx

ACTIVATIONS = ("relu", "tanh", "identity")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        dims = (self.input_dim, *self.hidden, self.output_dim)
        if any(int(d) <= 0 for d in dims):
            raise ValueError(f"all layer widths must be positive, got {dims}")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"hidden activation must be 'relu' or 'tanh', got {self.activation!r}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # fan_in x fan_out
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "weight", _frozen(self.weight))
        object.__setattr__(self, "bias", _frozen(self.bias))
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise nx.ShapeError(
                f"layer weight {list(self.weight.shape)} and bias {list(self.bias.shape)} do not match"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def replace(self, **changes) -> "Layer":
        return replace(self, **changes)

    @property
    def n_params(self) -> int:
        return self.weight.size + self.bias.size


@dataclass(frozen=True)
class LayeredParams:
    """Ordered layers; the last one is the head, everything before it the body.

    Supports the vector-space arithmetic the outer updates need
    (``a + b``, ``a - b``, ``c * a``) layer by layer.
    """

    layers: tuple[Layer, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for i in range(len(self.layers) - 1):
            a, b = self.layers[i].weight, self.layers[i + 1].weight
            if a.shape[1] != b.shape[0]:
                raise nx.ShapeError(f"layer {i + 1} outputs {a.shape[1]} but layer {i + 2} expects {b.shape[0]}")

    @property
    def L(self) -> int:
        return len(self.layers)

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def with_layers(self, layers: Sequence[Layer]) -> "LayeredParams":
        return LayeredParams(tuple(layers))

    def slice(self, i: int, j: int) -> "LayeredParams":
        """Layers ``i`` through ``j`` inclusive, 1-indexed."""
        if not 1 <= i <= j <= self.L:
            raise IndexError(f"invalid layer range ({i}, {j}) for {self.L} layers")
        return LayeredParams(self.layers[i - 1 : j])

    @property
    def body(self) -> "LayeredParams":
        return LayeredParams(self.layers[:-1])

    @property
    def head(self) -> Layer:
        return self.layers[-1]

    def concat(self, other: "LayeredParams") -> "LayeredParams":
        return LayeredParams(self.layers + other.layers)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def from_arrays(self, arrays: Sequence[np.ndarray]) -> "LayeredParams":
        """Same structure as ``self`` with new values (weight, bias, weight, ...)."""
        if len(arrays) != 2 * self.L:
            raise nx.ShapeError(f"expected {2 * self.L} arrays, got {len(arrays)}")
        layers = []
        for k, layer in enumerate(self.layers):
            w, b = np.asarray(arrays[2 * k]), np.asarray(arrays[2 * k + 1])
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise nx.ShapeError(
                    f"layer {k + 1}: expected {list(layer.weight.shape)}/{list(layer.bias.shape)}, "
                    f"got {list(w.shape)}/{list(b.shape)}"
                )
            layers.append(layer.replace(weight=w, bias=b))
        return LayeredParams(tuple(layers))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(a * a) for a in self.arrays())))

    def bitwise_equal(self, other: "LayeredParams") -> bool:
        if self.L != other.L:
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(self.arrays(), other.arrays())
        )

    def _zip(self, other, op) -> "LayeredParams":
        return self.from_arrays([op(a, b) for a, b in zip(self.arrays(), other.arrays())])

    def __add__(self, other: "LayeredParams") -> "LayeredParams":
        return self._zip(other, np.add)

    def __sub__(self, other: "LayeredParams") -> "LayeredParams":
        return self._zip(other, np.subtract)

    def __mul__(self, c: float) -> "LayeredParams":
        return self.from_arrays([a * c for a in self.arrays()])

    __rmul__ = __mul__


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def init_params(config: ModelConfig) -> LayeredParams:
    rng = np.random.default_rng(config.seed)
    dims = config.dims
    layers = []
    for k in range(len(dims) - 1):
        act = config.activation if k < len(dims) - 2 else "identity"
        layers.append(Layer(_glorot(rng, dims[k], dims[k + 1]), np.zeros(dims[k + 1]), act))
    return LayeredParams(tuple(layers))


def replace_head(params: LayeredParams, new_output_dim: int, seed: int) -> LayeredParams:
    if new_output_dim < 2:
        raise ValueError(f"new_output_dim must be at least 2, got {new_output_dim}")
    fan_in = params.head.weight.shape[0]
    rng = np.random.default_rng(seed)
    head = Layer(_glorot(rng, fan_in, new_output_dim), np.zeros(new_output_dim), "identity")
    return LayeredParams(params.layers[:-1] + (head,))


def freeze_mask(params: LayeredParams, mode: str = "all_trainable") -> list[bool]:
    if mode == "all_trainable":
        return [True] * params.L
    if mode == "body_frozen":
        return [False] * (params.L - 1) + [True]
    raise ValueError(f"unknown freeze mode {mode!r}")


def forward_leaves(leaves: Sequence[nx.Tensor], activations: Sequence[str], x) -> nx.Tensor:
    """Network function on explicit leaf tensors (weight, bias, weight, ...)."""
    h = nx.Tensor(x) if not isinstance(x, nx.Tensor) else x
    for k, act in enumerate(activations):
        h = nx.add_bias(nx.matmul(h, leaves[2 * k]), leaves[2 * k + 1])
        if act == "relu":
            h = nx.relu(h)
        elif act == "tanh":
            h = nx.tanh(h)
    return h


def activations(params: LayeredParams) -> list[str]:
    return [layer.activation for layer in params.layers]


def forward(params: LayeredParams, batch) -> nx.Tensor:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != params.input_dim:
        raise nx.ShapeError(f"batch shape {list(batch.shape)} does not match input width {params.input_dim}")
    return forward_leaves([nx.Tensor(a) for a in params.arrays()], activations(params), batch)


def predict(params: LayeredParams, batch) -> np.ndarray:
    return forward(params, batch).value


def loss_tensor(out: nx.Tensor, y: np.ndarray) -> nx.Tensor:
    # integer targets mean classification, float targets regression
    if np.issubdtype(np.asarray(y).dtype, np.integer):
        return nx.softmax_cross_entropy(out, y)
    return nx.mse_loss(out, y)


def loss_and_grads(params: LayeredParams, x, y) -> tuple[float, LayeredParams]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise nx.ShapeError(f"batch shape {list(x.shape)} does not match input width {params.input_dim}")
    leaves = [nx.Tensor(a) for a in params.arrays()]
    loss = loss_tensor(forward_leaves(leaves, activations(params), x), y)
    nx.backward(loss)
    return loss.item(), params.from_arrays([leaf.grad for leaf in leaves])


def make_loss_fn(params: LayeredParams, x, y):
    """Closure suitable for :func:`numerics.finite_diff_check`."""
    acts = activations(params)
    x = np.asarray(x, dtype=np.float64)

    def fn(leaves):
        return loss_tensor(forward_leaves(leaves, acts, x), y)

    return fn


def accuracy(params: LayeredParams, x, y) -> float:
    logits = predict(params, x)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(y)))
