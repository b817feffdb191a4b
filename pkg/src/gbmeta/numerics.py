"""Dense float64 tensors with reverse-mode gradients.

Only the handful of primitives a small multilayer perceptron needs are
provided. Every forward call records its inputs and a closure that maps the
output cotangent to input cotangents; :func:`backward` walks that record in
reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

PRIMITIVES = (
    "matmul",
    "add_bias",
    "relu",
    "tanh",
    "mse_loss",
    "softmax_cross_entropy",
    "scalar_eval",
)


class ShapeError(ValueError):
    pass


class LabelRangeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    """A float64 array node in a recorded computation.

    Leaves are created directly from data; interior nodes are produced by the
    primitives below and remember the op that made them in ``op``.
    """

    __slots__ = ("value", "grad", "op", "parents", "_vjp")

    def __init__(self, value, op: str | None = None, parents: tuple = (), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.op = op
        self.parents: tuple[Tensor, ...] = parents
        self._vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return self.op is None

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        tag = self.op or "leaf"
        return f"Tensor({tag}, shape={list(self.shape)})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _mismatch(kind: str, a, b) -> ShapeError:
    return ShapeError(f"{kind}: shapes {list(np.shape(a))} and {list(np.shape(b))} are not conformable")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _mismatch("matmul", a.value, b.value)
    av, bv = a.value, b.value

    def vjp(g):
        return g @ bv.T, av.T @ g

    return Tensor(av @ bv, "matmul", (a, b), vjp)


def add_bias(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 1 or a.shape[1] != b.shape[0]:
        raise _mismatch("add_bias", a.value, b.value)

    def vjp(g):
        return g, g.sum(axis=0)

    return Tensor(a.value + b.value, "add_bias", (a, b), vjp)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    # subgradient at exactly 0 is 0
    active = a.value > 0.0

    def vjp(g):
        return (np.where(active, g, 0.0),)

    return Tensor(np.where(active, a.value, 0.0), "relu", (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.value)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return Tensor(out, "tanh", (a,), vjp)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean of squared errors over every element."""
    pred = _as_tensor(pred)
    target = np.asarray(target.value if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise _mismatch("mse_loss", pred.value, target)
    diff = pred.value - target
    n = diff.size

    def vjp(g):
        return (g * (2.0 / n) * diff,)

    return Tensor(np.mean(diff * diff), "mse_loss", (pred,), vjp)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if logits.value.ndim != 2 or labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise _mismatch("softmax_cross_entropy", logits.value, labels)
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelRangeError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(logsum - z[rows, labels])
    probs = np.exp(z - logsum[:, None])

    def vjp(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (g * d / n,)

    return Tensor(loss, "softmax_cross_entropy", (logits,), vjp)


def scalar_eval(x: Tensor, fn: Callable, dfn: Callable) -> Tensor:
    """Sum of an elementwise scalar function with a known derivative."""
    x = _as_tensor(x)
    xv = x.value

    def vjp(g):
        return (g * np.asarray(dfn(xv), dtype=np.float64),)

    return Tensor(np.sum(fn(xv)), "scalar_eval", (x,), vjp)


_DISPATCH = {
    "matmul": matmul,
    "add_bias": add_bias,
    "relu": relu,
    "tanh": tanh,
    "mse_loss": mse_loss,
    "softmax_cross_entropy": softmax_cross_entropy,
    "scalar_eval": scalar_eval,
}


def apply_primitive(kind: str, inputs: Sequence, **kwargs) -> Tensor:
    try:
        fn = _DISPATCH[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}; expected one of {PRIMITIVES}") from None
    return fn(*inputs, **kwargs)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Fill ``grad`` on every tensor reachable from the scalar ``loss``."""
    if loss.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    order = _topological(loss)
    cot = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(order):
        g = cot.pop(id(node), None)
        if g is None:
            g = np.zeros_like(node.value)
        node.grad = g
        if node._vjp is None:
            continue
        for parent, pg in zip(node.parents, node._vjp(g)):
            if id(parent) in cot:
                cot[id(parent)] = cot[id(parent)] + pg
            else:
                cot[id(parent)] = pg


@dataclass(frozen=True)
class GradReport:
    relative_errors: np.ndarray
    max_relative_error: float
    n_checked: int

    def flagged(self, tol: float = 1e-5) -> np.ndarray:
        """Flat indices whose relative error exceeds ``tol``."""
        return np.flatnonzero(self.relative_errors > tol)


def _param_arrays(params) -> list[np.ndarray]:
    if hasattr(params, "arrays"):
        return params.arrays()
    return [np.asarray(p, dtype=np.float64) for p in params]


def finite_diff_check(params, loss_fn: Callable[[list[Tensor]], Tensor], step: float = 1e-5) -> GradReport:
    """Compare reverse-mode gradients against central differences.

    ``loss_fn`` receives one leaf tensor per parameter array (in the order of
    ``params.arrays()``) and must return a scalar tensor.
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    base = _param_arrays(params)

    def evaluate(arrays):
        leaves = [Tensor(a) for a in arrays]
        loss = loss_fn(leaves)
        if not np.isfinite(loss.value):
            raise NonFiniteError(f"loss is not finite: {loss.value}")
        return loss, leaves

    loss, leaves = evaluate([a.copy() for a in base])
    backward(loss)
    ad = np.concatenate([leaf.grad.ravel() for leaf in leaves])

    fd = np.empty_like(ad)
    flat_idx = 0
    for k, arr in enumerate(base):
        for j in range(arr.size):
            plus = [a.copy() for a in base]
            minus = [a.copy() for a in base]
            plus[k].flat[j] += step
            minus[k].flat[j] -= step
            fp = evaluate(plus)[0].item()
            fm = evaluate(minus)[0].item()
            fd[flat_idx] = (fp - fm) / (2.0 * step)
            flat_idx += 1

    rel = np.abs(ad - fd) / np.maximum(1e-12, np.abs(ad) + np.abs(fd))
    return GradReport(rel, float(rel.max()) if rel.size else 0.0, int(rel.size))


def sgd_step(params, grads, lr: float, mask: Sequence[bool] | None = None):
    """One vanilla gradient step; layers with ``mask[i] == False`` are returned untouched.

    Plain arrays are also accepted (no masking), which is how the scalar toy
    problems carry their parameter.
    """
    if not np.isfinite(lr):
        raise ValueError(f"learning rate must be finite, got {lr}")
    if not hasattr(params, "layers"):
        p, g = np.asarray(params), np.asarray(grads)
        if p.shape != g.shape:
            raise _mismatch("sgd_step", p, g)
        return p - lr * g
    if mask is None:
        mask = [True] * len(params.layers)
    if len(mask) != len(params.layers) or len(grads.layers) != len(params.layers):
        raise ShapeError(
            f"sgd_step: {len(params.layers)} layers, {len(grads.layers)} gradient layers, {len(mask)} mask entries"
        )
    new = []
    for layer, glayer, trainable in zip(params.layers, grads.layers, mask):
        if layer.weight.shape != glayer.weight.shape or layer.bias.shape != glayer.bias.shape:
            raise _mismatch("sgd_step", layer.weight, glayer.weight)
        if trainable:
            new.append(layer.replace(weight=layer.weight - lr * glayer.weight, bias=layer.bias - lr * glayer.bias))
        else:
            new.append(layer)
    return params.with_layers(new)
