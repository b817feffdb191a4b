"""Gradient-based initialization learning: finetuning, Reptile and first-order MAML.

All three share one loop. Each outer iteration picks a data source (the
pooled source data for finetuning, a sampled task otherwise), runs ``T``
plain SGD steps from the current initialization, and then moves the
initialization:

* finetuning:  init <- adapted
* Reptile:     init <- init + outer_lr * mean over tasks of (adapted - init)
* fo-MAML:     init <- init - outer_lr * mean over tasks of grad loss(adapted)

A task here is anything :func:`task_loss_grad` understands: an
:class:`~gbmeta.tasks.Episode`, a :class:`~gbmeta.tasks.SineEpisode`, a bare
:class:`~gbmeta.tasks.Batch` (a non-episodic source batch), or a
:class:`~gbmeta.tasks.LandscapeTask`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import reduce
from typing import Callable, Iterator, Sequence

import numpy as np

from . import model as mdl
from . import numerics as nx
from .tasks import Batch, Episode, LandscapeTask


class Variant(str, enum.Enum):
    FINETUNE = "finetune"
    REPTILE = "reptile"
    FOMAML = "fomaml"


@dataclass(frozen=True)
class AlgorithmSpec:
    variant: Variant
    inner_lr: float
    inner_steps: int = 1
    outer_lr: float = 0.0  # interpolation step for Reptile, meta step for fo-MAML; unused by finetuning
    meta_batch_size: int = 1
    inner_batch_size: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.inner_lr < 0 or not np.isfinite(self.inner_lr):
            raise ValueError(f"inner_lr must be finite and non-negative, got {self.inner_lr}")
        if self.inner_steps < 1:
            raise ValueError(f"inner_steps must be at least 1, got {self.inner_steps}")
        if self.meta_batch_size < 1 or self.inner_batch_size < 1:
            raise ValueError("meta_batch_size and inner_batch_size must be positive")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "inner_lr": self.inner_lr,
            "inner_steps": self.inner_steps,
            "outer_lr": self.outer_lr,
            "meta_batch_size": self.meta_batch_size,
            "inner_batch_size": self.inner_batch_size,
        }


@dataclass
class AdaptationTrace:
    support_losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    query_accuracy: list[float] = field(default_factory=list)
    query_loss: list[float] = field(default_factory=list)
    params: object = None


@dataclass(frozen=True)
class MetaState:
    params: object
    spec: AlgorithmSpec
    rng: np.random.Generator = field(compare=False)
    iteration: int = 0
    last_loss: float = float("nan")


@dataclass(frozen=True)
class HistoryRow:
    iteration: int
    train_loss: float
    val_metric: float | None


def _support(task) -> Batch | None:
    if isinstance(task, Batch):
        return task
    return getattr(task, "support", None)


def _query(task) -> Batch | None:
    return getattr(task, "query", None)


def task_loss_grad(params, task, batch: Batch | None):
    if isinstance(task, LandscapeTask):
        return task.loss_and_grad(params)
    return mdl.loss_and_grads(params, batch.x, batch.y)


def _grad_norm(grads) -> float:
    if hasattr(grads, "norm"):
        return grads.norm()
    return float(np.linalg.norm(grads))


def support_batches(task, batch_size: int, rng: np.random.Generator | None) -> Iterator[Batch | None]:
    """Per-step inner batches drawn from the support set only.

    The full support set is reused every step when it fits in one batch;
    otherwise batches are drawn without replacement and reshuffled each epoch.
    """
    data = _support(task)
    if data is None:
        while True:
            yield None
    n = len(data)
    if batch_size >= n:
        while True:
            yield data
    if rng is None:
        raise ValueError("mini-batching the support set needs an rng")
    while True:
        perm = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield data.take(perm[start : start + batch_size])


def _check_finite(loss: float, step: int):
    if not np.isfinite(loss):
        raise nx.NonFiniteError(f"non-finite loss {loss} at inner step {step}")


def _copy(params):
    # LayeredParams is immutable; arrays are not
    return params.copy() if isinstance(params, np.ndarray) else params


def inner_adapt(
    params,
    task,
    spec: AlgorithmSpec,
    mask: Sequence[bool] | None = None,
    rng: np.random.Generator | None = None,
    *,
    steps: int | None = None,
    lr: float | None = None,
    track_query: bool = False,
):
    """Run ``T`` SGD steps from ``params`` on the task's support data.

    Returns ``(adapted, trace)``; ``params`` itself is never modified.
    """
    steps = spec.inner_steps if steps is None else steps
    lr = spec.inner_lr if lr is None else lr
    trace = AdaptationTrace()
    query = _query(task) if track_query else None
    current = _copy(params)
    if query is not None:
        _record_query(trace, current, query)
    batches = support_batches(task, spec.inner_batch_size, rng)
    for t in range(steps):
        loss, grads = task_loss_grad(current, task, next(batches))
        _check_finite(loss, t)
        trace.support_losses.append(loss)
        trace.grad_norms.append(_grad_norm(grads))
        current = nx.sgd_step(current, grads, lr, mask)
        if query is not None:
            _record_query(trace, current, query)
    trace.params = current
    return current, trace


def _record_query(trace: AdaptationTrace, params, query: Batch):
    loss = mdl.loss_tensor(mdl.forward(params, query.x), query.y)
    trace.query_loss.append(loss.item())
    if np.issubdtype(query.y.dtype, np.integer):
        trace.query_accuracy.append(mdl.accuracy(params, query.x, query.y))


def _mean(items: list):
    total = reduce(lambda a, b: a + b, items)
    return total if len(items) == 1 else total * (1.0 / len(items))


def outer_update(state: MetaState, episodes: Sequence) -> MetaState:
    spec = state.spec
    if len(episodes) != spec.meta_batch_size:
        raise ValueError(f"expected {spec.meta_batch_size} tasks in the meta-batch, got {len(episodes)}")
    start = state.params
    adapted, losses, outer_grads = [], [], []
    for task in episodes:
        end, trace = inner_adapt(start, task, spec, rng=state.rng)
        adapted.append(end)
        if spec.variant is Variant.FOMAML:
            # identity Jacobian: the gradient at the adapted point is the meta-gradient
            query = _query(task)
            loss, g = task_loss_grad(end, task, query)
            _check_finite(loss, spec.inner_steps)
            outer_grads.append(g)
            losses.append(loss)
        elif spec.variant is Variant.REPTILE:
            losses.append(float(np.mean(trace.support_losses)))
        else:
            losses.append(trace.support_losses[0])

    if spec.variant is Variant.FINETUNE:
        new = _mean(adapted)
    elif spec.variant is Variant.REPTILE:
        new = start + spec.outer_lr * _mean([a - start for a in adapted])
    else:
        new = nx.sgd_step(start, _mean(outer_grads), spec.outer_lr)

    if not all(np.all(np.isfinite(a)) for a in _arrays(new)):
        raise nx.NonFiniteError(f"non-finite parameters after outer update {state.iteration}")
    return replace(state, params=new, iteration=state.iteration + 1, last_loss=float(np.mean(losses)))


def _arrays(params) -> list[np.ndarray]:
    return params.arrays() if hasattr(params, "arrays") else [np.asarray(params)]


def meta_train(
    state: MetaState,
    source: Callable[[np.random.Generator], object],
    iterations: int,
    eval_every: int,
    eval_fn: Callable[[object], float],
) -> tuple[MetaState, list[HistoryRow]]:
    """Run the outer loop and keep the checkpoint with the best validation metric.

    ``source(rng)`` draws one task; ``eval_fn(params)`` must not touch the
    training rng. Validation runs every ``eval_every`` iterations and once
    more after the last iteration if that one was not already validated.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be at least 1, got {iterations}")
    if eval_every < 1:
        raise ValueError(f"eval_every must be at least 1, got {eval_every}")
    history: list[HistoryRow] = []
    best, best_metric = state, -np.inf
    for i in range(1, iterations + 1):
        tasks = [source(state.rng) for _ in range(state.spec.meta_batch_size)]
        try:
            state = outer_update(state, tasks)
        except nx.NonFiniteError as exc:
            raise nx.NonFiniteError(f"meta-iteration {i}: {exc}") from exc
        metric = None
        if i % eval_every == 0 or i == iterations:
            metric = float(eval_fn(state.params))
            if metric > best_metric:
                best, best_metric = state, metric
        history.append(HistoryRow(state.iteration, state.last_loss, metric))
    return best, history


def adapt_and_evaluate(
    params: mdl.LayeredParams,
    episode: Episode,
    steps: int,
    lr: float,
    head_policy: str = "learned",
    mask_policy: str = "all_trainable",
    *,
    head_seed: int = 0,
    inner_batch_size: int = 10_000,
    rng: np.random.Generator | None = None,
) -> AdaptationTrace:
    """Adapt to one episode and record query accuracy after 0..steps updates."""
    if steps < 0:
        raise ValueError(f"steps must be non-negative, got {steps}")
    if head_policy == "random_head":
        params = mdl.replace_head(params, episode.way, head_seed)
    elif head_policy != "learned":
        raise ValueError(f"unknown head policy {head_policy!r}")
    if params.output_dim != episode.way:
        raise nx.ShapeError(f"head has {params.output_dim} outputs but the episode is {episode.way}-way")
    mask = mdl.freeze_mask(params, mask_policy)
    spec = AlgorithmSpec(Variant.FINETUNE, lr, max(steps, 1), inner_batch_size=inner_batch_size)
    _, trace = inner_adapt(params, episode, spec, mask, rng, steps=steps, lr=lr, track_query=True)
    return trace


def evaluation_policy(variant: Variant) -> tuple[str, str]:
    """How a trained initialization is used on a new task: (head policy, mask policy)."""
    if Variant(variant) is Variant.FINETUNE:
        return "random_head", "body_frozen"
    return "learned", "all_trainable"
