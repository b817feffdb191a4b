"""Few-shot protocols on the synthetic class universe.

Training, episodic evaluation, output-layer ablation, support-size sweep,
joint classification accuracy and its correlation with few-shot accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .. import model as mdl
from .. import tasks as tk
from ..metaopt import (
    AlgorithmSpec,
    MetaState,
    Variant,
    adapt_and_evaluate,
    evaluation_policy,
    meta_train,
)
from .stats import mean_ci95, pearson

METHODS = ("finetune", "reptile", "fomaml")


@dataclass(frozen=True)
class UniverseSpec:
    n_classes: int = 20
    fractions: tuple[float, float, float] = (0.5, 0.25, 0.25)
    dim: int = 16
    informative_dims: int = 4
    minor_scale: float = 0.1
    noise_low: float = 0.5
    noise_high: float = 0.8
    pool: int = 300
    seed: int = 0
    shift_seed: int = 12345
    shift_translation: float = 3.0

    def build(self, way: int = 5) -> tk.ClassUniverse:
        return tk.make_class_splits(
            self.n_classes,
            self.fractions,
            self.seed,
            min_classes=way,
            dim=self.dim,
            informative_dims=self.informative_dims,
            minor_scale=self.minor_scale,
            noise_range=(self.noise_low, self.noise_high),
            pool=self.pool,
        )

    def build_shifted(self, way: int = 5) -> tk.ClassUniverse:
        return tk.shifted(self.build(way), self.shift_seed, self.shift_translation)


@dataclass(frozen=True)
class TrainSetup:
    way: int = 5
    shot: int = 1
    query: int = 15
    hidden: tuple[int, ...] = (32, 32)
    activation: str = "relu"
    iterations: int = 2000
    eval_every: int = 500
    val_episodes: int = 200
    eval_steps: int = 10
    eval_lr: float = 0.1
    # head-only training of a fresh output layer needs a longer budget
    finetune_eval_steps: int = 100

    def steps_for(self, variant: Variant) -> int:
        return self.finetune_eval_steps if Variant(variant) is Variant.FINETUNE else self.eval_steps


# Hand-picked defaults for the synthetic universe (no random search).
DEFAULT_SPECS = {
    "finetune": AlgorithmSpec(Variant.FINETUNE, inner_lr=0.1, inner_steps=1, inner_batch_size=32),
    "reptile": AlgorithmSpec(Variant.REPTILE, inner_lr=0.1, inner_steps=5, outer_lr=0.5, meta_batch_size=4),
    "fomaml": AlgorithmSpec(Variant.FOMAML, inner_lr=0.1, inner_steps=5, outer_lr=0.1, meta_batch_size=4),
}


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in keys])


def model_config(spec: AlgorithmSpec, universe: tk.ClassUniverse, setup: TrainSetup, seed: int) -> mdl.ModelConfig:
    # finetuning is trained jointly on every meta-train class
    out = len(universe.splits["train"]) if spec.variant is Variant.FINETUNE else setup.way
    return mdl.ModelConfig(universe.dim, setup.hidden, out, setup.activation, seed)


def episode_bank(universe: tk.ClassUniverse, split: str, n: int, way: int, shot: int, query: int, seed: int):
    rng = _rng(seed, 7)
    return [tk.sample_episode(universe, split, way, shot, query, rng) for _ in range(n)]


def evaluate_bank(
    params: mdl.LayeredParams,
    variant: Variant,
    bank,
    steps: int,
    lr: float,
    head_seed: int = 0,
) -> np.ndarray:
    """Final query accuracy per episode under the variant's evaluation policy."""
    head_policy, mask_policy = evaluation_policy(variant)
    return np.array(
        [
            adapt_and_evaluate(params, ep, steps, lr, head_policy, mask_policy, head_seed=head_seed + i).query_accuracy[
                -1
            ]
            for i, ep in enumerate(bank)
        ]
    )


def train_method(
    spec: AlgorithmSpec,
    universe: tk.ClassUniverse,
    setup: TrainSetup,
    seed: int,
):
    """Meta-train one initialization; returns (best state, history)."""
    params = mdl.init_params(model_config(spec, universe, setup, seed))
    state = MetaState(params, spec, _rng(seed, 1))
    if spec.variant is Variant.FINETUNE:

        def source(rng):
            return tk.sample_source_batch(universe, "train", spec.inner_batch_size, rng)

    else:

        def source(rng):
            return tk.sample_episode(universe, "train", setup.way, setup.shot, setup.query, rng)

    bank = episode_bank(universe, "val", setup.val_episodes, setup.way, 1, setup.query, seed + 1)

    def eval_fn(candidate):
        return float(evaluate_bank(candidate, spec.variant, bank, setup.steps_for(spec.variant), setup.eval_lr, head_seed=10_000).mean())

    return meta_train(state, source, setup.iterations, setup.eval_every, eval_fn)


# ---------------------------------------------------------------------------
# output-layer ablation


@dataclass(frozen=True)
class AblationRow:
    algorithm: str
    head: str
    step: int
    grad_norm_mean: float
    grad_norm_hw: float
    accuracy_mean: float
    accuracy_hw: float


def run_head_ablation(
    states: dict[str, mdl.LayeredParams],
    episodes,
    steps: int,
    lr: float,
    head_seed: int = 0,
) -> list[AblationRow]:
    """Per-step gradient norms and query accuracy with the learned vs a random output layer.

    Step 0 carries the accuracy before any update and no gradient norm; step
    ``t >= 1`` carries the norm of the gradient taken for update ``t`` and the
    accuracy after it.
    """
    rows = []
    for name, params in states.items():
        for head in ("learned", "random_head"):
            traces = [
                adapt_and_evaluate(params, ep, steps, lr, head, "all_trainable", head_seed=head_seed + i)
                for i, ep in enumerate(episodes)
            ]
            acc = np.array([t.query_accuracy for t in traces])
            norms = np.array([t.grad_norms for t in traces]).reshape(len(traces), steps)
            for s in range(steps + 1):
                am, ah = mean_ci95(acc[:, s])
                gm, gh = mean_ci95(norms[:, s - 1]) if s >= 1 else (float("nan"), float("nan"))
                rows.append(AblationRow(name, head, s, gm, gh, am, ah))
    return rows


# ---------------------------------------------------------------------------
# support-size sweep


@dataclass(frozen=True)
class SweepResult:
    algorithm: str
    k_train: int
    accuracies: tuple[float, ...]  # one mean test accuracy per seed

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def min(self) -> float:
        return float(np.min(self.accuracies))

    @property
    def max(self) -> float:
        return float(np.max(self.accuracies))


def run_k_sweep(
    k_train_values,
    specs: dict[str, AlgorithmSpec],
    universe: tk.ClassUniverse,
    setup: TrainSetup,
    seeds=(0, 1, 2, 3, 4),
    test_episodes: int = 200,
) -> list[SweepResult]:
    """Train with k_train support examples per class, always test on 1-shot tasks."""
    results = []
    for name, spec in specs.items():
        for k in k_train_values:
            accs = []
            for seed in seeds:
                state, _ = train_method(spec, universe, replace(setup, shot=int(k)), seed)
                bank = episode_bank(universe, "test", test_episodes, setup.way, 1, setup.query, seed + 2)
                accs.append(float(evaluate_bank(state.params, spec.variant, bank, setup.steps_for(spec.variant), setup.eval_lr).mean()))
            results.append(SweepResult(name, int(k), tuple(accs)))
    return results


# ---------------------------------------------------------------------------
# joint classification accuracy


def stratified_split(labels: np.ndarray, train_fraction: float, rng: np.random.Generator):
    """Per-class shuffled split; returns (train indices, test indices)."""
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        cut = int(round(train_fraction * idx.size))
        train.append(idx[:cut])
        test.append(idx[cut:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def features(params: mdl.LayeredParams, x: np.ndarray) -> np.ndarray:
    if params.L == 1:
        return np.asarray(x, dtype=np.float64)
    return mdl.predict(params.body, x)


def run_joint_accuracy(
    params: mdl.LayeredParams,
    universe: tk.ClassUniverse,
    epochs: int = 30,
    seed: int = 0,
    *,
    split: str = "test",
    lr: float = 0.1,
    batch_size: int = 32,
    train_fraction: float = 0.6,
) -> float:
    """Held-out accuracy of a fresh head trained non-episodically on a frozen body.

    The body is applied once to every pooled example of ``split``; only the
    new head, with one output per class of the split, is trained.
    """
    data = tk.split_pool(universe, split)
    n_classes = len(universe.splits[split])
    rng = _rng(seed, 3)
    tr, te = stratified_split(data.y, train_fraction, rng)
    feats = features(params, data.x)
    head = mdl.LayeredParams((mdl.replace_head(params, n_classes, int(rng.integers(2**31))).head,))
    xtr, ytr = feats[tr], data.y[tr]
    for _ in range(epochs):
        perm = rng.permutation(len(tr))
        for start in range(0, len(tr), batch_size):
            b = perm[start : start + batch_size]
            _, g = mdl.loss_and_grads(head, xtr[b], ytr[b])
            head = head + (-lr) * g
    return mdl.accuracy(head, feats[te], data.y[te])


# ---------------------------------------------------------------------------
# correlation study


@dataclass(frozen=True)
class RunRecord:
    method: str
    capacity: str
    seed: int
    universe: str
    joint_accuracy: float
    fewshot_accuracy: float


@dataclass(frozen=True)
class CorrelationResult:
    method: str
    capacity: str
    universe: str
    pairs: tuple[tuple[float, float], ...]
    r: float
    p: float

    @property
    def n(self) -> int:
        return len(self.pairs)


def capacity_label(hidden) -> str:
    return "x".join(str(h) for h in hidden)


def _correlate(method, capacity, universe, records) -> CorrelationResult:
    pairs = tuple((r.joint_accuracy, r.fewshot_accuracy) for r in records)
    try:
        r, p = pearson([a for a, _ in pairs], [b for _, b in pairs])
    except ValueError:
        r, p = float("nan"), float("nan")
    return CorrelationResult(method, capacity, universe, pairs, r, p)


@dataclass
class CorrelationStudy:
    records: list[RunRecord] = field(default_factory=list)
    results: list[CorrelationResult] = field(default_factory=list)
    params: dict = field(default_factory=dict)  # (method, capacity, seed) -> trained params

    def pooled_joint_accuracy(self) -> dict[str, float]:
        out = {}
        for m in {r.method for r in self.records}:
            out[m] = float(np.mean([r.joint_accuracy for r in self.records if r.method == m]))
        return out

    def mean_fewshot(self, method: str, universe: str) -> float:
        return float(
            np.mean([r.fewshot_accuracy for r in self.records if r.method == method and r.universe == universe])
        )


def run_correlation_study(
    specs: dict[str, AlgorithmSpec],
    capacities,
    universe_spec: UniverseSpec,
    setup: TrainSetup,
    seeds=(0, 1, 2, 3, 4),
    test_episodes: int = 200,
    joint_epochs: int = 30,
) -> CorrelationStudy:
    """Train every (method, capacity, seed) once on the in-distribution universe,
    then measure joint and 1-shot accuracy on both universes' test classes."""
    universes = {
        "in_distribution": universe_spec.build(setup.way),
        "shifted": universe_spec.build_shifted(setup.way),
    }
    train_universe = universes["in_distribution"]
    study = CorrelationStudy()
    for name, spec in specs.items():
        for hidden in capacities:
            cap = capacity_label(hidden)
            for seed in seeds:
                state, _ = train_method(spec, train_universe, replace(setup, hidden=tuple(hidden)), seed)
                study.params[(name, cap, seed)] = state.params
                for uname, uni in universes.items():
                    joint = run_joint_accuracy(state.params, uni, joint_epochs, seed)
                    bank = episode_bank(uni, "test", test_episodes, setup.way, 1, setup.query, seed + 2)
                    few = float(
                        evaluate_bank(state.params, spec.variant, bank, setup.steps_for(spec.variant), setup.eval_lr).mean()
                    )
                    study.records.append(RunRecord(name, cap, seed, uname, joint, few))

    for uname in universes:
        in_u = [r for r in study.records if r.universe == uname]
        for name in specs:
            for hidden in capacities:
                cap = capacity_label(hidden)
                sel = [r for r in in_u if r.method == name and r.capacity == cap]
                study.results.append(_correlate(name, cap, uname, sel))
            study.results.append(_correlate(name, "pooled", uname, [r for r in in_u if r.method == name]))
        study.results.append(_correlate("pooled", "pooled", uname, in_u))
    return study
