"""Task distributions: 1-D loss landscapes, sine regression, synthetic N-way k-shot classification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx

SPLITS = ("train", "val", "test")


class InsufficientClassesError(ValueError):
    pass


# ---------------------------------------------------------------------------
# toy loss landscapes


def _check_landscape(scenario: str, task_id: int):
    if scenario not in ("a", "b") or task_id not in (1, 2):
        raise ValueError(f"unknown landscape task ({scenario!r}, {task_id!r})")


def landscape_loss(scenario: str, task_id: int, x):
    _check_landscape(scenario, task_id)
    x = np.asarray(x, dtype=np.float64)
    if task_id == 1:
        out = 1.3 * (x - 5.0) ** 2
    elif task_id == 2 and scenario == "a":
        out = (x - 100.0) ** 2
    else:
        out = np.where(x > 50.0, (x - 100.0) ** 2, -5.0 * x + 2750.0)
    return float(out) if out.ndim == 0 else out


def landscape_grad(scenario: str, task_id: int, x):
    _check_landscape(scenario, task_id)
    x = np.asarray(x, dtype=np.float64)
    if task_id == 1:
        out = 2.6 * (x - 5.0)
    elif task_id == 2 and scenario == "a":
        out = 2.0 * (x - 100.0)
    else:
        out = np.where(x > 50.0, 2.0 * (x - 100.0), -5.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LandscapeTask:
    """One task of a two-task toy scenario.

    The parameter is an array of independent copies of ``x``; the loss is
    their sum, so each entry receives exactly its own derivative.
    """

    scenario: str
    task_id: int

    def __post_init__(self):
        _check_landscape(self.scenario, self.task_id)

    def loss(self, x):
        return landscape_loss(self.scenario, self.task_id, x)

    def grad(self, x):
        return landscape_grad(self.scenario, self.task_id, x)

    def loss_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        leaf = nx.Tensor(x)
        loss = nx.scalar_eval(leaf, self.loss, self.grad)
        nx.backward(loss)
        return loss.item(), leaf.grad


def interleaved_tasks(scenario: str):
    """Endless 1, 2, 1, 2, ... alternation of the scenario's two tasks."""
    tasks = (LandscapeTask(scenario, 1), LandscapeTask(scenario, 2))
    i = 0
    while True:
        yield tasks[i % 2]
        i += 1


# ---------------------------------------------------------------------------
# sine regression


@dataclass(frozen=True)
class SineTask:
    amplitude: float
    phase: float

    def target(self, x):
        return self.amplitude * np.sin(np.asarray(x, dtype=np.float64) + self.phase)


@dataclass(frozen=True)
class Batch:
    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.x)

    def take(self, idx) -> "Batch":
        return Batch(self.x[idx], self.y[idx], None if self.ids is None else self.ids[idx])


def sample_sine_task(rng: np.random.Generator, amplitude_range=(0.1, 5.0), phase_range=(0.0, np.pi)) -> SineTask:
    return SineTask(float(rng.uniform(*amplitude_range)), float(rng.uniform(*phase_range)))


def sine_batch(task: SineTask, m: int, rng: np.random.Generator, interval=(-5.0, 5.0)) -> Batch:
    if m < 1:
        raise ValueError(f"batch size must be at least 1, got {m}")
    x = rng.uniform(*interval, size=(m, 1))
    return Batch(x, task.target(x))


@dataclass(frozen=True)
class SineEpisode:
    support: Batch
    query: Batch


def sample_sine_episode(rng: np.random.Generator, k: int = 10, q: int = 10, **ranges) -> SineEpisode:
    interval = ranges.pop("interval", (-5.0, 5.0))
    task = sample_sine_task(rng, **ranges)
    return SineEpisode(sine_batch(task, k, rng, interval), sine_batch(task, q, rng, interval))


# ---------------------------------------------------------------------------
# synthetic classification universe


@dataclass(frozen=True)
class ClassUniverse:
    """Gaussian class clusters with a disjoint train/val/test class partition.

    ``examples`` holds a fixed pool of draws per class so that instances have
    stable ids: instance ``(c, i)`` has id ``c * pool + i``.
    """

    prototypes: np.ndarray  # n_classes x dim
    scales: np.ndarray  # per-class noise std
    splits: dict = field(hash=False)
    noise: np.ndarray = field(repr=False, hash=False)  # n_classes x pool x dim, unit normal
    distribution: str = "in_distribution"

    @property
    def n_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    @property
    def pool(self) -> int:
        return self.noise.shape[1]

    def split_of(self, c: int) -> str:
        hits = [name for name, ids in self.splits.items() if c in ids]
        if len(hits) != 1:
            raise ValueError(f"class {c} belongs to {len(hits)} splits")
        return hits[0]

    def examples(self, c: int, idx=None) -> np.ndarray:
        z = self.noise[c] if idx is None else self.noise[c, idx]
        return self.prototypes[c] + self.scales[c] * z


def _split_sizes(n: int, fractions) -> list[int]:
    raw = np.asarray(fractions, dtype=np.float64) * n
    sizes = np.floor(raw).astype(int)
    # largest remainder, ties to the earlier split
    for i in np.argsort(-(raw - sizes), kind="stable")[: n - sizes.sum()]:
        sizes[i] += 1
    return sizes.tolist()


def make_class_splits(
    universe_size: int,
    fractions=(0.5, 0.25, 0.25),
    seed: int = 0,
    *,
    min_classes: int = 5,
    dim: int = 16,
    informative_dims: int | None = None,
    minor_scale: float = 0.25,
    noise_range=(0.6, 0.9),
    pool: int = 100,
) -> ClassUniverse:
    """Sample class prototypes and partition the classes into disjoint splits.

    Prototype coordinates are standard normal in the first ``informative_dims``
    directions and shrunk by ``minor_scale`` elsewhere, so the discriminative
    structure lives in a subspace a network can learn to attend to.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    sizes = _split_sizes(universe_size, fractions)
    for name, size in zip(SPLITS, sizes):
        if size < min_classes:
            raise InsufficientClassesError(
                f"split {name!r} gets {size} classes but episodes need at least {min_classes}"
            )
    rng = np.random.default_rng(seed)
    informative_dims = dim // 2 if informative_dims is None else informative_dims
    spectrum = np.where(np.arange(dim) < informative_dims, 1.0, minor_scale)
    prototypes = rng.standard_normal((universe_size, dim)) * spectrum
    scales = rng.uniform(*noise_range, size=universe_size)
    noise = rng.standard_normal((universe_size, pool, dim))
    order = rng.permutation(universe_size)
    bounds = np.cumsum([0, *sizes])
    splits = {name: tuple(sorted(int(c) for c in order[bounds[i] : bounds[i + 1]])) for i, name in enumerate(SPLITS)}
    return ClassUniverse(prototypes, scales, splits, noise)


def random_rotation(dim: int, seed: int) -> np.ndarray:
    q, r = np.linalg.qr(np.random.default_rng(seed).standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def shifted(universe: ClassUniverse, seed: int = 12345, translation: float = 1.5) -> ClassUniverse:
    """Same classes under a fixed rotation and translation of every prototype."""
    rot = random_rotation(universe.dim, seed)
    offset = np.random.default_rng(seed + 1).standard_normal(universe.dim)
    offset *= translation / np.linalg.norm(offset)
    return ClassUniverse(
        universe.prototypes @ rot.T + offset,
        universe.scales,
        universe.splits,
        universe.noise,
        "shifted",
    )


@dataclass(frozen=True)
class Episode:
    support: Batch
    query: Batch
    way: int
    shot: int
    classes: tuple[int, ...]  # original class id of remapped label i

    @property
    def remap(self) -> dict[int, int]:
        return {c: i for i, c in enumerate(self.classes)}


def _split_classes(universe: ClassUniverse, split: str, n: int) -> tuple[int, ...]:
    classes = universe.splits[split]
    if len(classes) < n:
        raise InsufficientClassesError(f"split {split!r} has {len(classes)} classes, need {n}")
    return classes


def sample_episode(
    universe: ClassUniverse, split: str, N: int, k: int, q: int, rng: np.random.Generator
) -> Episode:
    if k < 1 or q < 1:
        raise ValueError(f"shot and query counts must be at least 1, got k={k}, q={q}")
    if k + q > universe.pool:
        raise ValueError(f"k + q = {k + q} exceeds the {universe.pool} examples per class")
    pool = _split_classes(universe, split, N)
    chosen = rng.choice(pool, size=N, replace=False)
    sx, sy, sid, qx, qy, qid = [], [], [], [], [], []
    for label, c in enumerate(chosen):
        idx = rng.choice(universe.pool, size=k + q, replace=False)
        xs = universe.examples(c, idx)
        ids = c * universe.pool + idx
        sx.append(xs[:k])
        qx.append(xs[k:])
        sid.append(ids[:k])
        qid.append(ids[k:])
        sy.append(np.full(k, label))
        qy.append(np.full(q, label))
    support = Batch(np.concatenate(sx), np.concatenate(sy), np.concatenate(sid))
    query = Batch(np.concatenate(qx), np.concatenate(qy), np.concatenate(qid))
    return Episode(support, query, N, k, tuple(int(c) for c in chosen))


def sample_source_batch(universe: ClassUniverse, split: str, size: int, rng: np.random.Generator) -> Batch:
    """Non-episodic mini-batch over every class of a split, labelled by position in the split."""
    classes = np.asarray(universe.splits[split])
    labels = rng.integers(len(classes), size=size)
    idx = rng.integers(universe.pool, size=size)
    cls = classes[labels]
    x = universe.prototypes[cls] + universe.scales[cls, None] * universe.noise[cls, idx]
    return Batch(x, labels, cls * universe.pool + idx)


def split_pool(universe: ClassUniverse, split: str) -> Batch:
    """Every pooled example of a split, labelled by class position within the split."""
    classes = universe.splits[split]
    xs = [universe.examples(c) for c in classes]
    ys = [np.full(universe.pool, i) for i in range(len(classes))]
    ids = [c * universe.pool + np.arange(universe.pool) for c in classes]
    return Batch(np.concatenate(xs), np.concatenate(ys), np.concatenate(ids))
