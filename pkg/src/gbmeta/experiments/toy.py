"""Convergence of the three algorithms on the two-task 1-D landscapes.

The 100 initializations are carried as one parameter vector; the landscape
loss is a sum over entries, so every entry follows exactly the trajectory it
would follow on its own.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numerics as nx
from ..metaopt import AlgorithmSpec, MetaState, Variant, outer_update
from ..tasks import LandscapeTask

DIVERGENCE = 1e6
BINS = 80
RANGE = (-200.0, 200.0)

# calibrated so that fo-MAML settles near x = 85 and Reptile splits in two
# modes on scenario b with T = 25
TOY_DEFAULTS = {
    "finetune": {"inner_lr": 0.005},
    "reptile": {"inner_lr": 0.033, "outer_lr": 0.01},
    "fomaml": {"inner_lr": 0.1, "outer_lr": 0.5},
}


def toy_spec(name: str, T: int, **overrides) -> AlgorithmSpec:
    params = {**TOY_DEFAULTS[name], **overrides}
    return AlgorithmSpec(Variant(name), inner_steps=T, meta_batch_size=1, **params)


@dataclass(frozen=True)
class ToyResult:
    algorithm: str
    scenario: str
    T: int
    initial: np.ndarray
    final: np.ndarray  # nan where the run diverged
    bin_edges: np.ndarray
    masses: np.ndarray

    @property
    def diverged(self) -> int:
        return int(np.isnan(self.final).sum())

    @property
    def converged(self) -> np.ndarray:
        return self.final[~np.isnan(self.final)]

    @property
    def fixed_point(self) -> float:
        """Mean converged value; meaningful when the spread is small (finetuning)."""
        return float(np.mean(self.converged))

    def modes(self) -> list[tuple[float, float]]:
        """(location, mass) of each run of contiguous occupied histogram bins.

        The location is the mean of the final values falling in the run.
        """
        values = self.converged
        nbins = len(self.masses)
        # same bin assignment as np.histogram: right edge belongs to the last bin
        which = np.clip(np.searchsorted(self.bin_edges, values, side="right") - 1, 0, nbins - 1)
        out = []
        occupied = self.masses > 0
        i = 0
        while i < nbins:
            if not occupied[i]:
                i += 1
                continue
            j = i
            while j + 1 < nbins and occupied[j + 1]:
                j += 1
            inside = values[(which >= i) & (which <= j)]
            out.append((float(inside.mean()), float(self.masses[i : j + 1].sum())))
            i = j + 1
        return out


def density(values: np.ndarray, bins: int = BINS, value_range=RANGE) -> tuple[np.ndarray, np.ndarray]:
    counts, edges = np.histogram(values, bins=bins, range=value_range)
    total = counts.sum()
    masses = counts / total if total else counts.astype(float)
    return edges, masses


def initial_points(n: int = 100, value_range=RANGE) -> np.ndarray:
    return np.linspace(value_range[0], value_range[1], n)


def _step_each(x: np.ndarray, spec: AlgorithmSpec, task: LandscapeTask, rng) -> tuple[np.ndarray, np.ndarray]:
    """Fallback when the vectorised step overflowed: advance entries one by one."""
    out = np.empty_like(x)
    ok = np.ones(x.shape, dtype=bool)
    for i in range(x.size):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                out[i] = outer_update(MetaState(x[i : i + 1], spec, rng), [task]).params[0]
        except nx.NonFiniteError:
            ok[i] = False
    return out, ok


def run_toy_algorithm(
    scenario: str,
    spec: AlgorithmSpec,
    meta_iterations: int,
    initial: np.ndarray | None = None,
) -> ToyResult:
    initial = initial_points() if initial is None else np.asarray(initial, dtype=np.float64)
    tasks = (LandscapeTask(scenario, 1), LandscapeTask(scenario, 2))
    rng = np.random.default_rng(0)  # unused: landscape tasks have no data to batch
    x = initial.copy()
    alive = np.ones(x.size, dtype=bool)
    for i in range(meta_iterations):
        task = tasks[i % 2]
        live = x[alive]
        if live.size == 0:
            break
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                new = outer_update(MetaState(live, spec, rng), [task]).params
            ok = np.ones(live.size, dtype=bool)
        except nx.NonFiniteError:
            new, ok = _step_each(live, spec, task, rng)
        ok &= np.abs(new) <= DIVERGENCE
        idx = np.flatnonzero(alive)
        x[idx[ok]] = new[ok]
        alive[idx[~ok]] = False
    final = np.where(alive, x, np.nan)
    edges, masses = density(final[alive])
    return ToyResult(spec.variant.value, scenario, spec.inner_steps, initial, final, edges, masses)


def run_toy(
    scenario: str,
    T: int,
    specs: dict[str, AlgorithmSpec] | None = None,
    meta_iterations: int = 10_000,
    initial: np.ndarray | None = None,
) -> dict[str, ToyResult]:
    if specs is None:
        specs = {name: toy_spec(name, T) for name in TOY_DEFAULTS}
    return {name: run_toy_algorithm(scenario, spec, meta_iterations, initial) for name, spec in specs.items()}
