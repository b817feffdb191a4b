"""Command-line entry point: ``gbmeta <verb> [--config PATH] [--seed INT] [--out DIR]``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from . import numerics as nx
from . import tasks as tk
from .experiments import fewshot as fs
from .experiments import toy
from .experiments.stats import mean_ci95
from .metaopt import Variant

# exit codes per error category
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_CHECKPOINT = 4
EXIT_NUMERIC = 5
EXIT_DATA = 6
EXIT_IO = 7


def _universe(cfg: io.ExperimentConfig, which: str) -> tk.ClassUniverse:
    way = cfg.setup.way
    return cfg.universe.build_shifted(way) if which == "shifted" else cfg.universe.build(way)


def _report(msg: str) -> None:
    print(msg, flush=True)


def cmd_toy(cfg: io.ExperimentConfig, out: Path) -> None:
    o = cfg.toy
    specs = {name: cfg.spec_for(name) for name in o.algorithms}
    results = toy.run_toy(o.scenario, o.T, specs, o.meta_iterations)
    rows, plot = [], []
    for name, res in results.items():
        for x0, xf in zip(res.initial, res.final):
            rows.append(dict(algorithm=name, scenario=o.scenario, T=o.T, initial=x0, final=xf, diverged=bool(np.isnan(xf))))
        centers = 0.5 * (res.bin_edges[:-1] + res.bin_edges[1:])
        for c, m in zip(centers, res.masses):
            plot.append(dict(figure="toy-density", series=name, x=c, y=m))
        modes = ", ".join(f"{loc:.2f} ({mass:.2f})" for loc, mass in res.modes())
        _report(f"{name}: diverged {res.diverged}/{res.final.size}; modes {modes or 'none'}")
    io.write_results(out / "toy.csv", "toy", rows)
    io.write_results(out / "toy_density.csv", "plot", plot)


def _train(cfg: io.ExperimentConfig, spec, seed: int, universe=None, hidden=None):
    setup = cfg.setup if hidden is None else replace(cfg.setup, hidden=tuple(hidden))
    universe = universe or _universe(cfg, "in_distribution")
    state, history = fs.train_method(spec, universe, setup, seed)
    metric = next((h.val_metric for h in history if h.iteration == state.iteration), float("nan"))
    ckpt = io.Checkpoint(
        fs.model_config(spec, universe, setup, seed), state.params, state.iteration, float(metric), spec.variant.value
    )
    return ckpt, history


def cmd_train(cfg: io.ExperimentConfig, out: Path) -> None:
    ckpt, history = _train(cfg, cfg.algorithm, cfg.seed)
    io.save_checkpoint(out / "checkpoint.bin", ckpt)
    io.write_results(
        out / "history.csv",
        "train",
        [dict(iteration=h.iteration, train_loss=h.train_loss, val_metric=h.val_metric) for h in history],
    )
    _report(f"best validation accuracy {ckpt.val_metric:.4f} at iteration {ckpt.iteration}")


def cmd_eval(cfg: io.ExperimentConfig, out: Path) -> None:
    o = cfg.eval
    ckpt = io.load_checkpoint(o.checkpoint)
    if not ckpt.variant:
        raise io.CorruptCheckpointError(f"{o.checkpoint}: checkpoint does not record its algorithm")
    variant = Variant(ckpt.variant)
    bank = fs.episode_bank(_universe(cfg, o.universe), o.split, o.episodes, cfg.setup.way, 1, cfg.setup.query, cfg.seed)
    accs = fs.evaluate_bank(ckpt.params, variant, bank, cfg.setup.steps_for(variant), cfg.setup.eval_lr)
    mean, hw = mean_ci95(accs)
    io.write_results(
        out / "eval.csv",
        "eval",
        [dict(variant=variant.value, universe=o.universe, split=o.split, episodes=o.episodes, accuracy_mean=mean, accuracy_hw=hw)],
    )
    _report(f"{variant.value} 1-shot accuracy {mean:.4f} +/- {hw:.4f}")


def cmd_ablate(cfg: io.ExperimentConfig, out: Path) -> None:
    o = cfg.ablation
    universe = _universe(cfg, "in_distribution")
    states = {name: _train(cfg, cfg.spec_for(name), cfg.seed, universe)[0].params for name in o.algorithms}
    bank = fs.episode_bank(universe, "test", o.episodes, cfg.setup.way, 1, cfg.setup.query, cfg.seed)
    rows = fs.run_head_ablation(states, bank, o.steps, o.lr, head_seed=cfg.seed)
    io.write_results(out / "ablation.csv", "ablate-head", rows)
    plot = []
    for r in rows:
        plot.append(dict(figure="ablation-accuracy", series=f"{r.algorithm}/{r.head}", x=r.step, y=r.accuracy_mean))
        if r.step >= 1:
            plot.append(dict(figure="ablation-grad-norm", series=f"{r.algorithm}/{r.head}", x=r.step, y=r.grad_norm_mean))
    io.write_results(out / "ablation_plot.csv", "plot", plot)
    for r in rows:
        if r.step == o.steps:
            _report(f"{r.algorithm}/{r.head}: final accuracy {r.accuracy_mean:.4f} +/- {r.accuracy_hw:.4f}")


def cmd_sweep(cfg: io.ExperimentConfig, out: Path) -> None:
    o = cfg.sweep
    specs = {name: cfg.spec_for(name) for name in o.algorithms}
    results = fs.run_k_sweep(
        o.k_train, specs, _universe(cfg, "in_distribution"), cfg.setup, cfg.run_seeds(o.runs), o.test_episodes
    )
    rows = [
        dict(
            algorithm=r.algorithm,
            k_train=r.k_train,
            seed=cfg.seed,
            accuracy_mean=r.mean,
            accuracy_min=r.min,
            accuracy_max=r.max,
        )
        for r in results
    ]
    io.write_results(out / "sweep.csv", "sweep-k", rows)
    for r in results:
        _report(f"{r.algorithm} k_train={r.k_train}: mean {r.mean:.4f} [{r.min:.4f}, {r.max:.4f}]")


def cmd_joint(cfg: io.ExperimentConfig, out: Path) -> None:
    o = cfg.joint
    if o.checkpoint:
        params = io.load_checkpoint(o.checkpoint).params
        source = o.checkpoint
    else:
        spec = cfg.algorithm or fs.DEFAULT_SPECS["finetune"]
        params = _train(cfg, spec, cfg.seed)[0].params
        source = f"trained:{spec.variant.value}"
    acc = fs.run_joint_accuracy(
        params,
        _universe(cfg, o.universe),
        o.epochs,
        cfg.seed,
        lr=o.lr,
        batch_size=o.batch_size,
        train_fraction=o.train_fraction,
    )
    io.write_results(out / "joint.csv", "joint-acc", [dict(checkpoint=source, universe=o.universe, seed=cfg.seed, joint_accuracy=acc)])
    _report(f"joint classification accuracy {acc:.4f}")


def cmd_correlate(cfg: io.ExperimentConfig, out: Path) -> None:
    o = cfg.correlate
    specs = {name: cfg.spec_for(name) for name in o.algorithms}
    study = fs.run_correlation_study(
        specs, o.capacities, cfg.universe, cfg.setup, cfg.run_seeds(o.runs), o.test_episodes, o.joint_epochs
    )
    io.write_results(
        out / "correlate.csv",
        "correlate",
        [dict(method=r.method, capacity=r.capacity, universe=r.universe, r=r.r, p=r.p, n=r.n) for r in study.results],
    )
    io.write_results(out / "correlate_runs.csv", "correlate-runs", study.records)
    io.write_results(
        out / "correlate_plot.csv",
        "plot",
        [
            dict(figure=f"joint-vs-fewshot/{r.universe}", series=f"{r.method}/{r.capacity}/{r.seed}", x=r.joint_accuracy, y=r.fewshot_accuracy)
            for r in study.records
        ],
    )
    for r in study.results:
        _report(f"{r.method}/{r.capacity}/{r.universe}: r={r.r:.3f} p={r.p:.3g} n={r.n}")


COMMANDS = {
    "toy": cmd_toy,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate-head": cmd_ablate,
    "sweep-k": cmd_sweep,
    "joint-acc": cmd_joint,
    "correlate": cmd_correlate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gbmeta", description="Gradient-based meta-learning experiments.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in COMMANDS:
        p = sub.add_parser(verb)
        p.add_argument("--config", type=Path, help="TOML experiment configuration")
        p.add_argument("--seed", type=int, help="overrides the configured seed")
        p.add_argument("--out", type=Path, help="output directory (overrides the configured one)")
    return parser


def load_config(verb: str, config: Path | None, seed: int | None, out: Path | None) -> io.ExperimentConfig:
    cfg = io.parse_config(config) if config else io.config_from_dict({"kind": verb})
    if cfg.kind != verb:
        raise io.ConfigError(f"kind: config is for {cfg.kind!r} but the command is {verb!r}")
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out is not None:
        cfg = replace(cfg, out=str(out))
    return cfg


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = load_config(args.verb, args.config, args.seed, args.out)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        # record the fully resolved configuration next to the results
        (out / "config.toml").write_text(io.serialize_config(cfg))
        COMMANDS[args.verb](cfg, out)
    except io.ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except io.CheckpointError as exc:
        return _fail("checkpoint", exc, EXIT_CHECKPOINT)
    except nx.NonFiniteError as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    except (tk.InsufficientClassesError, nx.ShapeError, nx.LabelRangeError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except OSError as exc:
        return _fail("io", exc, EXIT_IO)
    return EXIT_OK


def _fail(category: str, exc: BaseException, code: int) -> int:
    print(f"gbmeta: {category} error: {exc}", file=sys.stderr)
    return code


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
