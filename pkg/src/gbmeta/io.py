"""Experiment configuration, checkpoint persistence and CSV result tables."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import tomli
import tomli_w

from . import model as mdl
from .experiments.fewshot import DEFAULT_SPECS, METHODS, TrainSetup, UniverseSpec
from .experiments.toy import TOY_DEFAULTS, toy_spec
from .metaopt import AlgorithmSpec, Variant

KINDS = ("toy", "train", "eval", "ablate-head", "sweep-k", "joint-acc", "correlate")


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ToyOptions:
    scenario: str = "a"
    T: int = 5
    meta_iterations: int = 10_000
    algorithms: tuple[str, ...] = METHODS


@dataclass(frozen=True)
class EvalOptions:
    checkpoint: str = ""
    universe: str = "in_distribution"
    split: str = "test"
    episodes: int = 600


@dataclass(frozen=True)
class AblationOptions:
    algorithms: tuple[str, ...] = ("fomaml", "reptile")
    episodes: int = 600
    # enough steps for both heads to reach a near-zero gradient
    steps: int = 40
    lr: float = 0.1


@dataclass(frozen=True)
class SweepOptions:
    k_train: tuple[int, ...] = (1, 5, 10, 25)
    algorithms: tuple[str, ...] = ("fomaml", "reptile")
    runs: int = 5
    test_episodes: int = 200


@dataclass(frozen=True)
class JointOptions:
    checkpoint: str = ""
    universe: str = "in_distribution"
    epochs: int = 30
    lr: float = 0.1
    batch_size: int = 32
    train_fraction: float = 0.6


@dataclass(frozen=True)
class CorrelateOptions:
    algorithms: tuple[str, ...] = METHODS
    capacities: tuple[tuple[int, ...], ...] = ((16,), (32, 32))
    runs: int = 5
    test_episodes: int = 200
    joint_epochs: int = 30


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int = 0
    out: str = "results"
    algorithm: AlgorithmSpec | None = None
    algorithms: dict = field(default_factory=dict)
    universe: UniverseSpec = UniverseSpec()
    setup: TrainSetup = TrainSetup()
    toy: ToyOptions = ToyOptions()
    eval: EvalOptions = EvalOptions()
    ablation: AblationOptions = AblationOptions()
    sweep: SweepOptions = SweepOptions()
    joint: JointOptions = JointOptions()
    correlate: CorrelateOptions = CorrelateOptions()

    def spec_for(self, name: str) -> AlgorithmSpec:
        if name in self.algorithms:
            return self.algorithms[name]
        if self.kind == "toy":
            return toy_spec(name, self.toy.T)
        return DEFAULT_SPECS[name]

    def run_seeds(self, runs: int) -> list[int]:
        return [self.seed + i for i in range(runs)]


_SECTIONS = {
    "universe": UniverseSpec,
    "toy": ToyOptions,
    "eval": EvalOptions,
    "ablation": AblationOptions,
    "sweep": SweepOptions,
    "joint": JointOptions,
    "correlate": CorrelateOptions,
}
# the few-shot setup is spread over three tables in the file
_SETUP_TABLES = {
    "model": ("hidden", "activation"),
    "episodes": ("way", "shot", "query"),
    "training": ("iterations", "eval_every", "val_episodes", "eval_steps", "eval_lr", "finetune_eval_steps"),
}
_TOP = {"kind", "seed", "out", "algorithm", "algorithms", *_SECTIONS, *_SETUP_TABLES}
_SPEC_KEYS = {f.name for f in fields(AlgorithmSpec)}
_REQUIRES_ALGORITHM = {"train"}


def _coerce(value, default, where: str):
    """Convert a TOML value to the type of the dataclass default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected an array, got {value!r}")
        if default and isinstance(default[0], tuple):
            return tuple(_coerce(v, default[0], where) for v in value)
        if default:
            return tuple(_coerce(v, default[0], where) for v in value)
        return tuple(value)
    return value


def _build(cls, table: dict, where: str, base=None):
    base = cls() if base is None else base
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    values = {k: _coerce(v, getattr(base, k), f"{where}.{k}") for k, v in table.items()}
    try:
        return replace(base, **values)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _spec(table, where: str, default: AlgorithmSpec | None = None) -> AlgorithmSpec:
    if not isinstance(table, dict):
        raise ConfigError(f"{where}: expected a table")
    unknown = sorted(set(table) - _SPEC_KEYS)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    if default is None:
        if "variant" not in table:
            raise ConfigError(f"{where}.variant: required")
        try:
            variant = Variant(table["variant"])
        except ValueError:
            raise ConfigError(f"{where}.variant: must be one of {[v.value for v in Variant]}") from None
        default = DEFAULT_SPECS[variant.value]
    elif "variant" in table and table["variant"] != default.variant.value:
        raise ConfigError(f"{where}.variant: must be {default.variant.value!r}")
    values = {}
    for k, v in table.items():
        if k == "variant":
            continue
        values[k] = _coerce(v, getattr(default, k), f"{where}.{k}")
    try:
        return replace(default, **values)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    unknown = sorted(set(doc) - _TOP)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    if "kind" not in doc:
        raise ConfigError("kind: required")
    kind = doc["kind"]
    if kind not in KINDS:
        raise ConfigError(f"kind: must be one of {', '.join(KINDS)}, got {kind!r}")
    cfg = ExperimentConfig(kind)
    values: dict[str, Any] = {}
    for key in ("seed", "out"):
        if key in doc:
            values[key] = _coerce(doc[key], getattr(cfg, key), key)

    if "algorithm" in doc:
        values["algorithm"] = _spec(doc["algorithm"], "algorithm")
    elif kind in _REQUIRES_ALGORITHM:
        raise ConfigError(f"algorithm: required for kind={kind}")

    algos = doc.get("algorithms", {})
    if not isinstance(algos, dict):
        raise ConfigError("algorithms: expected a table of per-method tables")
    specs = {}
    for name, table in algos.items():
        if name not in METHODS:
            raise ConfigError(f"algorithms.{name}: unknown method (expected one of {', '.join(METHODS)})")
        base = toy_spec(name, doc.get("toy", {}).get("T", ToyOptions.T)) if kind == "toy" else DEFAULT_SPECS[name]
        specs[name] = _spec(table, f"algorithms.{name}", base)
    values["algorithms"] = specs

    for name, cls in _SECTIONS.items():
        if name in doc:
            if not isinstance(doc[name], dict):
                raise ConfigError(f"{name}: expected a table")
            values[name] = _build(cls, doc[name], name)

    setup = TrainSetup()
    for table, keys in _SETUP_TABLES.items():
        if table not in doc:
            continue
        sub = doc[table]
        if not isinstance(sub, dict):
            raise ConfigError(f"{table}: expected a table")
        unknown = sorted(set(sub) - set(keys))
        if unknown:
            raise ConfigError(f"{table}: unknown key(s) {', '.join(unknown)}")
        setup = _build(TrainSetup, sub, table, setup)
    values["setup"] = setup

    cfg = replace(cfg, **values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    if cfg.toy.scenario not in ("a", "b"):
        raise ConfigError(f"toy.scenario: must be 'a' or 'b', got {cfg.toy.scenario!r}")
    if cfg.toy.T < 1:
        raise ConfigError("toy.T: must be at least 1")
    for section, names in (
        ("toy.algorithms", cfg.toy.algorithms),
        ("ablation.algorithms", cfg.ablation.algorithms),
        ("sweep.algorithms", cfg.sweep.algorithms),
        ("correlate.algorithms", cfg.correlate.algorithms),
    ):
        bad = [n for n in names if n not in METHODS]
        if bad:
            raise ConfigError(f"{section}: unknown method(s) {', '.join(bad)}")
    if "finetune" in cfg.ablation.algorithms:
        raise ConfigError("ablation.algorithms: finetuning has no learned few-shot head to ablate")
    for section, uni in (("eval.universe", cfg.eval.universe), ("joint.universe", cfg.joint.universe)):
        if uni not in ("in_distribution", "shifted"):
            raise ConfigError(f"{section}: must be 'in_distribution' or 'shifted', got {uni!r}")
    if cfg.kind == "eval" and not cfg.eval.checkpoint:
        raise ConfigError("eval.checkpoint: required for kind=eval")
    if cfg.ablation.episodes < 2 or cfg.sweep.runs < 1 or cfg.correlate.runs < 1:
        raise ConfigError("ablation.episodes must be >= 2 and run counts >= 1")
    if any(k < 1 for k in cfg.sweep.k_train):
        raise ConfigError("sweep.k_train: every value must be at least 1")
    if not 0.0 < cfg.joint.train_fraction < 1.0:
        raise ConfigError("joint.train_fraction: must lie strictly between 0 and 1")
    if cfg.setup.eval_every < 1 or cfg.setup.iterations < 1:
        raise ConfigError("training.iterations and training.eval_every must be at least 1")


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    return config_from_dict(doc)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"cannot serialize non-finite value {value}")
    return value


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc: dict[str, Any] = {"kind": cfg.kind, "seed": cfg.seed, "out": cfg.out}
    if cfg.algorithm is not None:
        doc["algorithm"] = cfg.algorithm.to_dict()
    if cfg.algorithms:
        doc["algorithms"] = {k: v.to_dict() for k, v in sorted(cfg.algorithms.items())}
    for table, keys in _SETUP_TABLES.items():
        doc[table] = {k: _plain(getattr(cfg.setup, k)) for k in keys}
    for name in _SECTIONS:
        section = getattr(cfg, name)
        doc[name] = {f.name: _plain(getattr(section, f.name)) for f in fields(section)}
    return doc


def serialize_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"GBMETA-CHECKPOINT"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Checkpoint:
    config: mdl.ModelConfig
    params: mdl.LayeredParams
    iteration: int = 0
    val_metric: float = float("nan")
    variant: str = ""
    version: int = FORMAT_VERSION

    def same_as(self, other: "Checkpoint") -> bool:
        """Bitwise comparison (NaN metrics compare equal)."""
        return (
            self.config == other.config
            and self.iteration == other.iteration
            and np.float64(self.val_metric).tobytes() == np.float64(other.val_metric).tobytes()
            and self.variant == other.variant
            and self.version == other.version
            and self.params.bitwise_equal(other.params)
        )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Text header (magic line, JSON line) followed by little-endian float64 values."""
    arrays = ckpt.params.arrays()
    header = {
        "version": ckpt.version,
        "model": ckpt.config.to_dict(),
        "activations": mdl.activations(ckpt.params),
        "shapes": [list(a.shape) for a in arrays],
        "n_floats": int(sum(a.size for a in arrays)),
        "iteration": int(ckpt.iteration),
        "val_metric": float(ckpt.val_metric),
        "variant": ckpt.variant,
    }
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    first = data.find(b"\n")
    if first < 0 or data[:first] != MAGIC:
        raise CorruptCheckpointError(f"{path}: missing checkpoint header")
    second = data.find(b"\n", first + 1)
    if second < 0:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[first + 1 : second])
        version = header["version"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from exc
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    try:
        shapes = [tuple(s) for s in header["shapes"]]
        n_floats = int(header["n_floats"])
        acts = header["activations"]
        cfg = mdl.ModelConfig(**{**header["model"], "hidden": tuple(header["model"]["hidden"])})
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: malformed header ({exc})") from exc
    payload = data[second + 1 :]
    if len(payload) != 8 * n_floats or sum(int(np.prod(s)) for s in shapes) != n_floats:
        raise CorruptCheckpointError(
            f"{path}: payload has {len(payload)} bytes, header promises {8 * n_floats}"
        )
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    arrays, offset = [], 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(flat[offset : offset + size].reshape(s))
        offset += size
    try:
        layers = tuple(mdl.Layer(arrays[2 * k], arrays[2 * k + 1], act) for k, act in enumerate(acts))
        params = mdl.LayeredParams(layers)
    except (ValueError, IndexError) as exc:
        raise CorruptCheckpointError(f"{path}: layer shapes inconsistent ({exc})") from exc
    return Checkpoint(cfg, params, header["iteration"], float(header["val_metric"]), header.get("variant", ""), version)


# ---------------------------------------------------------------------------
# result tables

SCHEMAS: dict[str, tuple[tuple[str, ...], int]] = {
    # kind: (columns, number of leading grouping columns used for sorting)
    "toy": (("algorithm", "scenario", "T", "initial", "final", "diverged"), 4),
    "train": (("iteration", "train_loss", "val_metric"), 1),
    "eval": (("variant", "universe", "split", "episodes", "accuracy_mean", "accuracy_hw"), 3),
    "ablate-head": (
        ("algorithm", "head", "step", "grad_norm_mean", "grad_norm_hw", "accuracy_mean", "accuracy_hw"),
        3,
    ),
    "sweep-k": (("algorithm", "k_train", "seed", "accuracy_mean", "accuracy_min", "accuracy_max"), 3),
    "joint-acc": (("checkpoint", "universe", "seed", "joint_accuracy"), 3),
    "correlate": (("method", "capacity", "universe", "r", "p", "n"), 3),
    "correlate-runs": (("method", "capacity", "seed", "universe", "joint_accuracy", "fewshot_accuracy"), 4),
    "plot": (("figure", "series", "x", "y"), 3),
}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def _sort_key(v):
    if isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool):
        f = float(v)
        return (0, 0.0 if math.isnan(f) else f, "")
    return (1, 0.0, str(v))


def write_results(path, kind: str, records: Iterable) -> Path:
    if kind not in SCHEMAS:
        raise ValueError(f"unknown result kind {kind!r}")
    columns, n_keys = SCHEMAS[kind]
    rows = [dataclasses.asdict(r) if dataclasses.is_dataclass(r) else dict(r) for r in records]
    if not rows:
        raise ValueError(f"no {kind} records to write")
    for row in rows:
        if set(row) != set(columns):
            raise ValueError(f"{kind} record has columns {sorted(row)}, schema is {list(columns)}")
    rows.sort(key=lambda r: tuple(_sort_key(r[c]) for c in columns[:n_keys]))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])
    return path
