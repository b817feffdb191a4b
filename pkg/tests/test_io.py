import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gbmeta import io
from gbmeta import model as mdl


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_defaults_only_toy_config(tmp_path):
    cfg = io.parse_config(_write(tmp_path, 'kind = "toy"\n'))
    assert cfg.toy.T == 5 and cfg.toy.scenario == "a"
    assert cfg.seed == 0


def test_train_requires_algorithm(tmp_path):
    with pytest.raises(io.ConfigError, match="algorithm"):
        io.parse_config(_write(tmp_path, 'kind = "train"\n'))


def test_parse_error_has_line_number(tmp_path):
    with pytest.raises(io.ConfigError, match="line 3"):
        io.parse_config(_write(tmp_path, 'kind = "toy"\n[toy]\nT = = 4\n'))


@pytest.mark.parametrize(
    "text,field",
    [
        ('kind = "toy"\nbogus = 1\n', "bogus"),
        ('kind = "toy"\n[toy]\nsteps = 3\n', "toy"),
        ('kind = "toy"\n[toy]\nT = "five"\n', "toy.T"),
        ('kind = "toy"\n[toy]\nscenario = "c"\n', "toy.scenario"),
        ('kind = "fit"\n', "kind"),
        ('kind = "train"\n[algorithm]\ninner_lr = 0.1\n', "algorithm.variant"),
        ('kind = "train"\n[algorithm]\nvariant = "maml"\n', "algorithm.variant"),
        ('kind = "train"\n[algorithm]\nvariant = "reptile"\nouter = 1\n', "algorithm"),
        ('kind = "sweep-k"\n[algorithms.sgd]\ninner_lr = 0.1\n', "algorithms.sgd"),
        ('kind = "eval"\n', "eval.checkpoint"),
        ('kind = "toy"\n[model]\nwidth = 3\n', "model"),
        ('kind = "ablate-head"\n[ablation]\nalgorithms = ["finetune"]\n', "ablation.algorithms"),
    ],
)
def test_validation_errors_name_the_field(tmp_path, text, field):
    with pytest.raises(io.ConfigError) as err:
        io.parse_config(_write(tmp_path, text))
    assert field in str(err.value)


def test_missing_file(tmp_path):
    with pytest.raises(io.ConfigError):
        io.parse_config(tmp_path / "nope.toml")


FULL = """
kind = "correlate"
seed = 3
out = "runs/c"

[algorithms.fomaml]
inner_lr = 0.05
outer_lr = 0.2

[model]
hidden = [16]

[episodes]
shot = 2

[universe]
pool = 120
fractions = [0.5, 0.25, 0.25]

[correlate]
capacities = [[8], [16, 16]]
runs = 3
"""


def test_full_config_and_round_trip(tmp_path):
    cfg = io.parse_config(_write(tmp_path, FULL))
    assert cfg.algorithms["fomaml"].inner_lr == 0.05
    assert cfg.algorithms["fomaml"].inner_steps == 5  # untouched fields keep their defaults
    assert cfg.setup.hidden == (16,) and cfg.setup.shot == 2
    assert cfg.correlate.capacities == ((8,), (16, 16))
    assert cfg.run_seeds(cfg.correlate.runs) == [3, 4, 5]
    again = io.parse_config(_write(tmp_path, io.serialize_config(cfg), "again.toml"))
    assert again == cfg


@pytest.mark.parametrize("kind", [k for k in io.KINDS if k not in ("train", "eval")])
def test_defaults_round_trip(kind):
    cfg = io.config_from_dict({"kind": kind})
    assert io.parse_config_text(io.serialize_config(cfg)) == cfg


@given(
    st.integers(0, 10**6),
    st.sampled_from(["finetune", "reptile", "fomaml"]),
    st.floats(1e-4, 1.0),
    st.integers(1, 10),
)
def test_train_config_round_trip_property(seed, variant, lr, steps):
    cfg = io.config_from_dict(
        {"kind": "train", "seed": seed, "algorithm": {"variant": variant, "inner_lr": lr, "inner_steps": steps}}
    )
    assert io.parse_config_text(io.serialize_config(cfg)) == cfg


def _ckpt():
    cfg = mdl.ModelConfig(2, (8,), 5, "relu", 3)
    params = mdl.init_params(cfg)
    rng = np.random.default_rng(0)
    params = params.from_arrays([a + rng.standard_normal(a.shape) * 1e-3 for a in params.arrays()])
    return io.Checkpoint(cfg, params, iteration=1500, val_metric=0.4866666666666667, variant="reptile")


def test_checkpoint_round_trip(tmp_path):
    ck = _ckpt()
    assert ck.params.n_params == 69
    io.save_checkpoint(tmp_path / "c.bin", ck)
    back = io.load_checkpoint(tmp_path / "c.bin")
    assert back.same_as(ck)
    assert back.val_metric == ck.val_metric


def test_checkpoint_nan_metric_round_trip(tmp_path):
    ck = io.Checkpoint(_ckpt().config, _ckpt().params)
    io.save_checkpoint(tmp_path / "c.bin", ck)
    assert io.load_checkpoint(tmp_path / "c.bin").same_as(ck)


def test_checkpoint_payload_is_little_endian(tmp_path):
    ck = _ckpt()
    io.save_checkpoint(tmp_path / "c.bin", ck)
    data = (tmp_path / "c.bin").read_bytes()
    tail = np.frombuffer(data[-8 * 69 :], dtype="<f8")
    np.testing.assert_array_equal(tail, ck.params.flat())


def test_truncated_checkpoint(tmp_path):
    io.save_checkpoint(tmp_path / "c.bin", _ckpt())
    data = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-5])
    with pytest.raises(io.CorruptCheckpointError):
        io.load_checkpoint(tmp_path / "t.bin")
    (tmp_path / "h.bin").write_bytes(data[:30])
    with pytest.raises(io.CorruptCheckpointError):
        io.load_checkpoint(tmp_path / "h.bin")
    (tmp_path / "g.bin").write_bytes(b"not a checkpoint")
    with pytest.raises(io.CorruptCheckpointError):
        io.load_checkpoint(tmp_path / "g.bin")


def test_checkpoint_version_mismatch(tmp_path):
    io.save_checkpoint(tmp_path / "c.bin", _ckpt())
    data = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "v.bin").write_bytes(data.replace(b'"version": 1', b'"version": 2', 1))
    with pytest.raises(io.CheckpointVersionError):
        io.load_checkpoint(tmp_path / "v.bin")


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_sweep_schema_and_sorting(tmp_path):
    rows = [
        dict(algorithm="reptile", k_train=25, seed=0, accuracy_mean=0.5, accuracy_min=0.4, accuracy_max=0.6),
        dict(algorithm="fomaml", k_train=5, seed=0, accuracy_mean=1 / 3, accuracy_min=0.1, accuracy_max=0.9),
        dict(algorithm="fomaml", k_train=1, seed=0, accuracy_mean=0.25, accuracy_min=0.2, accuracy_max=0.3),
    ]
    out = _read(io.write_results(tmp_path / "s.csv", "sweep-k", rows))
    assert out[0] == ["algorithm", "k_train", "seed", "accuracy_mean", "accuracy_min", "accuracy_max"]
    assert [r[:2] for r in out[1:]] == [["fomaml", "1"], ["fomaml", "5"], ["reptile", "25"]]
    assert out[2][3] == "0.333333333"


def test_correlate_schema(tmp_path):
    rows = [dict(method="finetune", capacity="32x32", universe="shifted", r=0.8, p=0.104, n=5)]
    out = _read(io.write_results(tmp_path / "c.csv", "correlate", rows))
    assert out[0] == ["method", "capacity", "universe", "r", "p", "n"]
    assert out[1] == ["finetune", "32x32", "shifted", "0.8", "0.104", "5"]


def test_write_results_errors(tmp_path):
    with pytest.raises(ValueError, match="no"):
        io.write_results(tmp_path / "e.csv", "correlate", [])
    with pytest.raises(ValueError):
        io.write_results(tmp_path / "e.csv", "correlate", [dict(method="x")])
    with pytest.raises(ValueError):
        io.write_results(tmp_path / "e.csv", "histogram", [dict(a=1)])


def test_write_results_deterministic(tmp_path):
    rows = [dict(figure="f", series=s, x=x, y=x * 0.1) for s in "ba" for x in (3, 1, 2)]
    a = io.write_results(tmp_path / "a.csv", "plot", rows).read_bytes()
    b = io.write_results(tmp_path / "b.csv", "plot", list(reversed(rows))).read_bytes()
    assert a == b
