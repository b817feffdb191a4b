import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gbmeta import tasks as tk


@pytest.fixture(scope="module")
def universe():
    return tk.make_class_splits(20, (0.5, 0.25, 0.25), seed=0)


def test_landscape_values():
    assert tk.landscape_loss("a", 1, 5.0) == 0.0
    assert tk.landscape_loss("b", 1, 5.0) == 0.0
    assert tk.landscape_loss("a", 2, 100.0) == 0.0
    assert tk.landscape_grad("b", 2, 10.0) == -5.0
    assert tk.landscape_grad("a", 1, 6.0) == pytest.approx(2.6)


def test_piecewise_continuous_at_breakpoint():
    # both branches evaluated directly at the breakpoint
    assert (50.0 - 100.0) ** 2 == 2500.0
    assert -5.0 * 50.0 + 2750.0 == 2500.0
    assert tk.landscape_loss("b", 2, 50.0) == 2500.0
    assert tk.landscape_loss("b", 2, np.nextafter(50.0, 100.0)) == pytest.approx(2500.0)


def test_landscape_rejects_unknown_task():
    with pytest.raises(ValueError):
        tk.landscape_loss("c", 1, 0.0)
    with pytest.raises(ValueError):
        tk.LandscapeTask("a", 3)


def test_landscape_vectorised():
    x = np.array([0.0, 10.0, 60.0])
    np.testing.assert_array_equal(tk.landscape_loss("b", 2, x), [2750.0, 2700.0, 1600.0])
    np.testing.assert_array_equal(tk.landscape_grad("b", 2, x), [-5.0, -5.0, -80.0])


def test_landscape_task_routes_through_autodiff():
    t = tk.LandscapeTask("b", 2)
    x = np.array([10.0, 70.0])
    loss, grad = t.loss_and_grad(x)
    assert loss == pytest.approx(2700.0 + 900.0)
    np.testing.assert_array_equal(grad, [-5.0, -60.0])


def test_interleaving_alternates():
    it = tk.interleaved_tasks("a")
    assert [next(it).task_id for _ in range(5)] == [1, 2, 1, 2, 1]


@given(st.floats(-200, 200, allow_nan=False), st.sampled_from(["a", "b"]), st.sampled_from([1, 2]))
def test_landscape_grad_matches_central_difference(x, scenario, task_id):
    h = 1e-4
    if scenario == "b" and task_id == 2 and abs(x - 50.0) < 1e-3:
        return
    fd = (tk.landscape_loss(scenario, task_id, x + h) - tk.landscape_loss(scenario, task_id, x - h)) / (2 * h)
    assert tk.landscape_grad(scenario, task_id, x) == pytest.approx(fd, rel=1e-7, abs=1e-6)


def test_sine_examples(rng):
    assert tk.SineTask(1.0, np.pi / 2).target(0.0) == 1.0
    batch = tk.sine_batch(tk.SineTask(0.0, 1.0), 8, rng)
    assert not batch.y.any()
    assert batch.x.shape == (8, 1) and np.all(np.abs(batch.x) <= 5)
    with pytest.raises(ValueError):
        tk.sine_batch(tk.SineTask(1.0, 0.0), 0, rng)


def test_sine_sampler_deterministic():
    a = tk.sample_sine_episode(np.random.default_rng(5))
    b = tk.sample_sine_episode(np.random.default_rng(5))
    np.testing.assert_array_equal(a.support.x, b.support.x)
    np.testing.assert_array_equal(a.query.y, b.query.y)


def test_split_sizes_and_disjointness(universe):
    assert {k: len(v) for k, v in universe.splits.items()} == {"train": 10, "val": 5, "test": 5}
    for c in range(20):
        assert universe.split_of(c) in tk.SPLITS
    all_ids = sum(universe.splits.values(), ())
    assert sorted(all_ids) == list(range(20))


def test_split_sizes_largest_remainder():
    assert tk._split_sizes(21, (0.5, 0.25, 0.25)) == [11, 5, 5]
    assert sum(tk._split_sizes(17, (0.6, 0.2, 0.2))) == 17


def test_insufficient_classes():
    with pytest.raises(tk.InsufficientClassesError):
        tk.make_class_splits(16, (0.5, 0.25, 0.25), min_classes=5)  # 8/4/4
    with pytest.raises(ValueError):
        tk.make_class_splits(20, (0.5, 0.5, 0.5))


def test_universe_deterministic():
    a = tk.make_class_splits(20, seed=3)
    b = tk.make_class_splits(20, seed=3)
    np.testing.assert_array_equal(a.prototypes, b.prototypes)
    assert a.splits == b.splits


def test_episode_invariants(universe, rng):
    ep = tk.sample_episode(universe, "test", 5, 1, 15, rng)
    assert len(ep.support) == 5 and len(ep.query) == 75
    assert set(ep.support.ids).isdisjoint(ep.query.ids)
    assert np.bincount(ep.support.y).tolist() == [1] * 5
    assert np.bincount(ep.query.y).tolist() == [15] * 5
    assert sorted(ep.remap.values()) == list(range(5))
    assert all(universe.split_of(c) == "test" for c in ep.classes)
    # labels point back at the right class: ids encode the class
    for x_ids, labels in ((ep.support.ids, ep.support.y), (ep.query.ids, ep.query.y)):
        np.testing.assert_array_equal(np.array(ep.classes)[labels], x_ids // universe.pool)


def test_episode_reproducible(universe):
    a = tk.sample_episode(universe, "train", 5, 3, 4, np.random.default_rng(9))
    b = tk.sample_episode(universe, "train", 5, 3, 4, np.random.default_rng(9))
    np.testing.assert_array_equal(a.support.x, b.support.x)
    np.testing.assert_array_equal(a.query.ids, b.query.ids)


def test_episode_errors(universe, rng):
    with pytest.raises(tk.InsufficientClassesError):
        tk.sample_episode(universe, "val", 6, 1, 1, rng)
    with pytest.raises(ValueError):
        tk.sample_episode(universe, "val", 5, 0, 1, rng)
    with pytest.raises(ValueError):
        tk.sample_episode(universe, "val", 5, 60, 50, rng)


@given(st.integers(1, 5), st.integers(1, 10), st.integers(0, 2**20))
def test_episode_sizes_property(k, q, seed):
    uni = tk.make_class_splits(20, seed=1, pool=30)
    ep = tk.sample_episode(uni, "train", 5, k, q, np.random.default_rng(seed))
    assert len(ep.support) == 5 * k and len(ep.query) == 5 * q
    assert len(set(ep.support.ids) | set(ep.query.ids)) == 5 * (k + q)


def test_shifted_universe(universe):
    sh = tk.shifted(universe, seed=1, translation=2.0)
    assert sh.distribution == "shifted"
    assert sh.splits == universe.splits
    # distances between prototypes are preserved (rigid motion)
    d0 = np.linalg.norm(universe.prototypes[0] - universe.prototypes[1])
    d1 = np.linalg.norm(sh.prototypes[0] - sh.prototypes[1])
    assert d1 == pytest.approx(d0)
    rot = tk.random_rotation(16, 1)
    np.testing.assert_allclose(rot @ rot.T, np.eye(16), atol=1e-12)


def test_source_batch_and_pool(universe, rng):
    b = tk.sample_source_batch(universe, "train", 64, rng)
    assert b.x.shape == (64, 16) and b.y.max() < 10
    classes = np.asarray(universe.splits["train"])
    np.testing.assert_array_equal(classes[b.y], b.ids // universe.pool)
    pool = tk.split_pool(universe, "test")
    assert len(pool) == 5 * universe.pool
    assert len(np.unique(pool.ids)) == len(pool)
