import time
from contextlib import contextmanager

import numpy as np
import pytest
from hypothesis import settings

from gbmeta import model as mdl
from gbmeta.experiments import fewshot as fs

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

# criterion number -> (title, passed, measured values)
_CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_params():
    return mdl.init_params(mdl.ModelConfig(4, (6,), 3, "tanh", 7))


@pytest.fixture
def criterion():
    """``with criterion(n, title) as info:`` records a pass/fail line for the summary.

    Tests put measured values into ``info`` so they show up next to the verdict.
    """

    @contextmanager
    def check(number: int, title: str):
        info: dict = {}
        try:
            yield info
        except BaseException:
            _CRITERIA[number] = (title, False, _fmt(info))
            raise
        _CRITERIA[number] = (title, True, _fmt(info))

    return check


def _fmt(info: dict) -> str:
    parts = []
    for k, v in info.items():
        parts.append(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}")
    return ", ".join(parts)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))


N_SEEDS = 5


@pytest.fixture(scope="session")
def fewshot_study():
    """Every method trained with the shipped defaults on 5 seeds, measured on both universes."""
    start = time.perf_counter()
    study = fs.run_correlation_study(
        fs.DEFAULT_SPECS,
        [fs.TrainSetup().hidden],
        fs.UniverseSpec(),
        fs.TrainSetup(),
        seeds=tuple(range(N_SEEDS)),
        test_episodes=200,
    )
    return study, time.perf_counter() - start
