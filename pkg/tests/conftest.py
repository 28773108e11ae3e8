import pathlib
import time

import numpy as np
import pytest

from ilsda.experiment import run_experiment
from ilsda.io import load_features
from ilsda.optim import OptimizerConfig
from ilsda.pipeline import TrainConfig

FIXTURES = pathlib.Path(__file__).resolve().parents[1] / "fixtures"

_ACCEPTANCE_LINES = []


def record_acceptance(criterion, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
    _ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def load_fixture(kind):
    base = FIXTURES / f"rotated_{kind}"
    return load_features(base / "source.csv", "source"), load_features(base / "target.csv", "target")


class ExperimentCache:
    """Runs each fixture experiment once per session and remembers its wall time."""

    def __init__(self):
        self._runs = {}

    def get(self, kind, optimizer="product", lam=1.0):
        key = (kind, optimizer, lam)
        if key not in self._runs:
            source, target = load_fixture(kind)
            config = TrainConfig(
                p=3, lam=lam, seed=7, optimizer=OptimizerConfig(mode=optimizer, seed=7)
            )
            t0 = time.perf_counter()
            report, model, trace, pred = run_experiment(source, target, config)
            elapsed = time.perf_counter() - t0
            self._runs[key] = dict(
                report=report,
                model=model,
                trace=trace,
                pred=pred,
                seconds=elapsed,
                source=source,
                target=target,
            )
        return self._runs[key]


@pytest.fixture(scope="session")
def experiments():
    return ExperimentCache()
