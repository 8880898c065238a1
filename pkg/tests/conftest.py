import numpy as np
import pytest

from utb import SyntheticSpec, UpliftDataset, synthesize
from utb.trees import SplitCriterion

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synth():
    return synthesize(SyntheticSpec(n=2000, p=6, seed=3))


@pytest.fixture(scope="session")
def continuous_synth():
    return synthesize(SyntheticSpec(n=3000, p=8, outcome_kind="continuous", noise_sd=0.5, seed=4))


def make_dataset(X, y, w, names=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return UpliftDataset(
        features=X,
        outcome=np.asarray(y, dtype=float),
        treatment=np.asarray(w),
        feature_names=names or [f"f{j}" for j in range(X.shape[1])],
    )


class BinaryCausalCriterion(SplitCriterion):
    """Scalar two-arm criterion written directly from the closed forms."""

    n_stats = 6
    n_arms = 2

    def arm_counts(self, s):
        return [s[0], s[3]]

    @staticmethod
    def _loss(s):
        g0, h0, g1, h1 = s[1], s[2], s[4], s[5]
        v = -g0 / (h0 + 0.0)
        return (g0 + g1) * v + 0.5 * (h0 + h1 + 0.0) * v * v - (g1 + v * h1) * (g1 + v * h1) / (2.0 * (h1 + 0.0))

    def gain(self, left, right, parent):
        return self._loss(parent) - (self._loss(left) + self._loss(right))

    def leaf_value(self, s):
        v = -s[1] / (s[2] + 0.0)
        return np.array([v, -(s[4] + v * s[5]) / (s[5] + 0.0)])
