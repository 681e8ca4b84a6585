import numpy as np
import pytest

from alfa.clustering import Prediction
from alfa.geometry import BoundingBox
from alfa.scores import ClassScores

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def pred(det, box, scores, idx=0):
    return Prediction(det, BoundingBox(*box), ClassScores(tuple(scores)), idx)


def random_scores(rng, k, sharp=None):
    alpha = np.ones(k + 1) if sharp is None else np.r_[1.0, np.full(k, 0.3)]
    if sharp is not None:
        alpha[sharp] = 6.0
    s = rng.dirichlet(alpha)
    s[0] = min(s[0], 0.9)
    return s / s.sum()


def random_instance(rng, n, n_det, k=3, extent=120.0, n_objects=None):
    """Predictions scattered around a few object centres, so clusters form."""
    n_objects = n_objects or max(1, n // n_det)
    centres = rng.uniform(10, extent, size=(n_objects, 2))
    sizes = rng.uniform(15, 40, size=(n_objects, 2))
    labels = rng.integers(1, k + 1, size=n_objects)
    counters = {d: 0 for d in range(1, n_det + 1)}
    out = []
    for _ in range(n):
        o = rng.integers(n_objects)
        det = int(rng.integers(1, n_det + 1))
        c = centres[o] + rng.normal(0, 4, 2)
        w, h = sizes[o] * rng.uniform(0.8, 1.2, 2)
        x1, y1 = max(c[0] - w / 2, 0.0), max(c[1] - h / 2, 0.0)
        box = (x1, y1, x1 + w, y1 + h)
        out.append(pred(det, box, random_scores(rng, k, int(labels[o])), counters[det]))
        counters[det] += 1
    return out


def partition(clusters):
    return frozenset(frozenset(p.key for p in c) for c in clusters)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
