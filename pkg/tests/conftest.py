import numpy as np
import pytest
from hypothesis import settings

from mpvaluation import GaussianModel

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")

# lines appended by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_psd(rng: np.random.Generator, n: int, rank: int | None = None) -> np.ndarray:
    rank = n if rank is None else rank
    a = rng.normal(size=(n, rank))
    return a @ a.T


def random_model(rng: np.random.Generator, horizon: int, aux_dim: int, singular: bool = False) -> GaussianModel:
    n = horizon * (1 + aux_dim)
    rank = max(1, n // 2) if singular else n
    return GaussianModel(horizon, aux_dim, rng.normal(size=n), random_psd(rng, n, rank))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def iid2():
    return GaussianModel(2, 0, np.zeros(2), np.eye(2))


@pytest.fixture
def iid2_revealed():
    # Y_1 = X_2, Y_2 independent noise; coordinates (x1, y1, x2, y2)
    cov = np.array([[1, 0, 0, 0], [0, 1, 1, 0], [0, 1, 1, 0], [0, 0, 0, 1.0]])
    return GaussianModel(2, 1, np.zeros(4), cov)


def random_tree(rng: np.random.Generator, horizon: int, aux_dim: int = 0, max_children: int = 4, uniform: bool = False):
    """Irregular tree: random child counts, Dirichlet weights, normal increments."""
    from mpvaluation import ScenarioTree

    counts, xs, ys, ws = [], [], [], []
    level_size = 1
    for _ in range(horizon):
        c = rng.integers(1, max_children + 1, size=level_size)
        m = int(c.sum())
        counts.append(c)
        xs.append(rng.normal(size=m) * rng.uniform(0.5, 3.0))
        ys.append(rng.normal(size=(m, aux_dim)))
        ws.append(None if uniform else np.concatenate([rng.dirichlet(np.ones(k)) for k in c]))
        level_size = m
    return ScenarioTree.from_levels(counts, xs, ys if aux_dim else None, None if uniform else ws)
