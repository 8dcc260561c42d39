from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings, strategies as st

from iceval.estimators import LoggedData
from iceval.world import EnumerableWorld, load_world

ROOT = Path(__file__).resolve().parents[1]
WORLDS = ROOT / "configs" / "worlds"
EXPERIMENTS = ROOT / "configs" / "experiments"

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def w1():
    return load_world(WORLDS / "w1.json")


@pytest.fixture(scope="session")
def w1_perturbed():
    return load_world(WORLDS / "w1_perturbed.json")


@pytest.fixture(scope="session")
def w2():
    return load_world(WORLDS / "w2.json")


@pytest.fixture(scope="session")
def w3():
    return load_world(WORLDS / "w3.json")


def _stochastic(g, shape, floor=0.02):
    m = g.dirichlet(np.ones(shape[-1]), size=shape[:-1]) + floor
    return m / m.sum(axis=-1, keepdims=True)


def random_world(seed, n_ctx=3, k=3, perturb=True, sigma=True):
    g = np.random.default_rng(seed)
    pi0 = _stochastic(g, (n_ctx, k))
    pi0_hat = _stochastic(g, (n_ctx, k)) if perturb else None
    return EnumerableWorld(
        p=_stochastic(g, (1, n_ctx))[0],
        pi0=pi0,
        pi0_hat=pi0_hat,
        pi=_stochastic(g, (n_ctx, k), floor=0.0),
        delta=g.uniform(-1, 1, size=(n_ctx, k)),
        sigma2=g.uniform(0, 0.5, size=(n_ctx, k)) if sigma else np.zeros((n_ctx, k)),
        delta_hat=g.uniform(-1, 1, size=(n_ctx, k)),
    )


@st.composite
def worlds(draw, perturb=st.booleans()):
    seed = draw(st.integers(0, 2**31 - 1))
    n_ctx = draw(st.integers(1, 4))
    k = draw(st.integers(2, 4))
    return random_world(seed, n_ctx, k, perturb=draw(perturb))


def random_log(seed, n=30, k=4, d=3):
    """Feature-context log with full logging rows and a random reward table."""
    g = np.random.default_rng(seed)
    X = g.normal(size=(n, d))
    rows = _stochastic(g, (n, k), floor=0.05)
    actions = np.array([g.choice(k, p=r) for r in rows])
    rewards = g.uniform(-1, 1, size=n)
    log = LoggedData(X, actions, rewards, rows[np.arange(n), actions], rows)
    dhat = g.uniform(-1, 1, size=(n, k))
    return log, dhat


@st.composite
def logs(draw):
    seed = draw(st.integers(0, 2**31 - 1))
    n = draw(st.integers(1, 25))
    k = draw(st.integers(2, 5))
    return random_log(seed, n=n, k=k)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[number])
