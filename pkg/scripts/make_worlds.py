"""Write the fixture worlds used by the tests and the example configs.

    python scripts/make_worlds.py [outdir]
"""
import sys
from pathlib import Path

import numpy as np

from iceval.world import EnumerableWorld, max_importance_weight, save_world


def world_w1():
    return EnumerableWorld(
        p=[0.5, 0.5],
        pi0=[[0.5, 0.5], [0.5, 0.5]],
        pi=[[0.9, 0.1], [0.9, 0.1]],
        delta=[[0.8, 0.2], [0.3, 0.6]],
        sigma2=[[0.1, 0.2], [0.15, 0.05]],
        delta_hat=[[0.7, 0.35], [0.4, 0.5]],
        context_ids=("x0", "x1"),
        actions=("a0", "a1"),
        name="W1",
    )


def world_w1_perturbed():
    return world_w1().replace(pi0_hat=[[0.6, 0.4], [0.45, 0.55]], name="W1-perturbed")


def _normalize(m):
    return m / m.sum(axis=1, keepdims=True)


def world_w2(seed=20):
    g = np.random.default_rng(seed)
    nx, k = 10, 5
    pi0 = _normalize(g.dirichlet(np.full(k, 2.0), size=nx) + 0.05)
    pi0_hat = _normalize(pi0 * g.uniform(0.8, 1.25, size=(nx, k)))
    pi = _normalize(g.dirichlet(np.full(k, 0.7), size=nx) + 0.01)
    delta = g.uniform(0.0, 1.0, size=(nx, k))
    return EnumerableWorld(
        p=_normalize(g.uniform(0.5, 1.5, size=(1, nx)))[0],
        pi0=pi0,
        pi0_hat=pi0_hat,
        pi=pi,
        delta=delta,
        sigma2=g.uniform(0.05, 0.3, size=(nx, k)),
        delta_hat=delta + g.normal(0.0, 0.15, size=(nx, k)),
        name="W2",
    )


def world_w3(seed=0, n_ctx=4, k=6, p_rare=0.01, p_target=0.5):
    """One rarely logged action per context that the target favours (c = 50),
    and a reward model that overshoots everywhere by 0.25 to 0.3."""
    g = np.random.default_rng(seed)
    pi0 = np.full((n_ctx, k), (1 - p_rare) / (k - 1))
    pi = np.full((n_ctx, k), (1 - p_target) / (k - 1))
    for x in range(n_ctx):
        pi0[x, x % k] = p_rare
        pi[x, x % k] = p_target
    delta = g.uniform(0.4, 1.0, size=(n_ctx, k))
    offset = np.where(g.random((n_ctx, k)) < 0.5, 0.25, 0.3)
    return EnumerableWorld(
        p=np.full(n_ctx, 1.0 / n_ctx),
        pi0=pi0,
        pi=pi,
        delta=delta,
        sigma2=np.full((n_ctx, k), 0.25),
        delta_hat=delta + offset,
        name="W3",
    )


def main(outdir="configs/worlds"):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for fn, name in ((world_w1, "w1"), (world_w1_perturbed, "w1_perturbed"),
                     (world_w2, "w2"), (world_w3, "w3")):
        w = fn()
        save_world(w, out / f"{name}.json")
        print(f"{name}: {w.n_contexts} contexts, {w.k} actions, "
              f"max c_hat {max_importance_weight(w):.3f}")


if __name__ == "__main__":
    main(*sys.argv[1:])
