"""Logged bandit feedback: synthetic problems and the supervised-to-bandit conversion.

Rewards for classification are ``shift - 1{y != y*}``.  With the default
``shift = 0`` a correct action earns 0 and a wrong one -1, so the mean logged
reward is minus the logging policy's error; ``shift = 1`` gives the 0/1
reward whose negation is the translated loss ``1{y != y*} - 1`` used for
learning.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng as rngmod
from .estimators import LoggedData
from .learn import fit_multinomial_logistic
from .policy import FlooredPolicy, SoftmaxLinearPolicy
from .world import EnumerableWorld

SPLITS = ("train", "validation", "test")
DEFAULT_SPLIT_FRACTIONS = (0.48, 0.32, 0.20)


@dataclass
class LabeledSplit:
    X: np.ndarray
    y: np.ndarray
    name: str = ""

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "LabeledSplit":
        return LabeledSplit(self.X[idx], self.y[idx], self.name)


@dataclass
class SupervisedDataset:
    """Feature matrix, integer labels in ``0..k-1`` and a split tag per row."""

    X: np.ndarray
    y: np.ndarray
    split: np.ndarray
    k: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        self.split = np.asarray(self.split, dtype=object)
        if self.X.ndim != 2 or len(self.X) != len(self.y) or len(self.y) != len(self.split):
            raise ValueError("X, y and split must describe the same rows")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.k):
            raise ValueError("labels out of range")
        unknown = set(self.split) - set(SPLITS)
        if unknown:
            raise ValueError(f"unknown split tags {sorted(unknown)}")

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def part(self, name: str) -> LabeledSplit:
        mask = self.split == name
        return LabeledSplit(self.X[mask], self.y[mask], name)


def assign_splits(n: int, fractions: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    fractions = np.asarray(fractions, dtype=float)
    counts = np.floor(fractions / fractions.sum() * n).astype(int)
    counts[0] += n - counts.sum()
    tags = np.repeat(np.array(SPLITS[: len(counts)], dtype=object), counts)
    return tags[rng.permutation(n)]


def make_synthetic_multiclass(n: int, d: int, k: int, cluster_separation: float, seed: int,
                              split_fractions=DEFAULT_SPLIT_FRACTIONS) -> SupervisedDataset:
    """Gaussian clusters with unit noise around class means of norm ``cluster_separation``.

    Class means are random directions, so larger separation lowers the Bayes
    error of linear rules through the origin.
    """
    if k < 2 or n < k or d < 1:
        raise ValueError("need n >= k >= 2 and d >= 1")
    if cluster_separation < 0:
        raise ValueError("cluster_separation must be non-negative")
    g = rngmod.stream(seed, 0)
    dirs = g.normal(size=(k, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = cluster_separation * dirs
    y = np.concatenate([np.arange(k), g.integers(0, k, size=n - k)])
    y = y[g.permutation(n)]
    X = means[y] + g.normal(size=(n, d))
    split = assign_splits(n, split_fractions, g)
    meta = {"generator": "gaussian_clusters", "n": n, "d": d, "k": k,
            "cluster_separation": cluster_separation, "seed": seed,
            "prng": rngmod.PRNG_ID}
    return SupervisedDataset(X, y, split, k, meta)


def load_csv(path, k: Optional[int] = None) -> SupervisedDataset:
    """Read a header CSV of feature columns, a ``label`` column and an optional ``split`` column."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no rows")
    cols = [c for c in rows[0] if c not in ("label", "split")]
    X = np.array([[float(r[c]) for c in cols] for r in rows])
    y = np.array([int(r["label"]) for r in rows])
    if "split" in rows[0]:
        split = np.array([r["split"] for r in rows], dtype=object)
    else:
        split = assign_splits(len(y), DEFAULT_SPLIT_FRACTIONS, rngmod.stream(0, 0))
    return SupervisedDataset(X, y, split, k or int(y.max()) + 1, {"source": str(path)})


def save_csv(ds: SupervisedDataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{j}" for j in range(ds.d)] + ["label", "split"])
        for x, y, s in zip(ds.X, ds.y, ds.split):
            w.writerow([repr(float(v)) for v in x] + [int(y), s])


def reward_table(y, k: int, shift: float = 0.0) -> np.ndarray:
    """Full-information rewards ``shift - 1{a != y}`` for every row and action."""
    y = np.asarray(y, dtype=int)
    tab = np.full((len(y), k), shift - 1.0)
    tab[np.arange(len(y)), y] = shift
    return tab


def sample_actions(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of one action per row of ``probs`` from uniforms ``u``."""
    cum = np.cumsum(probs, axis=-1)
    cum = cum / cum[..., -1:]
    a = np.sum(u[..., None] >= cum, axis=-1)
    return np.minimum(a, probs.shape[-1] - 1)


def supervised_to_bandit(split: LabeledSplit, logging_policy, seed: int, *,
                         reward_shift: float = 0.0, policy_id: str = "logger",
                         key: Sequence[int] = (1,)) -> LoggedData:
    """Sample one logged action per example from the logging policy.

    Each record stores the reward ``reward_shift - 1{y != y*}``, the logged
    propensity and the full logging row.
    """
    probs = np.asarray(logging_policy.probs(split.X), dtype=float)
    g = rngmod.stream(seed, *key)
    actions = sample_actions(probs, g.random(len(split)))
    idx = np.arange(len(split))
    rewards = reward_shift - (actions != split.y).astype(float)
    prov = {"seed": seed, "stream_key": list(key), "prng": rngmod.PRNG_ID,
            "logging_policy": policy_id, "source_split": split.name,
            "reward_shift": reward_shift}
    return LoggedData(split.X, actions, rewards, probs[idx, actions], probs, prov)


@dataclass
class ArgmaxRewardModel:
    """Reward model from a classifier: ``shift - 1{predicted label != action}``."""

    classifier: SoftmaxLinearPolicy
    k: int
    shift: float = 0.0

    def __call__(self, X) -> np.ndarray:
        return reward_table(self.classifier.predict(X), self.k, self.shift)

    def to_dict(self) -> dict:
        return {"type": "argmax", "k": self.k, "shift": self.shift,
                "classifier": self.classifier.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "ArgmaxRewardModel":
        return cls(SoftmaxLinearPolicy.from_dict(doc["classifier"]), int(doc["k"]),
                   float(doc.get("shift", 0.0)))


@dataclass
class TabularRewardModel:
    table: np.ndarray

    def __call__(self, xid) -> np.ndarray:
        return np.asarray(self.table)[np.asarray(xid, dtype=int)]


@dataclass
class TrainedModels:
    logging_policy: FlooredPolicy
    reward_model: ArgmaxRewardModel
    target_policy: SoftmaxLinearPolicy
    manifest: dict


def train_logger_and_models(dataset: SupervisedDataset, logger_fraction: float,
                            model_fraction: float, seed: int, *, l2: float = 1e-3,
                            floor: Optional[float] = None, reward_shift: float = 0.0,
                            ) -> TrainedModels:
    """Logger and reward model from small random slices of the training split;
    target policy from the whole training split.

    The logger is the softmax model mixed with the uniform distribution so that
    every action keeps probability at least ``floor`` (default ``1e-3 / k``);
    pass ``floor=0`` to allow support violations.
    """
    train = dataset.part("train")
    k = dataset.k
    for nm, frac in (("logger_fraction", logger_fraction), ("model_fraction", model_fraction)):
        if not 0 < frac <= 1:
            raise ValueError(f"{nm} must lie in (0, 1]")
    n_log = int(round(logger_fraction * len(train)))
    n_mod = int(round(model_fraction * len(train)))
    if min(n_log, n_mod) < k:
        raise ValueError("a training fraction holds fewer than k examples")
    g = rngmod.stream(seed, 2)
    log_idx = g.permutation(len(train))[:n_log]
    mod_idx = g.permutation(len(train))[:n_mod]

    logger = fit_multinomial_logistic(train.X[log_idx], train.y[log_idx], k, l2=l2)
    classifier = fit_multinomial_logistic(train.X[mod_idx], train.y[mod_idx], k, l2=l2)
    target = fit_multinomial_logistic(train.X, train.y, k, l2=l2)
    eps = 1e-3 / k if floor is None else floor
    manifest = {"seed": seed, "logger_fraction": logger_fraction,
                "model_fraction": model_fraction, "logger_floor": eps, "l2": l2,
                "reward_shift": reward_shift, "n_logger": n_log, "n_model": n_mod,
                "n_target": len(train), "prng": rngmod.PRNG_ID}
    return TrainedModels(FlooredPolicy(logger, eps), ArgmaxRewardModel(classifier, k, reward_shift),
                         target, manifest)


def dataset_world(split: LabeledSplit, models: TrainedModels, k: int) -> EnumerableWorld:
    """Treat the rows of a labelled split as equiprobable contexts with
    deterministic full-information rewards."""
    pi0 = models.logging_policy.probs(split.X)
    return EnumerableWorld(
        p=np.full(len(split), 1.0 / len(split)),
        pi0=pi0,
        pi=models.target_policy.probs(split.X),
        delta=reward_table(split.y, k, models.reward_model.shift),
        sigma2=np.zeros_like(pi0),
        delta_hat=models.reward_model(split.X),
        name=f"dataset:{split.name}",
    )


# --------------------------------------------------------------------------
# enumerable-world sampling


def sample_world_arrays(world: EnumerableWorld, n: int, count: int, g: np.random.Generator):
    """``count`` logs of ``n`` records: context ids, logged actions, rewards.

    Rewards are Gaussian around ``delta`` with variance ``sigma2``.
    """
    xid = g.choice(world.n_contexts, size=(count, n), p=world.p)
    actions = sample_actions(world.pi0[xid], g.random((count, n)))
    mean = world.delta[xid, actions]
    sd = np.sqrt(world.sigma2[xid, actions])
    noise = g.standard_normal((count, n))
    rewards = mean + sd * noise
    return xid, actions, rewards


def sample_world_log(world: EnumerableWorld, n: int, seed: int, key=(3,)) -> LoggedData:
    g = rngmod.stream(seed, *key)
    xid, actions, rewards = sample_world_arrays(world, n, 1, g)
    xid, actions, rewards = xid[0], actions[0], rewards[0]
    rows = world.pi0_hat[xid]
    prov = {"seed": seed, "stream_key": list(key), "prng": rngmod.PRNG_ID, "world": world.name}
    return LoggedData(xid, actions, rewards, rows[np.arange(n), actions], rows, prov)


def write_manifest(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
