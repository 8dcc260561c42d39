"""Stochastic policies over a finite action set."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEATURE_MAP_ID = "onehot_action_x_context"


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class SoftmaxLinearPolicy:
    """``pi_w(y|x) = exp(w . phi(x, y)) / Z(x)`` with ``phi(x, y) = onehot(y) (x) x``.

    The parameter vector is stored as a ``(k, d)`` matrix; ``params`` exposes the
    flat length ``k * d`` view used by optimizers.
    """

    weights: np.ndarray
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2:
            raise ValueError("weights must be a (k, d) matrix")

    @classmethod
    def zeros(cls, k: int, d: int) -> "SoftmaxLinearPolicy":
        return cls(np.zeros((k, d)))

    @classmethod
    def from_params(cls, params: np.ndarray, k: int, d: int) -> "SoftmaxLinearPolicy":
        return cls(np.asarray(params, dtype=float).reshape(k, d).copy())

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    @property
    def params(self) -> np.ndarray:
        return self.weights.ravel()

    def scores(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights.T

    def probs(self, X: np.ndarray) -> np.ndarray:
        return softmax(self.scores(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(X), axis=1)

    def pullback(self, X: np.ndarray, probs: np.ndarray, coef: np.ndarray) -> np.ndarray:
        """Gradient of ``sum_i sum_y coef[i, y] * pi(y|x_i)`` w.r.t. the flat parameters."""
        inner = probs * (coef - np.sum(probs * coef, axis=1, keepdims=True))
        return (inner.T @ np.asarray(X, dtype=float)).ravel()

    def to_dict(self) -> dict:
        return {
            "feature_map": FEATURE_MAP_ID,
            "k": self.k,
            "d": self.d,
            "w": self.params.tolist(),
            "manifest": self.manifest,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SoftmaxLinearPolicy":
        if doc.get("feature_map", FEATURE_MAP_ID) != FEATURE_MAP_ID:
            raise ValueError(f"unsupported feature map {doc['feature_map']!r}")
        pol = cls.from_params(np.asarray(doc["w"]), int(doc["k"]), int(doc["d"]))
        pol.manifest = dict(doc.get("manifest", {}))
        return pol


@dataclass
class FlooredPolicy:
    """Mixes a base policy with the uniform distribution so that every action
    keeps probability at least ``eps``."""

    base: SoftmaxLinearPolicy
    eps: float

    def __post_init__(self):
        if not 0 <= self.eps * self.base.k <= 1:
            raise ValueError("eps must lie in [0, 1/k]")

    @property
    def k(self) -> int:
        return self.base.k

    def probs(self, X: np.ndarray) -> np.ndarray:
        k = self.base.k
        return (1.0 - k * self.eps) * self.base.probs(X) + self.eps

    def to_dict(self) -> dict:
        return {"floor": self.eps, "base": self.base.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "FlooredPolicy":
        return cls(SoftmaxLinearPolicy.from_dict(doc["base"]), float(doc["floor"]))


@dataclass
class TabularPolicy:
    """Policy over enumerated context ids, given as a row-stochastic matrix."""

    table: np.ndarray

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=float)

    @property
    def k(self) -> int:
        return self.table.shape[1]

    def probs(self, xid) -> np.ndarray:
        return self.table[np.asarray(xid, dtype=int)]


def load_policy(doc: dict):
    """Rebuild a policy from its JSON form."""
    if "floor" in doc:
        return FlooredPolicy.from_dict(doc)
    if "table" in doc:
        return TabularPolicy(np.asarray(doc["table"]))
    return SoftmaxLinearPolicy.from_dict(doc)
