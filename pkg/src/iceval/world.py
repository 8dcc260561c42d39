"""Finite environments with exact ground truth.

A world enumerates every context and action, so the expected reward of a
policy and the bias and variance of any interpolated estimator are computed by
direct summation.  Variances over contexts and over logged actions are second
moment minus squared mean over the enumerated distribution.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidWorld, SupportViolation
from .estimators import WeightScheme, weights

_ROW_TOL = 1e-12


def _check_stochastic(name, mat, shape):
    mat = np.asarray(mat, dtype=float)
    if mat.shape != shape:
        raise InvalidWorld(f"{name} has shape {mat.shape}, expected {shape}")
    if np.any(mat < 0) or not np.all(np.isfinite(mat)):
        raise InvalidWorld(f"{name} has negative or non-finite entries")
    bad = np.abs(mat.sum(axis=-1) - 1.0) > _ROW_TOL
    if np.any(bad):
        raise InvalidWorld(f"{name} row {int(np.argmax(bad))} does not sum to 1")
    return mat


@dataclass(frozen=True)
class EnumerableWorld:
    """Context distribution, logging/target policies, reward means and variances.

    ``pi0_hat`` defaults to ``pi0`` (logged propensities).  Derived tables:
    ``zeta = 1 - pi0/pi0_hat``, ``Delta = delta_hat - delta``,
    ``c = pi/pi0`` and ``c_hat = pi/pi0_hat``; each is 0 where its
    denominator vanishes.
    """

    p: np.ndarray
    pi0: np.ndarray
    pi: np.ndarray
    delta: np.ndarray
    sigma2: np.ndarray
    delta_hat: np.ndarray
    pi0_hat: Optional[np.ndarray] = None
    context_ids: tuple = ()
    actions: tuple = ()
    name: str = ""
    zeta: np.ndarray = field(init=False, repr=False)
    Delta: np.ndarray = field(init=False, repr=False)
    c: np.ndarray = field(init=False, repr=False)
    c_hat: np.ndarray = field(init=False, repr=False)
    full_support: bool = field(init=False)

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or len(p) == 0:
            raise InvalidWorld("p must be a non-empty vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > _ROW_TOL:
            raise InvalidWorld("context probabilities must be non-negative and sum to 1")
        nx = len(p)
        pi0 = np.asarray(self.pi0, dtype=float)
        if pi0.ndim != 2 or pi0.shape[0] != nx:
            raise InvalidWorld("pi0 must be a (contexts, actions) matrix")
        k = pi0.shape[1]
        if k < 2:
            raise InvalidWorld("need at least two actions")
        shape = (nx, k)
        pi0 = _check_stochastic("pi0", pi0, shape)
        pi0_hat = pi0 if self.pi0_hat is None else _check_stochastic("pi0_hat", self.pi0_hat, shape)
        pi = _check_stochastic("pi", self.pi, shape)
        delta = np.asarray(self.delta, dtype=float)
        delta_hat = np.asarray(self.delta_hat, dtype=float)
        sigma2 = np.asarray(self.sigma2, dtype=float)
        for nm, m in (("delta", delta), ("delta_hat", delta_hat), ("sigma2", sigma2)):
            if m.shape != shape or not np.all(np.isfinite(m)):
                raise InvalidWorld(f"{nm} must be a finite {shape} matrix")
        if np.any(sigma2 < 0):
            raise InvalidWorld("sigma2 must be non-negative")
        if np.any((pi0 > 0) & (pi0_hat <= 0)):
            raise InvalidWorld("pi0_hat vanishes where pi0 is positive; zeta is undefined")

        with np.errstate(divide="ignore", invalid="ignore"):
            zeta = np.where(pi0_hat > 0, 1.0 - pi0 / np.where(pi0_hat > 0, pi0_hat, 1.0), 0.0)
            c = np.where(pi0 > 0, pi / np.where(pi0 > 0, pi0, 1.0), 0.0)
            c_hat = np.where(pi0_hat > 0, pi / np.where(pi0_hat > 0, pi0_hat, 1.0), 0.0)
        support = not np.any((pi > 0) & (pi0 <= 0))

        ids = tuple(self.context_ids) if self.context_ids else tuple(range(nx))
        acts = tuple(self.actions) if self.actions else tuple(range(k))
        if len(ids) != nx or len(acts) != k:
            raise InvalidWorld("context_ids/actions do not match the table shapes")
        for nm, val in (
            ("p", p), ("pi0", pi0), ("pi0_hat", pi0_hat), ("pi", pi), ("delta", delta),
            ("delta_hat", delta_hat), ("sigma2", sigma2), ("zeta", zeta),
            ("Delta", delta_hat - delta), ("c", c), ("c_hat", c_hat),
            ("context_ids", ids), ("actions", acts), ("full_support", support),
        ):
            if isinstance(val, np.ndarray):
                val.setflags(write=False)
            object.__setattr__(self, nm, val)

    @property
    def n_contexts(self) -> int:
        return len(self.p)

    @property
    def k(self) -> int:
        return self.pi0.shape[1]

    def replace(self, **changes) -> "EnumerableWorld":
        doc = dict(
            p=self.p, pi0=self.pi0, pi=self.pi, delta=self.delta, sigma2=self.sigma2,
            delta_hat=self.delta_hat, pi0_hat=self.pi0_hat, context_ids=self.context_ids,
            actions=self.actions, name=self.name,
        )
        doc.update(changes)
        return EnumerableWorld(**doc)

    def to_dict(self) -> dict:
        doc = {
            "contexts": [{"id": i, "p": float(q)} for i, q in zip(self.context_ids, self.p)],
            "actions": list(self.actions),
            "pi0": self.pi0.tolist(),
            "pi": self.pi.tolist(),
            "delta": self.delta.tolist(),
            "sigma2": self.sigma2.tolist(),
            "delta_hat": self.delta_hat.tolist(),
        }
        if not np.array_equal(self.pi0_hat, self.pi0):
            doc["pi0_hat"] = self.pi0_hat.tolist()
        if self.name:
            doc["name"] = self.name
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "EnumerableWorld":
        try:
            ctx = doc["contexts"]
            return cls(
                p=[c["p"] for c in ctx],
                pi0=doc["pi0"],
                pi=doc["pi"],
                delta=doc["delta"],
                sigma2=doc["sigma2"],
                delta_hat=doc["delta_hat"],
                pi0_hat=doc.get("pi0_hat"),
                context_ids=tuple(c["id"] for c in ctx),
                actions=tuple(doc["actions"]),
                name=doc.get("name", ""),
            )
        except KeyError as exc:
            raise InvalidWorld(f"world document lacks field {exc}") from None


def load_world(path) -> EnumerableWorld:
    with open(path) as fh:
        return EnumerableWorld.from_dict(json.load(fh))


def save_world(world: EnumerableWorld, path) -> None:
    with open(path, "w") as fh:
        json.dump(world.to_dict(), fh, indent=1)


def _require_support(world: EnumerableWorld):
    if not world.full_support:
        raise SupportViolation("logging policy lacks support for the target policy")


def _ex(world, values):
    """Mean over contexts of a per-context vector."""
    return float(world.p @ values)


def _vx(world, values):
    m = world.p @ values
    return float(world.p @ values**2 - m * m)


def _ex_vpi0(world, table):
    """Context-averaged variance of ``table[x, y]`` under ``y ~ pi0(.|x)``."""
    m1 = np.sum(world.pi0 * table, axis=1)
    m2 = np.sum(world.pi0 * table**2, axis=1)
    return _ex(world, m2 - m1 * m1)


def true_value(world: EnumerableWorld) -> float:
    """Expected reward of the target policy."""
    return _ex(world, np.sum(world.pi * world.delta, axis=1))


def _mean_shift(world, wa, wb, wg):
    """Integrand of the bias, without the trailing ``- delta``."""
    d, D, z = world.delta, world.Delta, world.zeta
    return wa * D - wb * z * d + wg * (D - z * (d + D)) + (wa + wb + wg) * d


def exact_bias(world: EnumerableWorld, scheme: WeightScheme) -> float:
    """Closed-form bias of an interpolated estimator."""
    _require_support(world)
    wa, wb, wg = weights(scheme, world.pi, world.pi0_hat)
    integrand = _mean_shift(world, wa, wb, wg) - world.delta
    return _ex(world, np.sum(world.pi * integrand, axis=1))


def exact_variance(world: EnumerableWorld, scheme: WeightScheme, n: int) -> float:
    """Closed-form variance of an interpolated estimator on ``n`` records."""
    _require_support(world)
    if n < 1:
        raise ValueError("n must be at least 1")
    wa, wb, wg = weights(scheme, world.pi, world.pi0_hat)
    c, z, d, D = world.c, world.zeta, world.delta, world.Delta
    context_term = _vx(world, np.sum(world.pi * _mean_shift(world, wa, wb, wg), axis=1))
    reward_term = _ex(world, np.sum(world.pi * wb**2 * c * (1 - z) ** 2 * world.sigma2, axis=1))
    action_term = _ex_vpi0(world, wb * c * (1 - z) * d + wg * c * (1 - z) * (d + D))
    return (context_term + reward_term + action_term) / n


def _branches(world, M):
    le = world.c_hat <= M
    with np.errstate(divide="ignore", invalid="ignore"):
        m_over_chat = np.where(le, 0.0, M / np.where(le, 1.0, world.c_hat))
        m_over_c = np.where(le, 0.0, M / np.where(le, 1.0, world.c))
    return le.astype(float), (~le).astype(float), m_over_chat, m_over_c


def _cab_shift(world, M):
    le, gt, mr, _ = _branches(world, M)
    d, D, z = world.delta, world.Delta, world.zeta
    return -d * z * le + (D * (1 - mr) - mr * d * z) * gt


def _clipped_reward_term(world, M):
    le, gt, _, _ = _branches(world, M)
    c, z, s2 = world.c, world.zeta, world.sigma2
    with np.errstate(divide="ignore", invalid="ignore"):
        m2_over_c = np.where(gt > 0, M**2 / np.where(gt > 0, c, 1.0), 0.0)
    return _ex(world, np.sum(world.pi * (c * (1 - z) ** 2 * s2 * le + m2_over_c * s2 * gt), axis=1))


def exact_bias_cab(world: EnumerableWorld, M: float) -> float:
    """Bias of CAB from its specialised closed form."""
    _require_support(world)
    return _ex(world, np.sum(world.pi * _cab_shift(world, M), axis=1))


def exact_variance_cab(world: EnumerableWorld, M: float, n: int) -> float:
    """Variance of CAB from its specialised closed form."""
    _require_support(world)
    le, gt, _, _ = _branches(world, M)
    c, z, d = world.c, world.zeta, world.delta
    context_term = _vx(world, np.sum(world.pi * (d + _cab_shift(world, M)), axis=1))
    action_term = _ex_vpi0(world, c * (1 - z) * d * le + M * d * gt)
    return (context_term + _clipped_reward_term(world, M) + action_term) / n


def _cabdr_shift(world, M):
    le, gt, _, mc = _branches(world, M)
    D, z = world.Delta, world.zeta
    return z * D * le + D * (1 - mc) * gt


def exact_bias_cabdr(world: EnumerableWorld, M: float) -> float:
    """Bias of CAB-DR from its specialised closed form."""
    _require_support(world)
    return _ex(world, np.sum(world.pi * _cabdr_shift(world, M), axis=1))


def exact_variance_cabdr(world: EnumerableWorld, M: float, n: int) -> float:
    """Variance of CAB-DR from its specialised closed form."""
    _require_support(world)
    le, gt, _, _ = _branches(world, M)
    c, z, d, D = world.c, world.zeta, world.delta, world.Delta
    context_term = _vx(world, np.sum(world.pi * (d + _cabdr_shift(world, M)), axis=1))
    action_term = _ex_vpi0(world, c * (1 - z) * (-D) * le - M * D * gt)
    return (context_term + _clipped_reward_term(world, M) + action_term) / n


def exact_mse(world: EnumerableWorld, scheme: WeightScheme, n: int) -> float:
    return exact_bias(world, scheme) ** 2 + exact_variance(world, scheme, n)


def max_importance_weight(world: EnumerableWorld) -> float:
    """Largest estimated importance weight over pairs the target reaches."""
    reach = world.pi > 0
    return float(world.c_hat[reach].max()) if reach.any() else 0.0


def world_from_tables(pi0, pi, reward, delta_hat, *, pi0_hat=None, sigma2=None, name=""):
    """World with equiprobable contexts, typically the rows of a labelled test set."""
    pi0 = np.asarray(pi0, dtype=float)
    nx = pi0.shape[0]
    return EnumerableWorld(
        p=np.full(nx, 1.0 / nx),
        pi0=pi0,
        pi=pi,
        delta=reward,
        sigma2=np.zeros_like(pi0) if sigma2 is None else sigma2,
        delta_hat=delta_hat,
        pi0_hat=pi0_hat,
        name=name,
    )

