"""Interpolated counterfactual estimators.

An estimator is fixed by a triplet of weighting functions applied to three
per-record terms: the reward model summed over all actions, the
inverse-propensity-weighted observed reward, and the inverse-propensity-weighted
model reward at the logged action.  :class:`WeightScheme` names the triplet;
:func:`evaluate` computes the estimate and :func:`evaluate_gradient` its
(sub)gradient for softmax-linear target policies.

All array routines broadcast over leading axes, so a stack of replicated logs
of shape ``(R, n)`` is evaluated in one call by :func:`record_values`.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import (
    EmptyData,
    InvalidScheme,
    MissingLoggingRow,
    NonDifferentiableScheme,
    SupportWarning,
)

KINDS = ("DM", "IPS", "cIPS", "DR", "SB", "SWITCH", "CAB", "CABDR")
CLIPPED_KINDS = ("cIPS", "SWITCH", "CAB", "CABDR")
_NEEDS_ROW = ("SWITCH", "CAB")


@dataclass(frozen=True)
class WeightScheme:
    """Estimator identity: ``kind`` plus its single hyperparameter.

    ``M`` is the clipping threshold in ``(0, inf]`` for cIPS, SWITCH, CAB and
    CABDR; ``tau`` the blend weight in ``[0, 1]`` for SB.
    """

    kind: str
    M: Optional[float] = None
    tau: Optional[float] = None

    def __post_init__(self):
        kind = _canonical_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in CLIPPED_KINDS:
            if self.M is None:
                raise InvalidScheme(f"{kind} needs a clipping threshold M")
            if self.tau is not None:
                raise InvalidScheme(f"{kind} takes M, not tau")
            if not self.M > 0:
                raise InvalidScheme(f"M must be positive, got {self.M}")
            object.__setattr__(self, "M", float(self.M))
        elif kind == "SB":
            if self.tau is None:
                raise InvalidScheme("SB needs a blend weight tau")
            if self.M is not None:
                raise InvalidScheme("SB takes tau, not M")
            if not 0.0 <= self.tau <= 1.0:
                raise InvalidScheme(f"tau must lie in [0, 1], got {self.tau}")
            object.__setattr__(self, "tau", float(self.tau))
        elif self.M is not None or self.tau is not None:
            raise InvalidScheme(f"{kind} takes no hyperparameter")

    @property
    def param(self) -> Optional[float]:
        return self.M if self.M is not None else self.tau

    @property
    def differentiable(self) -> bool:
        return self.kind != "SWITCH"

    @property
    def needs_logging_row(self) -> bool:
        return self.kind in _NEEDS_ROW

    @property
    def label(self) -> str:
        if self.M is not None:
            return f"{self.kind}(M={self.M:g})"
        if self.tau is not None:
            return f"{self.kind}(tau={self.tau:g})"
        return self.kind

    def to_dict(self) -> dict:
        doc = {"kind": self.kind}
        if self.M is not None:
            doc["M"] = "inf" if math.isinf(self.M) else self.M
        if self.tau is not None:
            doc["tau"] = self.tau
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "WeightScheme":
        M = doc.get("M")
        return cls(doc["kind"], M=None if M is None else float(M), tau=doc.get("tau"))


def _canonical_kind(kind: str) -> str:
    for k in KINDS:
        if kind.replace("-", "").upper() == k.upper():
            return k
    raise InvalidScheme(f"unknown estimator kind {kind!r}")


def clip_factor(M: float, pi, p0) -> np.ndarray:
    """``min{M * p0 / pi, 1}``, taken as 1 where ``pi == 0``."""
    pi = np.asarray(pi, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    shape = np.broadcast(pi, p0).shape
    if math.isinf(M):
        return np.ones(shape)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = np.where(pi > 0, M * p0 / np.where(pi > 0, pi, 1.0), np.inf)
    return np.minimum(ratio, 1.0)


def _importance_ratio(pi, p0) -> np.ndarray:
    """``pi / p0`` with 0 where ``pi == 0`` and inf where only ``p0`` vanishes."""
    pi = np.asarray(pi, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(p0 > 0, pi / np.where(p0 > 0, p0, 1.0), np.inf)
    return np.where(pi > 0, c, 0.0)


def weights(scheme: WeightScheme, pi, p0):
    """Weight triplet ``(w_alpha, w_beta, w_gamma)`` at target probability ``pi``
    and logging propensity ``p0`` (elementwise, broadcasting)."""
    pi = np.asarray(pi, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    shape = np.broadcast(pi, p0).shape
    one, zero = np.ones(shape), np.zeros(shape)
    kind = scheme.kind
    if kind == "DM":
        return one, zero, zero
    if kind == "IPS":
        return zero, one, zero
    if kind == "DR":
        return one, one, -one
    if kind == "SB":
        return (1.0 - scheme.tau) * one, scheme.tau * one, zero
    if kind == "SWITCH":
        c = _importance_ratio(pi, p0)
        hi = (c > scheme.M).astype(float)
        return hi, 1.0 - hi, zero
    g = clip_factor(scheme.M, pi, p0)
    if kind == "cIPS":
        return zero, g, zero
    if kind == "CAB":
        return 1.0 - g, g, zero
    if kind == "CABDR":
        return one, g, -g
    raise InvalidScheme(kind)  # pragma: no cover


def record_values(
    scheme: WeightScheme,
    pi_rows: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    propensities: np.ndarray,
    dhat_rows: np.ndarray,
    logging_rows: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Per-record contribution to the estimate; the estimate is its mean.

    ``pi_rows``, ``dhat_rows`` and ``logging_rows`` have shape ``(..., n, k)``;
    ``actions``, ``rewards``, ``propensities`` have shape ``(..., n)``.
    """
    actions = np.asarray(actions)
    pi_y = np.take_along_axis(pi_rows, actions[..., None], axis=-1)[..., 0]
    dhat_y = np.take_along_axis(dhat_rows, actions[..., None], axis=-1)[..., 0]
    _, wb, wg = weights(scheme, pi_y, propensities)

    if scheme.kind in _NEEDS_ROW:
        if logging_rows is None:
            raise MissingLoggingRow(f"{scheme.kind} needs the full logging distribution")
        wa_rows = weights(scheme, pi_rows, logging_rows)[0]
        alpha = np.sum(pi_rows * wa_rows * dhat_rows, axis=-1)
    else:
        wa = weights(scheme, 1.0, 1.0)[0]
        alpha = wa * np.sum(pi_rows * dhat_rows, axis=-1) if wa != 0 else 0.0

    ipw = pi_y / propensities
    return alpha + ipw * (wb * rewards + wg * dhat_y)


# --------------------------------------------------------------------------
# logged data


@dataclass
class LoggedInteraction:
    """One logged bandit record."""

    context: object
    action: int
    reward: float
    logging_propensity: float
    full_logging_row: Optional[Sequence[float]] = None

    def to_json(self) -> dict:
        doc = {}
        if isinstance(self.context, (int, np.integer)):
            doc["xid"] = int(self.context)
        else:
            doc["x"] = [float(v) for v in np.asarray(self.context).ravel()]
        doc.update(y=int(self.action), r=float(self.reward), p0=float(self.logging_propensity))
        if self.full_logging_row is not None:
            doc["p0_row"] = [float(v) for v in self.full_logging_row]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "LoggedInteraction":
        ctx = int(doc["xid"]) if "xid" in doc else np.asarray(doc["x"], dtype=float)
        return cls(ctx, int(doc["y"]), float(doc["r"]), float(doc["p0"]), doc.get("p0_row"))


@dataclass
class LoggedData:
    """Columnar bandit log.

    ``contexts`` is either an ``(n, d)`` feature matrix or an ``(n,)`` vector of
    context ids.  ``logging_rows`` optionally holds the full logging
    distribution per record.
    """

    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    propensities: np.ndarray
    logging_rows: Optional[np.ndarray] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.contexts = np.asarray(self.contexts)
        self.actions = np.asarray(self.actions, dtype=int)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.propensities = np.asarray(self.propensities, dtype=float)
        n = len(self.actions)
        if not (len(self.contexts) == len(self.rewards) == len(self.propensities) == n):
            raise ValueError("log columns differ in length")
        if n and not np.all(self.propensities > 0):
            i = int(np.argmin(self.propensities > 0))
            raise ValueError(f"record {i}: logged propensity must be positive")
        if self.logging_rows is not None:
            rows = np.asarray(self.logging_rows, dtype=float)
            self.logging_rows = rows
            if rows.shape[0] != n:
                raise ValueError("logging_rows has the wrong number of records")
            bad = np.abs(rows.sum(axis=1) - 1.0) > 1e-9
            if bad.any():
                raise ValueError(f"record {int(np.argmax(bad))}: logging row does not sum to 1")
            logged = rows[np.arange(n), self.actions]
            bad = ~np.isclose(logged, self.propensities, rtol=1e-12, atol=0)
            if bad.any():
                raise ValueError(
                    f"record {int(np.argmax(bad))}: logging row disagrees with propensity"
                )

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def has_feature_contexts(self) -> bool:
        return self.contexts.ndim == 2

    def subset(self, idx) -> "LoggedData":
        rows = None if self.logging_rows is None else self.logging_rows[idx]
        return LoggedData(
            self.contexts[idx], self.actions[idx], self.rewards[idx],
            self.propensities[idx], rows, dict(self.provenance),
        )

    @classmethod
    def from_records(cls, records: Iterable[LoggedInteraction], provenance=None) -> "LoggedData":
        records = list(records)
        if not records:
            raise EmptyData("no records")
        rows = [r.full_logging_row for r in records]
        if all(r is not None for r in rows):
            rows = np.asarray(rows, dtype=float)
        elif any(r is not None for r in rows):
            raise MissingLoggingRow("logging rows present on some records only")
        else:
            rows = None
        if isinstance(records[0].context, (int, np.integer)):
            ctx = np.array([r.context for r in records], dtype=int)
        else:
            ctx = np.stack([np.asarray(r.context, dtype=float) for r in records])
        return cls(
            ctx,
            np.array([r.action for r in records]),
            np.array([r.reward for r in records]),
            np.array([r.logging_propensity for r in records]),
            rows,
            dict(provenance or {}),
        )

    def records(self):
        for i in range(len(self)):
            row = None if self.logging_rows is None else self.logging_rows[i]
            ctx = int(self.contexts[i]) if self.contexts.ndim == 1 else self.contexts[i]
            yield LoggedInteraction(
                ctx, int(self.actions[i]), float(self.rewards[i]),
                float(self.propensities[i]), row,
            )


def write_jsonl(path, data: LoggedData) -> None:
    with open(path, "w") as fh:
        for rec in data.records():
            fh.write(json.dumps(rec.to_json()) + "\n")


def read_jsonl(path, provenance=None) -> LoggedData:
    with open(path) as fh:
        recs = [LoggedInteraction.from_json(json.loads(line)) for line in fh if line.strip()]
    return LoggedData.from_records(recs, provenance)


# --------------------------------------------------------------------------
# evaluation


def _as_log(data) -> LoggedData:
    if isinstance(data, LoggedData):
        return data
    return LoggedData.from_records(data)


def _rows(source, contexts, what: str) -> np.ndarray:
    """Materialise per-record action rows from an array, a policy or a callable."""
    if source is None:
        raise ValueError(f"{what} is required")
    if isinstance(source, np.ndarray):
        return np.asarray(source, dtype=float)
    if hasattr(source, "probs"):
        return np.asarray(source.probs(contexts), dtype=float)
    return np.asarray(source(contexts), dtype=float)


def zero_support_fraction(pi_rows: np.ndarray, logging_rows: np.ndarray) -> float:
    """Fraction of (record, action) pairs the target reaches but the logger never plays."""
    return float(np.mean((pi_rows > 0) & (logging_rows <= 0)))


def _prepare(scheme, data, policy, reward_model):
    log = _as_log(data)
    if len(log) == 0:
        raise EmptyData("cannot evaluate on an empty log")
    pi_rows = _rows(policy, log.contexts, "policy")
    if reward_model is None:
        dhat = np.zeros_like(pi_rows)
    else:
        dhat = _rows(reward_model, log.contexts, "reward model")
    if scheme.needs_logging_row and log.logging_rows is None:
        raise MissingLoggingRow(f"{scheme.kind} needs p0_row on every record")
    if log.logging_rows is not None:
        frac = zero_support_fraction(pi_rows, log.logging_rows)
        if frac > 0:
            warnings.warn(
                f"target policy reaches unlogged actions on {frac:.3%} of (record, action) pairs",
                SupportWarning,
                stacklevel=3,
            )
    return log, pi_rows, dhat


def evaluate(
    scheme: WeightScheme,
    data,
    policy,
    reward_model: Optional[Callable] = None,
) -> float:
    """Point estimate of the target policy's expected reward.

    ``policy`` may be an object with ``probs(contexts)``, a callable, or a
    precomputed ``(n, k)`` array of target probabilities.  ``reward_model`` is
    a callable returning ``(n, k)`` predicted rewards (or such an array);
    ``None`` means the zero model.
    """
    log, pi_rows, dhat = _prepare(scheme, data, policy, reward_model)
    vals = record_values(
        scheme, pi_rows, log.actions, log.rewards, log.propensities, dhat, log.logging_rows
    )
    return float(np.mean(vals))


def derivative_coefficients(
    scheme: WeightScheme,
    pi_rows: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    propensities: np.ndarray,
    dhat_rows: np.ndarray,
    logging_rows: Optional[np.ndarray] = None,
) -> np.ndarray:
    """``d record_value_i / d pi(y|x_i)`` for every record and action.

    On the clipped branch (``M * p0 < pi``) the product ``pi * min{M p0/pi, 1}``
    equals ``M * p0`` and does not move with ``pi``; the boundary takes the
    unclipped branch.
    """
    if not scheme.differentiable:
        raise NonDifferentiableScheme(f"{scheme.kind} is discontinuous in the target policy")
    n = len(actions)
    idx = np.arange(n)
    pi_y = pi_rows[idx, actions]
    dhat_y = dhat_rows[idx, actions]
    kind = scheme.kind

    if kind == "CAB":
        if logging_rows is None:
            raise MissingLoggingRow("CAB needs the full logging distribution")
        coef = np.where(pi_rows > scheme.M * logging_rows, dhat_rows, 0.0)
    else:
        coef = weights(scheme, 1.0, 1.0)[0] * dhat_rows

    if kind in ("cIPS", "CAB", "CABDR"):
        live = (pi_y <= scheme.M * propensities).astype(float)
        wb, wg = live, (-live if kind == "CABDR" else 0.0)
    else:
        _, wb, wg = weights(scheme, 1.0, 1.0)
    coef = coef.copy()
    coef[idx, actions] += (wb * rewards + wg * dhat_y) / propensities
    return coef


def evaluate_gradient(
    scheme: WeightScheme,
    data,
    policy,
    reward_model: Optional[Callable] = None,
) -> np.ndarray:
    """Subgradient of :func:`evaluate` w.r.t. a softmax-linear policy's parameters."""
    if not scheme.differentiable:
        raise NonDifferentiableScheme(f"{scheme.kind} is discontinuous in the target policy")
    log, pi_rows, dhat = _prepare(scheme, data, policy, reward_model)
    coef = derivative_coefficients(
        scheme, pi_rows, log.actions, log.rewards, log.propensities, dhat, log.logging_rows
    )
    return policy.pullback(log.contexts, pi_rows, coef) / len(log)
