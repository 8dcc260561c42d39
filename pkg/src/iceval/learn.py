"""Off-policy learning of softmax-linear policies from bandit logs.

The empirical risk is the negative of any differentiable interpolated
estimator plus an L2 penalty on the parameters (the plain norm by default).
Several starts are optimised and the best objective value wins; candidate
configurations are then compared on a validation log with clipped IPS whose
threshold is the 90th percentile of the validation importance weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from . import rng as rngmod
from .errors import NonDifferentiableScheme, NonFiniteObjective, EmptyData
from .estimators import (
    LoggedData,
    WeightScheme,
    derivative_coefficients,
    evaluate,
    record_values,
)
from .policy import SoftmaxLinearPolicy, softmax


@dataclass(frozen=True)
class LearnConfig:
    scheme: WeightScheme
    lam: float = 0.0
    restarts: int = 10
    max_iter: int = 200
    tol: float = 1e-6
    seed: int = 0
    optimizer: str = "lbfgs"
    squared_penalty: bool = False

    def __post_init__(self):
        if not self.scheme.differentiable:
            raise NonDifferentiableScheme(f"{self.scheme.kind} cannot be used as a learning objective")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.optimizer not in ("lbfgs", "gd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.to_dict(), "lam": self.lam, "restarts": self.restarts,
            "max_iter": self.max_iter, "tol": self.tol, "seed": self.seed,
            "optimizer": self.optimizer, "squared_penalty": self.squared_penalty,
        }


class ErmObjective:
    """``-estimate(w) + lam * ||w||`` and its gradient on a fixed log."""

    def __init__(self, log: LoggedData, scheme: WeightScheme, reward_model, k: int,
                 lam: float = 0.0, squared_penalty: bool = False):
        if len(log) == 0:
            raise EmptyData("cannot learn from an empty log")
        if not log.has_feature_contexts:
            raise ValueError("learning needs feature-vector contexts")
        if not scheme.differentiable:
            raise NonDifferentiableScheme(f"{scheme.kind} cannot be used as a learning objective")
        self.log, self.scheme, self.k = log, scheme, k
        self.lam, self.squared = lam, squared_penalty
        self.X = np.asarray(log.contexts, dtype=float)
        self.d = self.X.shape[1]
        if reward_model is None:
            self.dhat = np.zeros((len(log), k))
        elif isinstance(reward_model, np.ndarray):
            self.dhat = reward_model
        else:
            self.dhat = np.asarray(reward_model(self.X), dtype=float)
        self.n_evals = 0

    def penalty(self, w: np.ndarray):
        if self.squared:
            return self.lam * float(w @ w), 2.0 * self.lam * w
        norm = float(np.linalg.norm(w))
        grad = self.lam * w / norm if norm > 0 else np.zeros_like(w)
        return self.lam * norm, grad

    def __call__(self, w: np.ndarray):
        self.n_evals += 1
        log = self.log
        probs = softmax(self.X @ w.reshape(self.k, self.d).T)
        vals = record_values(
            self.scheme, probs, log.actions, log.rewards, log.propensities,
            self.dhat, log.logging_rows,
        )
        est = float(np.mean(vals))
        if not np.isfinite(est):
            bad = np.flatnonzero(~np.isfinite(vals))
            raise NonFiniteObjective(
                "estimate is not finite", int(bad[0]) if bad.size else -1
            )
        coef = derivative_coefficients(
            self.scheme, probs, log.actions, log.rewards, log.propensities,
            self.dhat, log.logging_rows,
        )
        inner = probs * (coef - np.sum(probs * coef, axis=1, keepdims=True))
        grad_est = (inner.T @ self.X).ravel() / len(log)
        pen, pen_grad = self.penalty(w)
        return -est + pen, -grad_est + pen_grad


class _BestTracker:
    """Wraps an objective and remembers the best point ever evaluated."""

    def __init__(self, fn):
        self.fn = fn
        self.best_val = np.inf
        self.best_w = None

    def __call__(self, w):
        val, grad = self.fn(w)
        if val < self.best_val:
            self.best_val, self.best_w = val, np.array(w, copy=True)
        return val, grad


def _gradient_descent(fun, w0, max_iter, tol, step0=1.0):
    w = np.array(w0, dtype=float)
    val, grad = fun(w)
    step = step0
    for _ in range(max_iter):
        if np.linalg.norm(grad) < tol:
            break
        while True:
            cand = w - step * grad
            cval, cgrad = fun(cand)
            if cval <= val - 1e-4 * step * float(grad @ grad) or step < 1e-12:
                break
            step *= 0.5
        if cval > val:
            break
        w, val, grad = cand, cval, cgrad
        step = min(step * 2.0, 1e3)
    return w


def optimize(fun, w0, config: LearnConfig):
    """Minimise ``fun`` from ``w0``; returns ``(best_value, best_params)``."""
    tracker = _BestTracker(fun)
    if config.optimizer == "lbfgs":
        minimize(
            tracker, w0, jac=True, method="L-BFGS-B",
            options={"maxiter": config.max_iter, "gtol": config.tol},
        )
    else:
        _gradient_descent(tracker, w0, config.max_iter, config.tol)
    return tracker.best_val, tracker.best_w


def erm_learn(log: LoggedData, config: LearnConfig, reward_model, k: Optional[int] = None,
              ) -> SoftmaxLinearPolicy:
    """Best softmax-linear policy over ``config.restarts`` starts.

    Start 0 is ``w = 0``; the others are drawn from ``N(0, 0.1^2)`` on the
    stream ``(config.seed, restart)``.
    """
    if k is None:
        k = log.logging_rows.shape[1] if log.logging_rows is not None else int(log.actions.max()) + 1
    obj = ErmObjective(log, config.scheme, reward_model, k, config.lam, config.squared_penalty)
    p = k * obj.d
    best_val, best_w, best_r = np.inf, None, -1
    for r in range(config.restarts):
        w0 = np.zeros(p) if r == 0 else rngmod.stream(config.seed, r).normal(0.0, 0.1, size=p)
        val, w = optimize(obj, w0, config)
        if val < best_val:
            best_val, best_w, best_r = val, w, r
    pol = SoftmaxLinearPolicy.from_params(best_w, k, obj.d)
    pol.manifest = {
        "config": config.to_dict(),
        "objective": best_val,
        "restart": best_r,
        "n_train": len(log),
        "provenance": log.provenance,
    }
    return pol


def fit_multinomial_logistic(X, y, k: int, l2: float = 1e-3, max_iter: int = 500,
                             ) -> SoftmaxLinearPolicy:
    """Full-information softmax regression: mean cross-entropy + ``l2/2 ||W||^2``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n, d = X.shape
    Y = np.zeros((n, k))
    Y[np.arange(n), y] = 1.0

    def fun(w):
        W = w.reshape(k, d)
        S = X @ W.T
        S -= S.max(axis=1, keepdims=True)
        logZ = np.log(np.exp(S).sum(axis=1))
        loss = float(np.mean(logZ - S[np.arange(n), y])) + 0.5 * l2 * float(w @ w)
        P = np.exp(S - logZ[:, None])
        grad = ((P - Y).T @ X).ravel() / n + l2 * w
        return loss, grad

    res = minimize(fun, np.zeros(k * d), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": 1e-8})
    pol = SoftmaxLinearPolicy.from_params(res.x, k, d)
    pol.manifest = {"fitter": "multinomial_logistic", "l2": l2, "n": n, "max_iter": max_iter}
    return pol


def expected_error(policy, X, y) -> float:
    """Mean probability of choosing a wrong label, computed exactly."""
    probs = policy.probs(X)
    y = np.asarray(y, dtype=int)
    return float(np.mean(1.0 - probs[np.arange(len(y)), y]))


# --------------------------------------------------------------------------
# model selection


def nearest_rank_percentile(values, q: float) -> float:
    """Smallest value with at least a ``q`` fraction of the sample at or below it."""
    return float(np.percentile(np.asarray(values, dtype=float), 100.0 * q, method="inverted_cdf"))


def importance_weights(policy, log: LoggedData) -> np.ndarray:
    probs = policy.probs(log.contexts)
    return probs[np.arange(len(log)), log.actions] / log.propensities


def cips_percentile_estimate(policy, log: LoggedData, q: float = 0.9) -> float:
    """Clipped IPS with ``M`` at the ``q``-th nearest-rank percentile of the
    policy's own importance weights on ``log``."""
    M = nearest_rank_percentile(importance_weights(policy, log), q)
    if M <= 0:
        return 0.0
    return evaluate(WeightScheme("cIPS", M=M), log, policy)


def ips_estimate(policy, log: LoggedData) -> float:
    return evaluate(WeightScheme("IPS"), log, policy)


SELECTORS = {
    "cips90": cips_percentile_estimate,
    "ips": ips_estimate,
}


def _tie_key(config: Optional[LearnConfig]):
    if config is None:
        return (0.0, 0.0)
    param = config.scheme.param
    return (config.lam, np.inf if param is None else param)


@dataclass
class Selection:
    config: LearnConfig
    policy: object
    score: float
    scores: List[float] = field(default_factory=list)


def select_policy(candidates: Sequence, validation_log: LoggedData, method: str = "cips90",
                  ) -> Selection:
    """Pick the ``(config, policy)`` pair with the highest validation estimate.

    Ties go to the smallest ``lam``, then the smallest ``M`` (or ``tau``).
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidates to select from")
    score_fn = SELECTORS[method]
    scores = [float(score_fn(pol, validation_log)) for _, pol in candidates]
    best = min(range(len(candidates)), key=lambda i: (-scores[i], _tie_key(candidates[i][0])))
    cfg, pol = candidates[best]
    return Selection(cfg, pol, scores[best], scores)


def select_hyperparams(candidates: Sequence[LearnConfig], train_log: LoggedData,
                       validation_log: LoggedData, reward_model, k: Optional[int] = None,
                       method: str = "cips90") -> Selection:
    """Learn one policy per candidate configuration and keep the best on validation."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate configurations")
    if len(candidates) == 1:
        pol = erm_learn(train_log, candidates[0], reward_model, k)
        return Selection(candidates[0], pol, float(SELECTORS[method](pol, validation_log)))
    learned = [(cfg, erm_learn(train_log, cfg, reward_model, k)) for cfg in candidates]
    return select_policy(learned, validation_log, method)


def candidate_grid(kind: str, lams: Sequence[float], params: Sequence[float] = (None,),
                   **kwargs) -> List[LearnConfig]:
    """Cartesian grid of configurations for one estimator kind."""
    out = []
    for lam in lams:
        for p in params:
            if kind in ("cIPS", "CAB", "CABDR"):
                scheme = WeightScheme(kind, M=p)
            elif kind == "SB":
                scheme = WeightScheme(kind, tau=p)
            else:
                scheme = WeightScheme(kind)
            out.append(LearnConfig(scheme, lam=lam, **kwargs))
    return out
