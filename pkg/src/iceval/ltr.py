"""Counterfactual learning to rank from position-biased clicks.

Queries carry padded candidate lists.  A user examines the document at rank
``r`` with probability ``1/r`` and clicks it when examined and relevant.  The
estimators reuse the bandit weight functions with propensity ``p`` in place of
``pi0/pi`` (target probability fixed to 1), which makes every weight depend on
the logged propensity only.  The quality metric is the sum of the ranks of
relevant documents, averaged over queries; lower is better.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng as rngmod
from .errors import InvalidCoefficient, NotIdentifiableInLTR
from .estimators import WeightScheme, weights
from .learn import fit_multinomial_logistic

LTR_KINDS = ("DM", "IPS", "cIPS", "SB", "SWITCH", "CAB")


@dataclass
class QuerySet:
    """Padded query corpus: ``features (Q, m, d)``, ``rel (Q, m)``, ``mask (Q, m)``."""

    features: np.ndarray
    rel: np.ndarray
    mask: np.ndarray
    qids: tuple = ()

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.rel = np.asarray(self.rel, dtype=int)
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.qids:
            self.qids = tuple(range(len(self.rel)))
        if np.any(self.mask.sum(axis=1) < 1):
            raise ValueError("every query needs at least one candidate")
        if np.any((self.rel != 0) & (self.rel != 1)):
            raise ValueError("relevance must be binary")
        if np.any(self.rel[~self.mask] != 0):
            raise ValueError("padding slots must carry zero relevance")

    def __len__(self):
        return len(self.rel)

    @property
    def d(self) -> int:
        return self.features.shape[2]

    def subset(self, idx) -> "QuerySet":
        idx = np.asarray(idx)
        return QuerySet(self.features[idx], self.rel[idx], self.mask[idx],
                        tuple(self.qids[i] for i in idx))

    @classmethod
    def from_lists(cls, docs: Sequence[Sequence[tuple]], qids=()) -> "QuerySet":
        """Build from per-query lists of ``(feature_vector, relevance)`` pairs."""
        m = max(len(q) for q in docs)
        d = len(docs[0][0][0])
        F = np.zeros((len(docs), m, d))
        R = np.zeros((len(docs), m), dtype=int)
        K = np.zeros((len(docs), m), dtype=bool)
        for i, q in enumerate(docs):
            for j, (feat, rel) in enumerate(q):
                F[i, j], R[i, j], K[i, j] = feat, rel, True
        return cls(F, R, K, tuple(qids))


def write_queries(path, qs: QuerySet) -> None:
    with open(path, "w") as fh:
        for i, qid in enumerate(qs.qids):
            docs = [{"feat": qs.features[i, j].tolist(), "rel": int(qs.rel[i, j])}
                    for j in np.flatnonzero(qs.mask[i])]
            fh.write(json.dumps({"qid": qid, "docs": docs}) + "\n")


def read_queries(path) -> QuerySet:
    docs, qids = [], []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                doc = json.loads(line)
                qids.append(doc["qid"])
                docs.append([(d["feat"], int(d["rel"])) for d in doc["docs"]])
    return QuerySet.from_lists(docs, qids)


def make_synthetic_queries(n_queries: int, n_docs: int, d: int, seed: int, *,
                           noise: float = 1.0, relevant_rate: float = 0.25):
    """Queries whose documents are relevant when a hidden linear score plus
    Gaussian noise clears a per-corpus threshold.

    Returns the corpus and the hidden weight vector.
    """
    g = rngmod.stream(seed, 10)
    w_true = g.normal(size=d)
    w_true /= np.linalg.norm(w_true)
    F = g.normal(size=(n_queries, n_docs, d))
    latent = F @ w_true + noise * g.normal(size=(n_queries, n_docs))
    thresh = np.quantile(latent, 1.0 - relevant_rate)
    rel = (latent > thresh).astype(int)
    return QuerySet(F, rel, np.ones_like(rel, dtype=bool)), w_true


@dataclass
class LinearRanker:
    w: np.ndarray
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)

    def scores(self, qs: QuerySet) -> np.ndarray:
        return qs.features @ self.w

    def to_dict(self) -> dict:
        return {"w": self.w.tolist(), "manifest": self.manifest}

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearRanker":
        return cls(np.asarray(doc["w"]), dict(doc.get("manifest", {})))


def ranks_from_scores(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """1-based ranks by descending score, ties to the lower document index;
    padding slots get rank 0."""
    s = np.where(mask, scores, -np.inf)
    order = np.argsort(-s, axis=1, kind="stable")
    rk = np.empty_like(order)
    np.put_along_axis(rk, order, np.arange(1, s.shape[1] + 1)[None, :].repeat(len(s), 0), axis=1)
    return np.where(mask, rk, 0)


def ranker_ranks(ranker, qs: QuerySet) -> np.ndarray:
    return ranks_from_scores(ranker.scores(qs), qs.mask)


def true_metric(qs: QuerySet, ranker) -> float:
    """Sum of ranks of the relevant documents, averaged over queries."""
    rk = ranker_ranks(ranker, qs)
    return float(np.mean(np.sum(qs.rel * rk, axis=1)))


@dataclass
class ClickLog:
    """Presented queries with logged ranks, propensities and clicks (each ``(n, m)``)."""

    query_index: np.ndarray
    rank: np.ndarray
    prop: np.ndarray
    click: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.query_index)


def simulate_clicks(qs: QuerySet, logging_ranker, sweeps: float, seed: int,
                    key: Sequence[int] = (11,)) -> ClickLog:
    """Position-biased clicks: examine with probability ``1/rank``, click if relevant.

    ``sweeps`` whole passes over the corpus, plus a random ``frac(sweeps)``
    share of the queries without replacement.
    """
    if not sweeps > 0:
        raise ValueError("sweeps must be positive")
    g = rngmod.stream(seed, *key)
    Q = len(qs)
    full = int(np.floor(sweeps))
    extra = int(round((sweeps - full) * Q))
    idx = np.concatenate([np.tile(np.arange(Q), full),
                          np.sort(g.permutation(Q)[:extra])]).astype(int)
    rk0 = ranker_ranks(logging_ranker, qs)[idx]
    mask = qs.mask[idx]
    prop = np.where(mask, 1.0 / np.maximum(rk0, 1), 1.0)
    observed = g.random(prop.shape) < prop
    click = (observed & mask & (qs.rel[idx] == 1)).astype(int)
    prov = {"seed": seed, "stream_key": list(key), "prng": rngmod.PRNG_ID, "sweeps": sweeps}
    return ClickLog(idx, rk0, prop, click, prov)


def write_clicklog(path, log: ClickLog, qs: QuerySet) -> None:
    with open(path, "w") as fh:
        for i, q in enumerate(log.query_index):
            entries = [{"doc": int(j), "rank": int(log.rank[i, j]), "p": float(log.prop[i, j]),
                        "c": int(log.click[i, j])} for j in np.flatnonzero(qs.mask[q])]
            fh.write(json.dumps({"qid": qs.qids[q], "entries": entries}) + "\n")


def read_clicklog(path, qs: QuerySet) -> ClickLog:
    lookup = {qid: i for i, qid in enumerate(qs.qids)}
    m = qs.mask.shape[1]
    idx, rank, prop, click = [], [], [], []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            r, p, c = np.zeros(m, dtype=int), np.ones(m), np.zeros(m, dtype=int)
            for e in doc["entries"]:
                r[e["doc"]], p[e["doc"]], c[e["doc"]] = e["rank"], e["p"], e["c"]
            idx.append(lookup[doc["qid"]])
            rank.append(r)
            prop.append(p)
            click.append(c)
    return ClickLog(np.array(idx), np.array(rank), np.array(prop), np.array(click))


def ltr_scheme(scheme: WeightScheme) -> WeightScheme:
    if scheme.kind not in LTR_KINDS:
        raise NotIdentifiableInLTR(
            f"{scheme.kind} needs the examination indicator, which clicks do not reveal"
        )
    return scheme


def ltr_weights(scheme: WeightScheme, prop):
    """``(w_alpha, w_beta)`` as functions of the examination propensity."""
    wa, wb, _ = weights(ltr_scheme(scheme), 1.0, prop)
    return wa, wb


def _dhat_rows(reward_model, qs: QuerySet, log: ClickLog) -> np.ndarray:
    if reward_model is None:
        return np.zeros(log.prop.shape)
    if isinstance(reward_model, np.ndarray):
        table = reward_model
    else:
        table = np.asarray(reward_model(qs), dtype=float)
    return table[log.query_index]


def coefficients(scheme: WeightScheme, log: ClickLog, qs: QuerySet, reward_model=None,
                 ) -> np.ndarray:
    """``w_alpha * dhat + w_beta * click / p`` per logged document (0 on padding)."""
    wa, wb = ltr_weights(scheme, log.prop)
    dhat = _dhat_rows(reward_model, qs, log)
    mask = qs.mask[log.query_index]
    return np.where(mask, wa * dhat + wb * log.click / log.prop, 0.0)


def ltr_evaluate(scheme: WeightScheme, log: ClickLog, qs: QuerySet, ranker,
                 reward_model=None) -> float:
    """Estimated average rank-sum of relevant documents under ``ranker``."""
    q = coefficients(scheme, log, qs, reward_model)
    rk = ranker_ranks(ranker, qs)[log.query_index]
    return float(np.sum(q * rk) / len(log))


# --------------------------------------------------------------------------
# generalized propensity SVM-Rank


def _per_query(log: ClickLog, q: np.ndarray, n_queries: int) -> np.ndarray:
    agg = np.zeros((n_queries, q.shape[1]))
    np.add.at(agg, log.query_index, q)
    return agg


def _pair_mask(mask: np.ndarray) -> np.ndarray:
    m = mask.shape[1]
    return mask[:, :, None] & mask[:, None, :] & ~np.eye(m, dtype=bool)[None]


def hinge_data_term(scores: np.ndarray, qagg: np.ndarray, mask: np.ndarray) -> float:
    """``sum_q sum_j qagg[q, j] sum_{k != j} max(1 - (s_j - s_k), 0)``."""
    margin = scores[:, :, None] - scores[:, None, :]
    h = np.where(_pair_mask(mask), np.maximum(1.0 - margin, 0.0), 0.0)
    return float(np.sum(qagg * h.sum(axis=2)))


def rank_data_term(scores: np.ndarray, qagg: np.ndarray, mask: np.ndarray) -> float:
    """``sum_q sum_j qagg[q, j] (rank_j - 1)``, the quantity the hinge bounds."""
    rk = ranks_from_scores(scores, mask)
    return float(np.sum(np.where(mask, qagg * (rk - 1), 0.0)))


@dataclass
class SvmRankProblem:
    features: np.ndarray
    qagg: np.ndarray
    mask: np.ndarray
    C: float
    n: int

    def objective(self, w: np.ndarray) -> float:
        s = self.features @ w
        return 0.5 * float(w @ w) + self.C / self.n * hinge_data_term(s, self.qagg, self.mask)

    def subgradient(self, w: np.ndarray) -> np.ndarray:
        s = self.features @ w
        margin = s[:, :, None] - s[:, None, :]
        active = _pair_mask(self.mask) & (margin < 1.0)
        A = self.qagg[:, :, None] * active
        coef = A.sum(axis=2) - A.sum(axis=1)
        return w - self.C / self.n * np.einsum("qm,qmd->d", coef, self.features)


def svmrank_learn(log: ClickLog, qs: QuerySet, scheme: WeightScheme, C: float,
                  reward_model=None, budget: int = 500, seed: int = 0, *,
                  eta0: float = 0.1, T0: float = 100.0) -> LinearRanker:
    """Minimise ``1/2 ||w||^2 + C/n * sum q_ij sum_k hinge`` by full-batch
    subgradient descent with step ``eta0 / (1 + t/T0)``; returns the best iterate.

    The run is deterministic; ``seed`` is recorded only.
    """
    if not C > 0:
        raise ValueError("C must be positive")
    q = coefficients(scheme, log, qs, reward_model)
    if np.any(q < 0):
        i, j = np.argwhere(q < 0)[0]
        raise InvalidCoefficient(
            f"negative coefficient {q[i, j]:g} at entry {i}, doc {j}; reward model outside [0, 1]?"
        )
    prob = SvmRankProblem(qs.features, _per_query(log, q, len(qs)), qs.mask, C, len(log))
    w = np.zeros(qs.d)
    best_w, best_val = w.copy(), prob.objective(w)
    for t in range(budget):
        w = w - eta0 / (1.0 + t / T0) * prob.subgradient(w)
        val = prob.objective(w)
        if val < best_val:
            best_w, best_val = w.copy(), val
    return LinearRanker(best_w, {"scheme": scheme.to_dict(), "C": C, "budget": budget,
                                 "seed": seed, "eta0": eta0, "T0": T0, "objective": best_val})


@dataclass
class RelevanceModel:
    """Calibrated relevance probability from a binary logistic model."""

    classifier: object

    def __call__(self, qs: QuerySet) -> np.ndarray:
        flat = qs.features.reshape(-1, qs.d)
        p = self.classifier.probs(flat)[:, 1].reshape(qs.rel.shape)
        return np.where(qs.mask, p, 0.0)


def fit_relevance_model(qs: QuerySet, fraction: float, seed: int, l2: float = 1e-3,
                        ) -> RelevanceModel:
    """Binary logistic relevance model on a random ``fraction`` of the queries' labels."""
    g = rngmod.stream(seed, 12)
    n_q = max(1, int(round(fraction * len(qs))))
    sub = qs.subset(np.sort(g.permutation(len(qs))[:n_q]))
    X = sub.features[sub.mask]
    y = sub.rel[sub.mask]
    return RelevanceModel(fit_multinomial_logistic(X, y, 2, l2=l2))
