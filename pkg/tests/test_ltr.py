import numpy as np
import pytest
from hypothesis import given, strategies as st

import brute
from iceval import ltr
from iceval.errors import InvalidCoefficient, NotIdentifiableInLTR
from iceval.estimators import WeightScheme


def W(kind, **kw):
    return WeightScheme(kind, **kw)


def ragged_queries(seed, n_queries=6, max_docs=5, d=3):
    g = np.random.default_rng(seed)
    docs = []
    for _ in range(n_queries):
        m = int(g.integers(1, max_docs + 1))
        docs.append([(g.normal(size=d).tolist(), int(g.random() < 0.4)) for _ in range(m)])
    return ltr.QuerySet.from_lists(docs, qids=[f"q{i}" for i in range(n_queries)])


@pytest.fixture(scope="module")
def corpus():
    qs, w_true = ltr.make_synthetic_queries(40, 8, 5, 1)
    logger = ltr.LinearRanker(w_true + np.random.default_rng(0).normal(size=5))
    return qs, w_true, logger


def test_ranks_and_ties():
    scores = np.array([[1.0, 3.0, 3.0, 0.0]])
    mask = np.array([[True, True, True, False]])
    assert ltr.ranks_from_scores(scores, mask).tolist() == [[3, 1, 2, 0]]


@given(st.integers(0, 10**6))
def test_true_metric_matches_enumeration(seed):
    qs = ragged_queries(seed)
    ranker = ltr.LinearRanker(np.random.default_rng(seed).normal(size=3).round(1))
    s = ranker.scores(qs)
    want = np.mean([brute.rank_sum(s[i, qs.mask[i]].tolist(), qs.rel[i, qs.mask[i]].tolist())
                    for i in range(len(qs))])
    assert ltr.true_metric(qs, ranker) == pytest.approx(want, abs=1e-12)


def test_query_io(tmp_path):
    qs = ragged_queries(3)
    ltr.write_queries(tmp_path / "q.jsonl", qs)
    back = ltr.read_queries(tmp_path / "q.jsonl")
    assert back.qids == qs.qids
    assert np.array_equal(back.mask, qs.mask) and np.array_equal(back.rel, qs.rel)
    assert np.array_equal(back.features, qs.features)


def test_clicklog_io(tmp_path, corpus):
    qs, _, logger = corpus
    log = ltr.simulate_clicks(qs, logger, 1.5, 0)
    ltr.write_clicklog(tmp_path / "c.jsonl", log, qs)
    back = ltr.read_clicklog(tmp_path / "c.jsonl", qs)
    for f in ("query_index", "rank", "prop", "click"):
        assert np.array_equal(getattr(back, f), getattr(log, f))


def test_click_model_basics(corpus):
    qs, _, logger = corpus
    log = ltr.simulate_clicks(qs, logger, 20, 4)
    rel = qs.rel[log.query_index] == 1
    top = log.rank == 1
    assert np.all(log.click[top & rel] == 1)
    assert np.all(log.click[~rel] == 0)
    # propensities are exactly 1/rank under the logger
    rk = ltr.ranker_ranks(logger, qs)[log.query_index]
    assert np.array_equal(log.prop, 1.0 / rk)
    assert len(log) == 20 * len(qs)


def test_fractional_sweeps(corpus):
    qs, _, logger = corpus
    log = ltr.simulate_clicks(qs, logger, 0.5, 0)
    assert len(log) == len(qs) // 2
    assert len(np.unique(log.query_index)) == len(log)
    with pytest.raises(ValueError):
        ltr.simulate_clicks(qs, logger, 0.0, 0)


def test_click_rate_at_rank_four():
    N = 20000
    qs = ltr.QuerySet(np.arange(4.0)[::-1].reshape(1, 4, 1), [[0, 0, 0, 1]], [[True] * 4])
    log = ltr.simulate_clicks(qs, ltr.LinearRanker([1.0]), N, 2)
    count = log.click[:, 3].sum()
    assert abs(count - N / 4) <= 4 * np.sqrt(N * 0.25 * 0.75)


def test_dr_kinds_rejected(corpus):
    qs, _, logger = corpus
    log = ltr.simulate_clicks(qs, logger, 1, 0)
    for s in (W("DR"), W("CABDR", M=2.0)):
        with pytest.raises(NotIdentifiableInLTR):
            ltr.ltr_evaluate(s, log, qs, logger)
        with pytest.raises(NotIdentifiableInLTR):
            ltr.svmrank_learn(log, qs, s, 1.0)


def test_table_weights():
    p = np.array([1.0, 0.5, 0.2, 0.1])
    assert np.array_equal(np.stack(ltr.ltr_weights(W("IPS"), p)), [[0] * 4, [1] * 4])
    wa, wb = ltr.ltr_weights(W("CAB", M=4.0), p)
    assert np.allclose(wb, np.minimum(4.0 * p, 1.0)) and np.allclose(wa, 1 - wb)
    wa, wb = ltr.ltr_weights(W("SWITCH", M=4.0), p)
    assert wa.tolist() == [0, 0, 1, 1] and wb.tolist() == [1, 1, 0, 0]


def test_ips_rank_one_clicks():
    qs = ltr.QuerySet(np.array([[[2.0], [1.0]], [[0.0], [1.0]]]), [[1, 0], [0, 1]],
                      np.ones((2, 2), bool))
    logger = ltr.LinearRanker([1.0])
    log = ltr.ClickLog(np.array([0, 1]), np.array([[1, 2], [2, 1]]),
                       np.array([[1.0, 0.5], [0.5, 1.0]]), np.array([[1, 0], [0, 1]]))
    target = ltr.LinearRanker([-1.0])
    # the reversed ranker puts both clicked documents at rank 2
    assert ltr.ltr_evaluate(W("IPS"), log, qs, target) == pytest.approx(2.0, abs=1e-15)
    assert ltr.true_metric(qs, logger) == 1.0


@given(st.integers(0, 10**6), st.floats(0.05, 20.0))
def test_ltr_identities(seed, M):
    qs = ragged_queries(seed)
    g = np.random.default_rng(seed)
    logger = ltr.LinearRanker(g.normal(size=3))
    target = ltr.LinearRanker(g.normal(size=3))
    log = ltr.simulate_clicks(qs, logger, 3, seed)
    dhat = np.where(qs.mask, g.random(qs.rel.shape), 0.0)
    ev = lambda s, d=dhat: ltr.ltr_evaluate(s, log, qs, target, d)
    m = qs.mask.shape[1]
    assert abs(ev(W("CAB", M=float(m))) - ev(W("IPS"))) <= 1e-12
    assert abs(ev(W("CAB", M=1e-300)) - ev(W("DM"))) <= 1e-12
    zero = np.zeros_like(dhat)
    assert abs(ev(W("cIPS", M=M), zero) - ev(W("CAB", M=M), zero)) <= 1e-12
    assert abs(ev(W("SB", tau=1.0)) - ev(W("IPS"))) <= 1e-12
    assert abs(ev(W("SB", tau=0.0)) - ev(W("DM"))) <= 1e-12


def test_ips_unbiased_small(corpus):
    qs, w_true, logger = corpus
    target = ltr.LinearRanker(w_true)
    est = [ltr.ltr_evaluate(W("IPS"), ltr.simulate_clicks(qs, logger, 1, 0, key=(7, r)), qs, target)
           for r in range(2000)]
    se = np.std(est, ddof=1) / np.sqrt(len(est))
    assert abs(np.mean(est) - ltr.true_metric(qs, target)) <= 4 * se


@given(st.integers(0, 10**6), st.sampled_from([W("IPS"), W("CAB", M=3.0), W("SWITCH", M=3.0)]))
def test_hinge_dominates_rank(seed, scheme):
    qs = ragged_queries(seed, n_queries=5, max_docs=6)
    g = np.random.default_rng(seed)
    log = ltr.simulate_clicks(qs, ltr.LinearRanker(g.normal(size=3)), 4, seed)
    dhat = np.where(qs.mask, g.random(qs.rel.shape), 0.0)
    qagg = ltr._per_query(log, ltr.coefficients(scheme, log, qs, dhat), len(qs))
    for _ in range(5):
        s = qs.features @ (g.normal(size=3) * g.choice([0.0, 0.1, 1.0, 10.0]))
        assert ltr.hinge_data_term(s, qagg, qs.mask) >= ltr.rank_data_term(s, qagg, qs.mask)


def test_subgradient_matches_finite_difference(corpus):
    qs, _, logger = corpus
    log = ltr.simulate_clicks(qs, logger, 2, 0)
    q = ltr.coefficients(W("IPS"), log, qs)
    prob = ltr.SvmRankProblem(qs.features, ltr._per_query(log, q, len(qs)), qs.mask, 1.0, len(log))
    w = np.random.default_rng(1).normal(size=qs.d)
    h = 1e-6
    fd = np.array([(prob.objective(w + h * e) - prob.objective(w - h * e)) / (2 * h)
                   for e in np.eye(qs.d)])
    assert np.allclose(prob.subgradient(w), fd, rtol=1e-4, atol=1e-6)


def test_no_clicks_gives_zero_ranker():
    qs = ragged_queries(0)
    log = ltr.simulate_clicks(qs, ltr.LinearRanker(np.zeros(3)), 1, 0)
    log.click[:] = 0
    r = ltr.svmrank_learn(log, qs, W("IPS"), 1.0, None, budget=50)
    assert np.array_equal(r.w, np.zeros(3))


def test_single_click_learned():
    qs = ltr.QuerySet(np.array([[[1.0, 0.0], [0.0, 1.0]]]), [[1, 0]], [[True, True]])
    log = ltr.ClickLog(np.array([0]), np.array([[1, 2]]), np.array([[1.0, 0.5]]),
                       np.array([[1, 0]]))
    r = ltr.svmrank_learn(log, qs, W("IPS"), 10.0, None, budget=200)
    assert r.w @ (qs.features[0, 0] - qs.features[0, 1]) > 0


def test_negative_coefficient_rejected(corpus):
    qs, _, logger = corpus
    log = ltr.simulate_clicks(qs, logger, 1, 0)
    with pytest.raises(InvalidCoefficient):
        ltr.svmrank_learn(log, qs, W("DM"), 1.0, -np.ones(qs.rel.shape))
    with pytest.raises(ValueError):
        ltr.svmrank_learn(log, qs, W("IPS"), 0.0)


def test_learning_improves_on_logger(corpus):
    qs, _, logger = corpus
    log = ltr.simulate_clicks(qs, logger, 5, 0)
    r = ltr.svmrank_learn(log, qs, W("IPS"), 1.0, None, budget=300)
    assert ltr.true_metric(qs, r) < ltr.true_metric(qs, ltr.LinearRanker(np.zeros(qs.d)))


def test_relevance_model_range(corpus):
    qs = corpus[0]
    dhat = ltr.fit_relevance_model(qs, 0.1, 0)(qs)
    assert np.all((dhat >= 0) & (dhat <= 1))
