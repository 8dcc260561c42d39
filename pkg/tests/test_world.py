import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

import brute
from conftest import random_world, worlds
from iceval.errors import InvalidWorld, SupportViolation
from iceval.estimators import KINDS, WeightScheme
from iceval.world import (
    EnumerableWorld,
    exact_bias,
    exact_bias_cab,
    exact_bias_cabdr,
    exact_mse,
    exact_variance,
    exact_variance_cab,
    exact_variance_cabdr,
    load_world,
    max_importance_weight,
    save_world,
    true_value,
)

# Frozen from tests/brute.py (plain enumeration over contexts and actions).
W1_TRUTH = 0.535
W1_CAB1_VAR10 = 0.016847500000000015
W1_CABDR1_VAR10 = 0.009613749999999999
W1_DM_BIAS = 0.0025000000000000577
W1P_CAB1_BIAS = -0.025227272727272765
W1P_CABDR1_BIAS = -0.0023295454545454453


def S(kind, param=None):
    if kind in ("cIPS", "SWITCH", "CAB", "CABDR"):
        return WeightScheme(kind, M=param)
    if kind == "SB":
        return WeightScheme(kind, tau=param)
    return WeightScheme(kind)


def scheme_params(kind):
    return {"cIPS": [0.4, 1.0, 3.0], "SWITCH": [0.4, 1.0, 3.0], "CAB": [0.4, 1.0, 3.0],
            "CABDR": [0.4, 1.0, 3.0], "SB": [0.0, 0.5, 1.0]}.get(kind, [None])


# --------------------------------------------------------------------------
# construction


def test_invariants_enforced():
    base = dict(p=[1.0], pi0=[[0.5, 0.5]], pi=[[1.0, 0.0]], delta=[[0, 0]],
                sigma2=[[0, 0]], delta_hat=[[0, 0]])
    EnumerableWorld(**base)
    with pytest.raises(InvalidWorld):
        EnumerableWorld(**{**base, "pi0": [[0.5, 0.6]]})
    with pytest.raises(InvalidWorld):
        EnumerableWorld(**{**base, "sigma2": [[-1.0, 0]]})
    with pytest.raises(InvalidWorld):
        EnumerableWorld(**{**base, "pi0_hat": [[1.0, 0.0]]})
    with pytest.raises(InvalidWorld):
        EnumerableWorld(**{**base, "pi": [[1.0, 0.0, 0.0]]})


def test_derived_fields(w1_perturbed):
    w = w1_perturbed
    assert np.allclose(w.zeta, 1 - w.pi0 / w.pi0_hat)
    assert np.allclose(w.Delta, w.delta_hat - w.delta)
    assert np.allclose(w.c, w.pi / w.pi0)
    assert np.allclose(w.c_hat, w.pi / w.pi0_hat)
    assert w.full_support


def test_support_flag_and_oracle_errors():
    w = EnumerableWorld(p=[1.0], pi0=[[1.0, 0.0]], pi=[[0.5, 0.5]], delta=[[1, 1]],
                        sigma2=[[0, 0]], delta_hat=[[0, 0]])
    assert not w.full_support
    with pytest.raises(SupportViolation):
        exact_bias(w, S("IPS"))
    with pytest.raises(SupportViolation):
        exact_variance_cab(w, 1.0, 5)
    assert true_value(w) == 1.0


def test_json_round_trip(tmp_path, w2):
    path = tmp_path / "w.json"
    save_world(w2, path)
    doc = json.loads(path.read_text())
    assert {"contexts", "actions", "pi0", "pi", "delta", "sigma2", "delta_hat"} <= set(doc)
    back = load_world(path)
    for f in ("p", "pi0", "pi0_hat", "pi", "delta", "sigma2", "delta_hat"):
        assert np.array_equal(getattr(back, f), getattr(w2, f))


# --------------------------------------------------------------------------
# ground truth and spec examples


def test_true_value_examples(w1):
    z = random_world(0).replace(delta=np.zeros((3, 3)))
    assert true_value(z) == 0.0
    det = EnumerableWorld(p=[0.3, 0.7], pi0=[[0.5, 0.5]] * 2, pi=[[1, 0], [0, 1]],
                          delta=[[1, 5], [5, 1]], sigma2=[[0, 0]] * 2, delta_hat=[[0, 0]] * 2)
    assert true_value(det) == 1.0
    assert true_value(w1) == pytest.approx(W1_TRUTH, abs=1e-15)


def test_frozen_w1_values(w1, w1_perturbed):
    assert exact_variance(w1, S("CAB", 1.0), 10) == pytest.approx(W1_CAB1_VAR10, rel=1e-12)
    assert exact_variance(w1, S("CABDR", 1.0), 10) == pytest.approx(W1_CABDR1_VAR10, rel=1e-12)
    assert exact_bias(w1, S("DM")) == pytest.approx(W1_DM_BIAS, rel=1e-12)
    assert exact_bias(w1_perturbed, S("CAB", 1.0)) == pytest.approx(W1P_CAB1_BIAS, rel=1e-12)
    assert exact_bias(w1_perturbed, S("CABDR", 1.0)) == pytest.approx(W1P_CABDR1_BIAS, rel=1e-12)
    # CAB carries the extra -zeta*delta term that CAB-DR avoids
    assert abs(W1P_CABDR1_BIAS) < abs(W1P_CAB1_BIAS)


@given(worlds(perturb=st.just(False)))
def test_ips_unbiased_with_logged_propensities(w):
    assert abs(exact_bias(w, S("IPS"))) <= 1e-12


@given(worlds())
def test_dm_bias_and_variance(w):
    n = 7
    assert exact_bias(w, S("DM")) == pytest.approx(
        float(w.p @ np.sum(w.pi * w.Delta, axis=1)), abs=1e-12)
    v = np.sum(w.pi * w.delta_hat, axis=1)
    assert exact_variance(w, S("DM"), n) == pytest.approx(
        float(w.p @ v**2 - (w.p @ v) ** 2) / n, abs=1e-12)


@given(worlds(perturb=st.just(False)))
def test_ips_variance_display(w):
    n = 3
    c, d = w.c, w.delta
    context = np.sum(w.pi * d, axis=1)
    vx = w.p @ context**2 - (w.p @ context) ** 2
    noise = w.p @ np.sum(w.pi * c * w.sigma2, axis=1)
    m1 = np.sum(w.pi0 * c * d, axis=1)
    m2 = np.sum(w.pi0 * (c * d) ** 2, axis=1)
    want = (vx + noise + w.p @ (m2 - m1**2)) / n
    assert exact_variance(w, S("IPS"), n) == pytest.approx(want, rel=1e-10, abs=1e-14)


@given(worlds())
def test_dr_unbiased_with_exact_reward_model(w):
    w = w.replace(delta_hat=w.delta)
    assert abs(exact_bias(w, S("DR"))) <= 1e-12


@given(worlds(), st.sampled_from(KINDS), st.integers(0, 2), st.integers(1, 50))
def test_theorems_match_enumeration(w, kind, j, n):
    params = scheme_params(kind)
    param = params[j % len(params)]
    b, v = brute.bias_and_variance(w, kind, n, **({"M": param} if kind in
                                   ("cIPS", "SWITCH", "CAB", "CABDR") else
                                   {"tau": param} if kind == "SB" else {}))
    assert exact_bias(w, S(kind, param)) == pytest.approx(b, abs=1e-12)
    assert exact_variance(w, S(kind, param), n) == pytest.approx(v, rel=1e-10, abs=1e-14)


@given(worlds(perturb=st.just(False)), st.sampled_from(["DR", "SB", "CAB", "CABDR", "SWITCH"]))
def test_weights_summing_to_one_are_unbiased(w, kind):
    w = w.replace(delta_hat=w.delta)
    param = 0.5 if kind == "SB" else 1.3
    if kind == "DR":
        param = None
    assert abs(exact_bias(w, S(kind, param))) <= 1e-12


# --------------------------------------------------------------------------
# clipped specializations


@given(worlds(), st.floats(0.05, 30.0), st.integers(1, 100))
def test_cab_specialization(w, M, n):
    assert exact_bias(w, S("CAB", M)) == pytest.approx(exact_bias_cab(w, M), abs=1e-12)
    assert exact_variance(w, S("CAB", M), n) == pytest.approx(
        exact_variance_cab(w, M, n), rel=1e-12, abs=1e-14)
    assert exact_bias(w, S("CABDR", M)) == pytest.approx(exact_bias_cabdr(w, M), abs=1e-12)
    assert exact_variance(w, S("CABDR", M), n) == pytest.approx(
        exact_variance_cabdr(w, M, n), rel=1e-12, abs=1e-14)


def test_boundary_in_le_branch(w1):
    # c_hat takes the values 1.8 and 0.2 in W1
    M = 1.8
    assert exact_bias_cab(w1, M) == pytest.approx(exact_bias(w1, S("CAB", M)), abs=1e-15)
    assert exact_bias_cab(w1, M) == pytest.approx(0.0, abs=1e-15)


@given(worlds(perturb=st.just(False)))
def test_large_M_is_unbiased(w):
    M = max_importance_weight(w)
    assert abs(exact_bias_cab(w, M)) <= 1e-12
    assert abs(exact_bias_cabdr(w, M)) <= 1e-12


@given(worlds())
def test_small_M_gives_dm_bias(w):
    dm = exact_bias(w, S("DM"))
    assert exact_bias_cab(w, 1e-12) == pytest.approx(dm, abs=1e-9)


@given(worlds(perturb=st.just(False)), st.floats(0.05, 20.0))
def test_cab_and_cabdr_bias_agree_with_logged_propensities(w, M):
    assert exact_bias_cab(w, M) == pytest.approx(exact_bias_cabdr(w, M), abs=1e-12)


def test_cabdr_unbiased_without_errors():
    w = random_world(4, perturb=False)
    w = w.replace(delta_hat=w.delta)
    for M in (0.1, 1.0, 10.0):
        assert abs(exact_bias_cabdr(w, M)) <= 1e-12


def test_monotone_in_M():
    # delta_hat overshoots everywhere, so clipping bias keeps one sign
    w = random_world(11, n_ctx=4, k=4, perturb=False)
    w = w.replace(delta_hat=w.delta + 0.4)
    grid = np.geomspace(0.05, max_importance_weight(w) * 1.5, 40)
    var = [exact_variance_cab(w, M, 10) for M in grid]
    bias = [abs(exact_bias_cab(w, M)) for M in grid]
    assert all(b2 <= b1 + 1e-15 for b1, b2 in zip(bias, bias[1:]))
    assert all(v2 >= v1 - 1e-15 for v1, v2 in zip(var, var[1:]))


def test_exact_mse(w2):
    s = S("CAB", 2.0)
    assert exact_mse(w2, s, 40) == pytest.approx(exact_bias(w2, s) ** 2 + exact_variance(w2, s, 40))


def test_n_validation(w1):
    with pytest.raises(ValueError):
        exact_variance(w1, S("IPS"), 0)
