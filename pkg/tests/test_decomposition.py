import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from logmeanrr.decomposition import (
    brute_force_marginal,
    conditional_rr,
    decompose,
    decompose_fit,
    deviation,
    deviation_multi,
    deviation_univariate,
    marginal_rr,
    weighted_avg_rr,
)
from logmeanrr.estimation import fit
from logmeanrr.exceptions import DomainError, InvalidParamsError
from logmeanrr.model import (
    INTERMEDIATE_BLOCK,
    RESPONSE_BLOCK,
    BlockStructure,
    LogMeanParams,
    build_design,
    constraints_from_independence,
    zero,
)
from logmeanrr.tables import marginal_table
from conftest import random_params


def names(prefix, k):
    return [f"{prefix}{i}" for i in range(k)]


def draw(seed, nv, nu, interactions=True, indep=None):
    rng = np.random.default_rng(seed)
    s = BlockStructure(names("Y", nv), names("Z", nu), "X")
    cons = None
    for stmt in [indep] if isinstance(indep, str) else indep or []:
        c = constraints_from_independence(stmt, build_design(s, interactions))
        cons = c if cons is None else cons | c
    _, params = random_params(rng, s, interactions, cons)
    return params[RESPONSE_BLOCK], params[INTERMEDIATE_BLOCK]


def subsets_of(py):
    resp = py.design.responses
    return [resp.subset_names(m) for m in range(1, 1 << resp.arity)]


# --- smoking --------------------------------------------------------------


@pytest.fixture(scope="module")
def smoking_reduced(smoking, smoking_design):
    return fit(smoking_design, smoking, zero(smoking_design, "Y", ["Z", "X"]))


def test_smoking_reduced(smoking_reduced, smoking):
    py = smoking_reduced.params[RESPONSE_BLOCK]
    pz = smoking_reduced.params[INTERMEDIATE_BLOCK]
    assert conditional_rr(py, "Y", "X") == pytest.approx(1.284, abs=0.002)
    lam = deviation_univariate(py, pz, "Y")
    assert math.exp(lam) == pytest.approx(1.065, abs=0.002)
    r = marginal_rr(py, pz, "Y")
    assert r.rr_marginal == pytest.approx(1.367, abs=0.002)
    oracle = brute_force_marginal(py, pz, "Y")
    assert r.log_rr_marginal == pytest.approx(oracle, abs=1e-12)
    # the empirical marginal relative risk is close to the model-implied one
    yx = marginal_table(smoking, ["Y", "X"])
    emp = (yx[{"Y": 1, "X": 1}] / 1011) / (yx[{"Y": 1, "X": 0}] / 668)
    assert r.rr_marginal == pytest.approx(emp, abs=0.01)


def test_smoking_fit_ses(smoking_reduced, smoking):
    (row,) = decompose_fit(smoking_reduced, smoking)
    assert row.se_log_deviation > 0 and row.se_log_marginal > 0
    assert decompose_fit(smoking_reduced)[0].se_log_marginal is None


# --- morphine ---------------------------------------------------------------


def test_morphine_values(morphine):
    py, pz = morphine[RESPONSE_BLOCK], morphine[INTERMEDIATE_BLOCK]
    expected = {
        ("R24",): (1.390, 1.345, 1.870),
        ("M24",): (2.992, 1.276, 3.818),
        ("R24", "M24"): (3.277, 1.383, 4.532),
    }
    for r in decompose(py, pz, over=["R4"]):
        c, dv, m = expected[r.subset]
        assert r.rr_conditional == pytest.approx(c, abs=0.005)
        assert r.deviation == pytest.approx(dv, abs=0.005)
        assert r.rr_marginal == pytest.approx(m, abs=0.01)
        assert r.over == ("R4",)


def test_morphine_over_all_equals_over_r4(morphine):
    # the response block does not depend on M4, so summing it out changes nothing
    py, pz = morphine[RESPONSE_BLOCK], morphine[INTERMEDIATE_BLOCK]
    for d in subsets_of(py):
        a = deviation_multi(py, pz, d, over=["R4"])
        b = deviation_multi(py, pz, d)
        assert a == pytest.approx(b, abs=1e-12)
        assert a == pytest.approx(brute_force_marginal(py, pz, d) - math.log(
            conditional_rr(py, d, "X")), abs=1e-12)


def test_over_must_cover_dependencies():
    py, pz = draw(5, 1, 2, interactions=False)
    with pytest.raises(DomainError):
        deviation_multi(py, pz, "Y0", over=["Z0"])


def test_multi_rejects_interactions():
    py, pz = draw(6, 1, 2, interactions=True)
    with pytest.raises(DomainError, match="interaction"):
        deviation_multi(py, pz, "Y0")


# --- closed forms versus the oracle ------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_univariate_identity(seed):
    py, pz = draw(seed, 1, 1)
    lhs = brute_force_marginal(py, pz, "Y0")
    rhs = math.log(conditional_rr(py, "Y0", "X")) + deviation_univariate(py, pz, "Y0")
    assert lhs == pytest.approx(rhs, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_multivariate_single_intermediate(seed, nv):
    py, pz = draw(seed, nv, 1)
    for d in subsets_of(py):
        lhs = brute_force_marginal(py, pz, d)
        rhs = math.log(conditional_rr(py, d, "X")) + deviation(py, pz, d)
        assert lhs == pytest.approx(rhs, abs=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 3))
def test_multi_intermediate_identity(seed, nv, nu):
    py, pz = draw(seed, nv, nu, interactions=False)
    for d in subsets_of(py):
        lhs = brute_force_marginal(py, pz, d)
        rhs = math.log(conditional_rr(py, d, "X")) + deviation_multi(py, pz, d)
        assert lhs == pytest.approx(rhs, abs=1e-10)
        wt = weighted_avg_rr(py, pz, d, 1)
        wc = weighted_avg_rr(py, pz, d, 0)
        assert wt / wc == pytest.approx(math.exp(deviation_multi(py, pz, d)), rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_single_intermediate_specialization(seed):
    py, pz = draw(seed, 2, 1, interactions=False)
    for d in subsets_of(py):
        assert deviation_multi(py, pz, d) == pytest.approx(
            deviation_univariate(py, pz, d), abs=1e-12
        )


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_weighted_ratio_with_interactions(seed):
    # the weighted-average representation also holds with a Z-X interaction
    py, pz = draw(seed, 1, 1)
    r = marginal_rr(py, pz, "Y0")
    assert r.weighted_rr_treated / r.weighted_rr_control == pytest.approx(r.deviation, rel=1e-12)
    assert r.rr_marginal == pytest.approx(r.rr_conditional * r.deviation, rel=1e-12)


def test_unit_risks_give_unit_average():
    py, pz = draw(11, 2, 2, interactions=False)
    v = py.values.copy()
    d = py.design
    for j, (dm, t) in enumerate(d.pairs):
        if t & d.covariates.mask(["Z0", "Z1"]):
            v[j] = 0.0
    flat = LogMeanParams(d, v)
    for x in (0, 1):
        assert weighted_avg_rr(flat, pz, "Y0", x) == pytest.approx(1.0, abs=1e-15)


def test_no_direct_effect_oracle_equals_lambda():
    py, pz = draw(12, 1, 1)
    d = py.design
    v = py.values.copy()
    v[d.index(1, d.covariates.mask("X"))] = 0.0
    v[d.index(1, d.covariates.mask(["Z0", "X"]))] = 0.0
    p2 = LogMeanParams(d, v)
    assert brute_force_marginal(p2, pz, "Y0") == pytest.approx(
        deviation_univariate(p2, pz, "Y0"), abs=1e-12
    )


def test_zero_lambda_without_intermediate_effects():
    for seed in range(10):
        py, pz = draw(seed, 2, 2, interactions=False,
                      indep=["{Y0,Y1} _||_ Z0 | {Z1,X}", "{Y0,Y1} _||_ Z1 | {Z0,X}"])
        for sub in subsets_of(py):
            assert deviation_multi(py, pz, sub) == 0.0


def test_partial_independence_asymmetry():
    found = False
    for seed in range(10):
        py, pz = draw(seed, 2, 1, indep="{Y0} _||_ Z0 | {X}")
        assert abs(deviation(py, pz, "Y0")) <= 1e-12
        if abs(deviation(py, pz, "Y1")) > 1e-3:
            found = True
    assert found


def test_invalid_intermediate_probability():
    zd = build_design(BlockStructure("Y", "Z", "X")).block(INTERMEDIATE_BLOCK)
    yd = build_design(BlockStructure("Y", "Z", "X")).block(RESPONSE_BLOCK)
    pz = LogMeanParams(zd, [-0.1, 0.3])
    py = LogMeanParams(yd, [-1.0, 0.2, 0.1, 0.0])
    with pytest.raises(InvalidParamsError):
        deviation_univariate(py, pz, "Y")


def test_conditional_rr_levels():
    py, _ = draw(3, 1, 1)
    base = conditional_rr(py, "Y0", "Z0")
    at1 = conditional_rr(py, "Y0", "Z0", at={"X": 1})
    assert at1 == pytest.approx(base * math.exp(py["Y0", ("Z0", "X")]), rel=1e-15)
    d = py.design
    v = py.values.copy()
    v[d.index(1, d.covariates.mask("Z0"))] = 0.0
    v[d.index(1, d.covariates.mask(["Z0", "X"]))] = 0.0
    assert conditional_rr(LogMeanParams(d, v), "Y0", "Z0") == 1.0


def test_decompose_filters():
    py, pz = draw(4, 3, 1)
    assert len(decompose(py, pz)) == 7
    assert [r.subset for r in decompose(py, pz, singletons_only=True)] == [
        ("Y0",), ("Y1",), ("Y2",)
    ]
    assert [r.subset for r in decompose(py, pz, subsets=[["Y2", "Y0"]])] == [("Y0", "Y2")]


def test_without_intermediates():
    d = build_design(BlockStructure("Y", (), "X")).block(RESPONSE_BLOCK)
    p = LogMeanParams(d, [-1.0, 0.4])
    r = marginal_rr(p, None, "Y")
    assert r.deviation == 1.0 and r.rr_marginal == pytest.approx(math.exp(0.4))
    assert brute_force_marginal(p, None, "Y") == pytest.approx(0.4, abs=1e-14)
