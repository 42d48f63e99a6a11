import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from logmeanrr.exceptions import (
    CapacityError,
    IncoherentMarginsError,
    InvalidDistributionError,
    SchemaError,
)
from logmeanrr.subsets import (
    MarginVector,
    VarSet,
    enumerate_subsets,
    moebius_invert,
    submasks,
    zeta_transform,
)


def naive_zeta(p):
    n = len(p)
    return np.array([sum(p[c] for c in range(n) if c & b == b) for b in range(n)])


def naive_moebius(pi):
    n = len(pi)
    return np.array([
        sum((-1) ** bin(d & ~b).count("1") * pi[d] for d in range(n) if d & b == b)
        for b in range(n)
    ])


def test_enumerate_small():
    assert enumerate_subsets(VarSet("a")) == [0, 1]
    assert enumerate_subsets(VarSet(["a", "b"])) == [0, 1, 2, 3]
    assert len(enumerate_subsets(VarSet("abc"))) == 8


def test_enumerate_capacity():
    with pytest.raises(CapacityError):
        enumerate_subsets(17)
    with pytest.raises(CapacityError):
        VarSet(f"v{i}" for i in range(17))


def test_varset_masks():
    v = VarSet(["R24", "M24"])
    assert v.mask(["M24"]) == 2
    assert v.mask(["M24", "R24"]) == 3
    assert v.label(3) == "{R24,M24}"
    assert v.subset_names(2) == ("M24",)
    with pytest.raises(SchemaError):
        VarSet(["a", "a"])


def test_submasks_order():
    assert submasks(0b101) == [0, 1, 4, 5]


def test_zeta_uniform():
    pi = zeta_transform([0.25] * 4)
    assert pi.values.tolist() == [1.0, 0.5, 0.5, 0.25]


def test_zeta_point_mass():
    assert zeta_transform([0, 0, 0, 1]).values.tolist() == [1.0] * 4


def test_zeta_hand_example():
    # p(00)=.3, p(10)=.2, p(01)=.1, p(11)=.4
    pi = zeta_transform([0.3, 0.2, 0.1, 0.4], ["a", "b"])
    assert pi["a"] == pytest.approx(0.6, abs=1e-15)
    assert pi["b"] == pytest.approx(0.5, abs=1e-15)
    assert pi[["a", "b"]] == pytest.approx(0.4, abs=1e-15)


def test_zeta_rejects_invalid():
    with pytest.raises(InvalidDistributionError):
        zeta_transform([0.5, 0.6, -0.1, 0.0])
    with pytest.raises(InvalidDistributionError):
        zeta_transform([0.5, 0.5, 0.5, 0.5])


def test_moebius_hand_example():
    cells = moebius_invert([1, 0.6, 0.5, 0.4])
    np.testing.assert_allclose(cells, [0.3, 0.2, 0.1, 0.4], atol=1e-15)


def test_moebius_degenerate():
    np.testing.assert_array_equal(moebius_invert([1.0] * 8), [0] * 7 + [1])


def test_moebius_incoherent():
    with pytest.raises(IncoherentMarginsError):
        moebius_invert([1, 0.2, 0.2, 0.5])  # pi_12 > pi_1
    with pytest.raises(IncoherentMarginsError):
        MarginVector(VarSet("ab"), [1, 1.2, 0.5, 0.4])


def test_moebius_clamps_rounding_noise():
    cells = moebius_invert([1, 0.5, 0.5, 0.5 + 1e-12])
    assert cells.min() == 0.0


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_fast_transforms_match_naive(k):
    rng = np.random.default_rng(k)
    p = rng.dirichlet(np.ones(1 << k))
    pi = zeta_transform(p).values
    np.testing.assert_allclose(pi, naive_zeta(p), atol=1e-15)
    np.testing.assert_allclose(moebius_invert(pi), naive_moebius(pi), atol=1e-15)


def test_round_trip_100_random():
    rng = np.random.default_rng(0)
    for _ in range(100):
        k = int(rng.integers(1, 6))
        p = rng.dirichlet(np.ones(1 << k))
        back = moebius_invert(zeta_transform(p))
        assert np.max(np.abs(back - p)) <= 1e-14


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_zeta_monotone(k, seed):
    p = np.random.default_rng(seed).dirichlet(np.ones(1 << k))
    pi = zeta_transform(p).values
    for b, b2 in itertools.product(range(1 << k), repeat=2):
        if b & b2 == b:
            assert pi[b] >= pi[b2] - 1e-15


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_transforms_linear(k, seed, w):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(1 << k), size=2)
    mix = w * p + (1 - w) * q
    mix = mix / mix.sum()
    lhs = zeta_transform(mix).values
    rhs = w * zeta_transform(p).values + (1 - w) * zeta_transform(q).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-14)
    np.testing.assert_allclose(moebius_invert(lhs), mix, atol=1e-14)
