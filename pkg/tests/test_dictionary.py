import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from krompc.dictionary import Dictionary, MonomialLifting, build_dictionary, lift, monomial_exponents, project


def brute_force_exponents(q, d):
    """All exponent tuples with total degree <= d, by filtering the full grid."""
    return {e for e in itertools.product(range(d + 1), repeat=q) if sum(e) <= d}


@pytest.mark.parametrize("q, d, k", [(4, 3, 35), (8, 2, 45), (4, 1, 5), (1, 0, 1), (2, 2, 6)])
def test_dictionary_sizes(q, d, k):
    assert build_dictionary(q, d).size == k


@given(st.integers(1, 5), st.integers(0, 4))
def test_exponents_match_brute_force(q, d):
    exps = monomial_exponents(q, d)
    assert len(exps) == len(set(exps)) == comb(q + d, d)
    assert set(exps) == brute_force_exponents(q, d)
    degrees = [sum(e) for e in exps]
    assert degrees == sorted(degrees)


def test_ordering_two_variables():
    assert monomial_exponents(2, 2) == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))


def test_lift_values():
    d = build_dictionary(2, 2)
    np.testing.assert_allclose(lift(d, [2.0, 3.0]), [1, 2, 3, 4, 6, 9])


@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_projection_recovers_observation(q, d, seed):
    dic = build_dictionary(q, d)
    z = np.random.default_rng(seed).uniform(-3, 3, q)
    np.testing.assert_array_equal(project(dic, lift(dic, z)), z)
    assert lift(dic, z)[0] == 1.0


@given(st.integers(1, 3), st.integers(0, 3), st.integers(0, 2**31 - 1))
def test_matrix_lift_is_columnwise(q, d, seed):
    dic = build_dictionary(q, d)
    Z = np.random.default_rng(seed).normal(size=(q, 5))
    L = lift(dic, Z)
    assert L.shape == (dic.size, 5)
    for j in range(5):
        np.testing.assert_allclose(L[:, j], lift(dic, Z[:, j]))


def test_lift_rejects_bad_input():
    d = build_dictionary(2, 2)
    with pytest.raises(ValueError):
        lift(d, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        lift(d, [1.0, np.nan])


def test_project_degree_zero_fails():
    with pytest.raises(ValueError):
        project(build_dictionary(3, 0), [1.0])


def test_invalid_construction():
    with pytest.raises(ValueError):
        Dictionary(0, 2)
    with pytest.raises(ValueError):
        Dictionary(2, -1)
    with pytest.raises(ValueError):
        Dictionary(2, 2, ((1, 0), (0, 0), (0, 1)))


def test_custom_thinned_dictionary_roundtrip():
    d = Dictionary(2, 2, ((0, 0), (1, 0), (0, 1), (1, 1)))
    assert d.size == 4
    np.testing.assert_allclose(lift(d, [2.0, 5.0]), [1, 2, 5, 10])
    assert Dictionary.from_dict(d.to_dict()) == d


def test_transformer_api():
    X = np.random.default_rng(0).normal(size=(10, 3))
    t = MonomialLifting(degree=2)
    Y = t.fit_transform(X)
    assert Y.shape == (10, 10)
    np.testing.assert_allclose(t.inverse_transform(Y), X)
    names = t.get_feature_names_out(["a", "b", "c"])
    assert list(names[:4]) == ["1", "a", "b", "c"]
    assert names[4] == "a^2"
    c = clone(t)
    assert c.get_params() == {"degree": 2}
    assert not hasattr(c, "dictionary_")
