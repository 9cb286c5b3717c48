import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from krompc.dictionary import build_dictionary, lift
from krompc.edmd import (
    EDMD,
    KoopmanModel,
    OnlineEDMD,
    SnapshotSet,
    accumulator_from_snapshots,
    edmd_fit,
    online_update,
    refit,
    weight_from_fraction,
)


def normal_equations(Z, Zt, d):
    """Independent oracle: (Psi_Zt Psi_Z^T)(Psi_Z Psi_Z^T)^+."""
    PZ, PZt = lift(d, Z), lift(d, Zt)
    return (PZt @ PZ.T) @ np.linalg.pinv(PZ @ PZ.T)


def random_set(rng, q, m):
    Z = rng.uniform(-1, 1, (q, m))
    Zt = np.tanh(Z) + 0.1 * Z**2
    return SnapshotSet(Z, Zt, 0.5, 0.0)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_fit_matches_normal_equations(q, deg, seed):
    rng = np.random.default_rng(seed)
    d = build_dictionary(q, deg)
    m = int(rng.integers(d.size, 5 * d.size + 1))
    data = random_set(rng, q, m)
    U = edmd_fit(data, d).U_transpose
    np.testing.assert_allclose(U, normal_equations(data.Z, data.Ztilde, d), atol=1e-8)


def test_exact_on_linear_observables():
    rng = np.random.default_rng(0)
    M = np.array([[0.9, 0.2], [-0.1, 0.7]])
    Z = rng.normal(size=(2, 30))
    model = edmd_fit(SnapshotSet(Z, M @ Z, 1.0, 0.0), build_dictionary(2, 2))
    z = np.array([0.3, -0.4])
    np.testing.assert_allclose(model.predict(z), M @ z, atol=1e-10)


def test_identity_dynamics_gives_identity():
    Z = np.random.default_rng(1).normal(size=(2, 20))
    model = edmd_fit(SnapshotSet(Z, Z, 1.0, 0.0), build_dictionary(2, 2))
    np.testing.assert_allclose(model.U_transpose, np.eye(6), atol=1e-9)


def test_underdetermined_minimum_norm():
    """With m < k the fit interpolates the data and has minimum norm."""
    rng = np.random.default_rng(2)
    d = build_dictionary(2, 3)
    data = random_set(rng, 2, 4)
    U = edmd_fit(data, d).U_transpose
    PZ, PZt = lift(d, data.Z), lift(d, data.Ztilde)
    np.testing.assert_allclose(U @ PZ, PZt, atol=1e-9)
    # rows of a minimum-norm solution lie in the span of the data
    P = PZ @ np.linalg.pinv(PZ)
    np.testing.assert_allclose(U @ P, U, atol=1e-9)


def test_snapshot_validation():
    with pytest.raises(ValueError):
        SnapshotSet(np.ones((2, 3)), np.ones((2, 4)), 1.0, 0.0)
    with pytest.raises(ValueError):
        SnapshotSet(np.ones((2, 3)), np.ones((2, 3)), 0.0, 0.0)
    with pytest.raises(ValueError):
        SnapshotSet(np.full((2, 3), np.inf), np.ones((2, 3)), 1.0, 0.0)
    with pytest.raises(ValueError):
        edmd_fit(SnapshotSet(np.ones((2, 3)), np.ones((2, 3)), 1.0, 0.0), build_dictionary(3, 1))


def test_weight_formula():
    assert weight_from_fraction(50, 0.025) == 1
    assert weight_from_fraction(1000, 0.025) == 25
    assert weight_from_fraction(4000, 0.5) == 4000
    with pytest.raises(ValueError):
        weight_from_fraction(10, 1.0)


@given(st.integers(1, 10**6), st.floats(0.001, 0.9))
def test_weight_fraction_property(m, eps):
    q = weight_from_fraction(m, eps)
    assert q >= 1
    if q > 1:
        # the new sample's share q / (m + q) does not exceed epsilon
        assert q / (m + q) <= eps + 1e-12


def test_streaming_equals_batch_at_every_prefix():
    rng = np.random.default_rng(3)
    d = build_dictionary(2, 2)
    data = random_set(rng, 2, 120)
    acc = accumulator_from_snapshots(data.subset([0]), d)
    for i in range(1, 120):
        acc = online_update(acc, data.Z[:, i], data.Ztilde[:, i])
        np.testing.assert_allclose(refit(acc).U_transpose, edmd_fit(data.subset(range(i + 1)), d).U_transpose,
                                   atol=1e-8)
    assert acc.m == 120


def test_weighted_update_equals_duplicated_pairs():
    """Weight q acts like q copies of the pair in a batch fit."""
    rng = np.random.default_rng(4)
    d = build_dictionary(2, 2)
    data = random_set(rng, 2, 30)
    z, zt = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
    acc = online_update(accumulator_from_snapshots(data, d), z, zt, 7)
    dup = SnapshotSet(np.hstack([data.Z, np.tile(z[:, None], 7)]), np.hstack([data.Ztilde, np.tile(zt[:, None], 7)]),
                      0.5, 0.0)
    np.testing.assert_allclose(refit(acc).U_transpose, edmd_fit(dup, d).U_transpose, atol=1e-8)
    assert acc.m == 37
    np.testing.assert_array_equal(acc.G, acc.G.T)


def test_update_rejects_bad_weight():
    d = build_dictionary(1, 1)
    acc = accumulator_from_snapshots(SnapshotSet([[1.0, 2.0]], [[2.0, 3.0]], 1.0, 0.0), d)
    with pytest.raises(ValueError):
        online_update(acc, [1.0], [1.0], 0)
    with pytest.raises(ValueError):
        online_update(acc, [1.0, 2.0], [1.0], 1)


def test_model_json_roundtrip():
    d = build_dictionary(2, 2)
    model = edmd_fit(random_set(np.random.default_rng(5), 2, 20), d)
    back = KoopmanModel.from_dict(model.to_dict())
    np.testing.assert_array_equal(back.U_transpose, model.U_transpose)
    assert back.dictionary == d and back.sample_count == 20 and back.lag_time == 0.5


def test_model_rejects_wrong_shape():
    with pytest.raises(ValueError):
        KoopmanModel(build_dictionary(2, 1), 1.0, 0.0, np.eye(4))


def test_estimator_fit_predict():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(40, 2))
    M = np.array([[0.5, 0.1], [0.0, 0.8]])
    est = EDMD(degree=2).fit(X, X @ M.T)
    np.testing.assert_allclose(est.predict(X[:3]), X[:3] @ M.T, atol=1e-9)
    assert est.transform(X).shape == (40, 6)
    assert est.score(X, X @ M.T) > 0.999999


def test_estimator_clone_and_params():
    est = EDMD(degree=3, rtol=1e-8, lag_time=0.5, control_value=1.0)
    params = est.get_params()
    assert params == {"degree": 3, "rtol": 1e-8, "lag_time": 0.5, "control_value": 1.0}
    c = clone(est)
    assert c.get_params() == params
    c.set_params(degree=1)
    assert c.degree == 1 and est.degree == 3
    o = OnlineEDMD(epsilon=0.1)
    assert clone(o).get_params()["epsilon"] == 0.1


def test_online_estimator_partial_fit_matches_batch():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(60, 2))
    Y = np.sin(X)
    online = OnlineEDMD(degree=2).fit(X[:20], Y[:20])
    for i in range(20, 60, 10):
        online.partial_fit(X[i:i + 10], Y[i:i + 10])
    batch = EDMD(degree=2).fit(X, Y)
    np.testing.assert_allclose(online.U_transpose_, batch.U_transpose_, atol=1e-8)


def test_online_estimator_epsilon_weights():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(100, 1))
    est = OnlineEDMD(degree=1, epsilon=0.5).fit(X, X)
    est.partial_fit(X[:1], X[:1])
    assert est.accumulator_.m == 200


def test_estimator_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        EDMD().fit(np.ones((5, 2)), np.ones((5, 3)))
