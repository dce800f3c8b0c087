import numpy as np
import pytest

from helpers import central_difference, max_relative_error
from stance_threads import crf, maxent
from stance_threads.errors import DimensionMismatch, ZeroCount
from stance_threads.maxent import MaxEntModel
from stance_threads.thread_model import StanceLabel

PHEME_COUNTS = (910, 344, 358, 2907)


def test_predict_proba():
    m = MaxEntModel(np.zeros((4, 3)), np.zeros(4))
    assert np.allclose(maxent.predict_proba(np.ones(3), m), 0.25)
    rng = np.random.default_rng(0)
    m = MaxEntModel(rng.normal(size=(4, 3)), rng.normal(size=4))
    x = rng.normal(size=(5, 3))
    p = maxent.predict_proba(x, m)
    assert np.allclose(p.sum(axis=1), 1, atol=1e-9)
    shifted = MaxEntModel(m.weights, m.bias + 7.5)
    assert np.allclose(maxent.predict_proba(x, shifted), p)
    with pytest.raises(DimensionMismatch):
        maxent.predict_proba(np.ones(2), m)


def test_category_weights():
    w = maxent.category_weights(PHEME_COUNTS)
    assert w[1] == pytest.approx(4519 / (4 * 344))
    assert round(w[1], 4) == 3.2842
    assert np.allclose(maxent.category_weights([5, 5, 5, 5]), 1.0)
    assert float(w @ np.array(PHEME_COUNTS)) == pytest.approx(4519)
    assert np.allclose(maxent.category_weights(dict(zip(StanceLabel, PHEME_COUNTS))), w)
    with pytest.raises(ZeroCount):
        maxent.category_weights([3, 0, 1, 1])


@pytest.mark.parametrize("seed", range(20))
def test_gradient(seed):
    rng = np.random.default_rng(seed)
    n, d = 12, 4
    X, y = rng.normal(size=(n, d)), rng.integers(0, 4, n)
    sw = rng.uniform(0.2, 3.0, 4)[y]
    theta = rng.normal(size=4 * d + 4)
    _, grad = maxent.nll_and_gradient(theta, X, y, sw, 0.8)
    numeric = central_difference(lambda t: maxent.nll_and_gradient(t, X, y, sw, 0.8)[0], theta)
    assert max_relative_error(grad, numeric) < 1e-6


def separable(rng, n=80, d=4):
    y = rng.integers(0, 4, n)
    X = 3 * np.eye(d)[y] + rng.normal(0, 0.2, (n, d))
    return X, y


def test_separable_data_is_fit():
    X, y = separable(np.random.default_rng(0))
    m = maxent.train(X, y, l2=0.01)
    assert np.all(maxent.predict(X, m) == y)


def test_large_l2():
    X, y = separable(np.random.default_rng(1))
    m = maxent.train(X, y, l2=1e6)
    assert np.linalg.norm(m.weights) < 1e-3


def test_convexity_different_starts():
    rng = np.random.default_rng(2)
    X, y = rng.normal(size=(60, 3)), rng.integers(0, 4, 60)
    w = maxent.category_weights(np.bincount(y, minlength=4))
    a = maxent.train(X, y, w, l2=0.5)
    b = maxent.train(X, y, w, l2=0.5, init=rng.normal(0, 3, 16))
    assert maxent.objective_value(a, X, y, w, 0.5) == pytest.approx(maxent.objective_value(b, X, y, w, 0.5), abs=1e-6)


def test_json_roundtrip():
    m = maxent.train(*separable(np.random.default_rng(3)), feature_layout=[{"name": "f"}])
    again = MaxEntModel.from_json(m.to_json())
    assert np.array_equal(again.weights, m.weights) and again.feature_layout == m.feature_layout


def test_crf_with_zero_transition_matches_maxent():
    rng = np.random.default_rng(4)
    W, b = rng.normal(size=(4, 3)), rng.normal(size=4)
    me = MaxEntModel(W, b)
    model = crf.CrfModel(W, b, np.zeros((4, 4)))
    X = rng.normal(size=(6, 3))
    _, marg, _ = crf.chain_infer(crf.node_log_potentials(X, model), model.transition)
    assert np.allclose(marg, maxent.predict_proba(X, me), atol=1e-12)
    _, tmarg, _ = crf.tree_infer(crf.node_log_potentials(X, model), [-1, 0, 0, 1, 1, 2], model.transition)
    assert np.allclose(tmarg, maxent.predict_proba(X, me), atol=1e-12)
    assert np.array_equal(crf.chain_decode(crf.node_log_potentials(X, model), model.transition),
                          maxent.predict(X, me))
