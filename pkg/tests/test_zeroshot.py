import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import unit_rows
from stata.zeroshot import accuracy, predicted_classes, softmax_rows, zero_shot_predict


def test_single_class_is_certain(rng):
    f = unit_rows(rng, 5, 4)
    t = unit_rows(rng, 1, 4)
    np.testing.assert_array_equal(zero_shot_predict(f, t), np.ones((5, 1)))


def test_tiny_temperature_is_uniform(rng):
    f = unit_rows(rng, 8, 6)
    t = unit_rows(rng, 5, 6)
    out = zero_shot_predict(f, t, tau=1e-12)
    assert np.max(np.abs(out - 0.2)) < 1e-9


def test_two_class_hand_value():
    out = zero_shot_predict(np.array([[1.0, 0.0]]), np.array([[1.0, 0.0], [0.0, 1.0]]), tau=1.0)
    # e / (1 + e) and 1 / (1 + e)
    np.testing.assert_allclose(out[0], [0.7310585786300049, 0.2689414213699951], rtol=1e-14)


def test_matches_extended_precision(rng):
    f = unit_rows(rng, 4, 5)
    t = unit_rows(rng, 3, 5)
    out = zero_shot_predict(f, t, tau=100.0)
    mpmath.mp.dps = 40
    for i in range(4):
        logits = [100 * mpmath.fsum(mpmath.mpf(float(a)) * mpmath.mpf(float(b)) for a, b in zip(f[i], t[k]))
                  for k in range(3)]
        z = mpmath.fsum(mpmath.exp(v) for v in logits)
        ref = [float(mpmath.exp(v) / z) for v in logits]
        np.testing.assert_allclose(out[i], ref, rtol=1e-11, atol=1e-300)


def test_huge_logits_do_not_overflow():
    out = softmax_rows(np.array([[1e4, 0.0, -1e4]]))
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [[1.0, 0.0, 0.0]])


@pytest.mark.parametrize("tau", [0.0, -1.0, math.inf, math.nan])
def test_bad_tau(tau):
    with pytest.raises(ValueError):
        zero_shot_predict(np.eye(2), np.eye(2), tau=tau)


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        zero_shot_predict(np.eye(2), np.eye(3))


@given(st.integers(1, 12), st.integers(1, 7), st.integers(1, 9), st.floats(1e-3, 500.0), st.integers(0, 2**31))
def test_rows_on_simplex(n, k, d, tau, seed):
    r = np.random.default_rng(seed)
    out = zero_shot_predict(unit_rows(r, n, d), unit_rows(r, k, d), tau)
    assert out.shape == (n, k)
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_accuracy_examples():
    assert accuracy(np.array([[0.9, 0.1], [0.2, 0.8]]), [0, 1]) == 1.0
    assert accuracy(np.array([[0.5, 0.5]]), [1]) == 0.0
    assert predicted_classes(np.array([[0.3, 0.3, 0.3]]))[0] == 0


def test_accuracy_counts():
    rng = np.random.default_rng(3)
    labels = rng.integers(0, 4, size=1000)
    pred = np.zeros((1000, 4))
    hit = np.zeros(1000, dtype=bool)
    hit[rng.choice(1000, 652, replace=False)] = True
    cls = np.where(hit, labels, (labels + 1) % 4)
    pred[np.arange(1000), cls] = 1.0
    assert accuracy(pred, labels) == pytest.approx(0.652, abs=1e-15)


def test_accuracy_errors():
    with pytest.raises(ValueError):
        accuracy(np.ones((2, 2)), [0])
    with pytest.raises(ValueError):
        accuracy(np.ones((0, 2)), np.array([], dtype=int))
