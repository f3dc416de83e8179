import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from emokd.core import (
    BINARY,
    EKMAN6,
    MIKELS8,
    LabelSpace,
    argmax_label,
    one_hot,
    softened_softmax,
)
from emokd.errors import InvalidInput, InvalidTemperature, OutOfVocabulary

logit_vectors = arrays(np.float64, st.integers(2, 10), elements=st.floats(-50, 50))
temperatures = st.floats(0.1, 100)


def test_uniform_logits_give_uniform_distribution():
    np.testing.assert_allclose(softened_softmax([0, 0, 0, 0], 1.0), [0.25] * 4)


def test_two_class_scalar_case():
    # exp(ln 2) / (exp(ln 2) + exp(0)) = 2 / 3
    np.testing.assert_allclose(softened_softmax([math.log(2), 0.0], 1.0), [2 / 3, 1 / 3], rtol=1e-15)


def test_temperature_divides_logits():
    np.testing.assert_array_equal(softened_softmax([6.0, 2.0], 2.0), softened_softmax([3.0, 1.0], 1.0))


@pytest.mark.parametrize("tau", [0.0, -1.0, float("nan"), float("inf")])
def test_bad_temperature(tau):
    with pytest.raises(InvalidTemperature):
        softened_softmax([1.0, 2.0], tau)


def test_non_finite_logits():
    with pytest.raises(InvalidInput):
        softened_softmax([1.0, float("inf")], 1.0)


def test_large_logits_do_not_overflow():
    p = softened_softmax([1000.0, 999.0], 1.0)
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(), 1.0)


@settings(max_examples=200, deadline=None)
@given(logit_vectors, temperatures)
def test_softmax_is_a_distribution(z, tau):
    p = softened_softmax(z, tau)
    assert abs(p.sum() - 1.0) < 1e-6
    assert np.all(p >= 0)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(2, 10), elements=st.floats(-5, 5)), st.floats(0.1, 10))
def test_softmax_strictly_positive_on_moderate_logits(z, tau):
    assert np.all(softened_softmax(z, tau) > 0)


@settings(max_examples=200, deadline=None)
@given(logit_vectors, temperatures)
def test_temperature_scaling_identity(z, tau):
    np.testing.assert_allclose(softened_softmax(z, tau), softened_softmax(z / tau, 1.0), atol=1e-12, rtol=0)


@settings(max_examples=200, deadline=None)
@given(logit_vectors, temperatures, st.floats(-100, 100))
def test_shift_invariance(z, tau, c):
    np.testing.assert_allclose(softened_softmax(z + c, tau), softened_softmax(z, tau), atol=1e-9, rtol=0)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-20, 20)), temperatures)
def test_argmax_invariant_under_temperature(z, tau):
    # exact ties can split differently once divided; compare against the argmax of z itself
    if len(set(np.round(z, 9))) < len(z):
        return
    assert argmax_label(softened_softmax(z, tau), EKMAN6) == EKMAN6.labels[int(np.argmax(z))]


def test_one_hot_awe():
    v = one_hot("awe", MIKELS8)
    assert v.hot_index == 2
    np.testing.assert_array_equal(v.values, [0, 0, 1, 0, 0, 0, 0, 0])


def test_one_hot_binary_positive():
    np.testing.assert_array_equal(one_hot("positive", BINARY).values, [1, 0])


def test_joy_is_not_mikels():
    with pytest.raises(OutOfVocabulary):
        one_hot("joy", MIKELS8)


@pytest.mark.parametrize("space", [MIKELS8, EKMAN6, BINARY], ids=lambda s: s.name)
def test_one_hot_then_argmax_is_identity(space):
    for label in space.labels:
        assert argmax_label(one_hot(label, space).values, space) == label


def test_argmax_examples():
    space = LabelSpace("three", ("a", "b", "c"))
    assert argmax_label([0.1, 0.7, 0.2], space) == "b"
    assert argmax_label([0.5, 0.5], BINARY) == "positive"


def test_label_space_orders():
    assert MIKELS8.labels == ("amusement", "anger", "awe", "contentment", "disgust", "excitement", "fear", "sadness")
    assert EKMAN6.labels == ("anger", "surprise", "disgust", "joy", "fear", "sadness")
    assert BINARY.labels == ("positive", "negative")


@pytest.mark.parametrize("labels", [("a",), ("a", "a"), ("a", "B"), ("a", "")])
def test_label_space_invariants(labels):
    with pytest.raises(InvalidInput):
        LabelSpace("bad", labels)
