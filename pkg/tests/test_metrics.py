import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from routecap.exceptions import ContractError, DimensionError
from routecap.metrics import (acc_k, confusion_matrix, f1_binary, f1_multiclass, multilabel_eval,
                              precision_recall)


def test_acc_examples():
    assert acc_k([0, 1, 2], [0, 1, 2], 3) == 1.0
    assert acc_k([0, 1, 2], [0, 1, 3], 4) == pytest.approx(2 / 3)
    assert acc_k([0, 0], [1, 1], 2) == 0.0


def test_acc_guards():
    with pytest.raises(DimensionError):
        acc_k([0, 1], [0], 2)
    with pytest.raises(ContractError):
        acc_k([], [], 2)
    with pytest.raises(ContractError):
        acc_k([0, 5], [0, 1], 2)


def test_f1_examples():
    assert f1_binary([1, 0, 1], [1, 0, 1]) == 1.0
    # TP=1, FP=1, FN=1
    assert precision_recall([1, 1, 0], [1, 0, 1]) == (0.5, 0.5)
    assert f1_binary([1, 1, 0], [1, 0, 1]) == 0.5
    assert f1_binary([0, 0, 0], [0, 0, 0]) == 0.0


def test_f1_multiclass_averages():
    pred, true = [0, 0, 1, 2, 2, 2, 2], [0, 1, 1, 2, 2, 0, 2]
    per = [1 / 2, 2 / 3, 6 / 7]  # F1 for classes 0, 1, 2 by hand; supports 2, 2, 3
    assert f1_multiclass(pred, true, 3, "macro") == pytest.approx(np.mean(per))
    assert f1_multiclass(pred, true, 3, "weighted") == pytest.approx(np.dot(per, [2, 2, 3]) / 7)
    with pytest.raises(ContractError):
        f1_multiclass(pred, true, 3, "micro-ish")


def test_confusion_matrix():
    assert confusion_matrix([0, 1, 1], [0, 0, 1], 2) == [[1, 1], [0, 1]]


def test_multilabel_examples():
    m = np.array([[1, 0], [0, 1], [1, 1]])
    assert multilabel_eval(m, m) == {"accuracy": [1.0, 1.0], "f1": [1.0, 1.0]}
    flipped = m.copy()
    flipped[:, 1] = 1 - flipped[:, 1]
    out = multilabel_eval(flipped, m)
    assert out["accuracy"] == [1.0, 0.0]
    one_err = m.copy()
    one_err[0, 0] = 0
    assert multilabel_eval(one_err, m)["accuracy"] == pytest.approx([2 / 3, 1.0])
    with pytest.raises(DimensionError):
        multilabel_eval(np.zeros(3), np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_f1_matches_hand_formula(pairs):
    pred, true = map(np.array, zip(*pairs))
    p, r = precision_recall(pred, true)
    expected = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    assert f1_binary(pred, true) == pytest.approx(expected, abs=1e-12)
    assert 0.0 <= acc_k(pred, true, 2) <= 1.0
