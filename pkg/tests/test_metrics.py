import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ettk.errors import ContractError
from ettk.metrics import (
    ConfusionMatrix,
    aggregate,
    aggregate_reports,
    cer,
    confusion_csv,
    greedy_ctc_decode,
    history_csv,
    levenshtein,
    majority_class_ua,
    metrics_from_confusion,
    pearson,
    report_jsonl,
    report_table,
)

AB = ("a", "b")


def test_perfect_predictions():
    y = [0, 1, 2, 3, 3, 2]
    r = metrics_from_confusion(ConfusionMatrix.from_predictions(y, y))
    assert r.ua == r.wa == r.macro_f1 == 1.0


def test_majority_predictor_on_skewed_set():
    y_true = [0] * 39 + [1] * 21 + [2] * 20 + [3] * 20
    r = metrics_from_confusion(ConfusionMatrix.from_predictions(y_true, [0] * 100))
    assert r.wa == 0.39 and r.ua == 0.25 == majority_class_ua()
    assert r.conventions["ua=overall_accuracy,wa=macro_recall"] == {"ua": 0.39, "wa": 0.25}


def test_two_class_hand_example():
    r = metrics_from_confusion(ConfusionMatrix([[5, 0], [2, 3]], AB))
    assert r.ua == pytest.approx(0.8, abs=1e-15) and r.wa == 0.8
    assert r.recall == [1.0, 0.6]


def test_undefined_f1_propagates():
    r = metrics_from_confusion(ConfusionMatrix([[3, 0, 0, 0], [1, 2, 0, 0], [0, 0, 4, 0], [0, 0, 0, 0]]))
    assert r.f1[3] is None and r.macro_f1 is None and r.recall[3] is None and r.precision[3] is None
    assert r.ua == pytest.approx((1 + 2 / 3 + 1) / 3)
    assert "NaN" in report_table(r)


def test_empty_test_set():
    with pytest.raises(ContractError):
        metrics_from_confusion(ConfusionMatrix(np.zeros((4, 4))))


def test_confusion_validation():
    with pytest.raises(ContractError):
        ConfusionMatrix(np.zeros((3, 3)))
    with pytest.raises(ContractError):
        ConfusionMatrix([[1, -1], [0, 0]], AB)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60))
def test_support_rows_and_wa_recount(pairs):
    y_true, y_pred = zip(*pairs)
    cm = ConfusionMatrix.from_predictions(y_true, y_pred)
    assert cm.support.tolist() == [y_true.count(k) for k in range(4)]
    r = metrics_from_confusion(cm)
    assert r.wa == sum(a == b for a, b in pairs) / len(pairs)
    assert all(0 <= v <= 1 for v in (r.ua, r.wa))


# --- transcripts ------------------------------------------------------------------


def test_cer_examples():
    assert cer(["abc"], ["abc"]) == 0.0
    assert cer(["abc"], ["abd"]) == 1 / 3
    assert cer([""], ["ab"]) == 1.0
    with pytest.raises(ContractError):
        cer([""], [""])
    with pytest.raises(ContractError):
        cer([], [])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.text("abc", max_size=6), st.text("abc", min_size=1, max_size=6)), min_size=1, max_size=6), st.randoms())
def test_cer_order_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    h, r = zip(*pairs)
    hs, rs = zip(*shuffled)
    assert cer(h, r) == cer(hs, rs)


@settings(max_examples=200, deadline=None)
@given(st.text("abc", max_size=6), st.text("abc", max_size=6))
def test_levenshtein_symmetric_and_bounded(a, b):
    d = levenshtein(a, b)
    assert d == levenshtein(b, a)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))


def onehot(ids, V=4):
    lp = np.full((len(ids), V), -10.0)
    lp[np.arange(len(ids)), ids] = 0.0
    return lp


def test_greedy_decode_examples():
    alpha = "_ab"
    assert greedy_ctc_decode(onehot([1, 1, 0, 2], 3), alpha) == "ab"
    assert greedy_ctc_decode(onehot([0, 0, 0], 3), alpha) == ""
    assert greedy_ctc_decode(onehot([1, 0, 1], 3), alpha) == "aa"


def test_greedy_decode_roundtrip_all_short_strings():
    alpha = "_abc"
    for n in range(6):
        for s in itertools.product("abc", repeat=n):
            ids = []
            for ch in s:
                ids += [alpha.index(ch), 0]  # blank after each symbol separates repeats
            assert greedy_ctc_decode(onehot(ids or [0]), alpha) == "".join(s)


def test_pearson_examples():
    x = np.random.default_rng(0).normal(size=30)
    assert pearson(x, x) == pytest.approx(1.0)
    assert pearson(x, -x) == pytest.approx(-1.0)
    assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.98198, abs=1e-5)
    assert pearson([1, 1, 1], [1, 2, 3]) is None


# --- writers ----------------------------------------------------------------------


def test_writers_are_stable():
    cm = ConfusionMatrix([[5, 1, 0, 0], [0, 4, 1, 0], [0, 0, 6, 0], [1, 0, 0, 2]])
    r = metrics_from_confusion(cm, fold=2, seed=7)
    rec = json.loads(report_jsonl([r]))
    assert rec["fold"] == 2 and rec["seed"] == 7 and rec["labels"][0] == "neutral"
    assert confusion_csv(cm).splitlines()[1] == "neutral,5,1,0,0"
    hist = history_csv([{"epoch": 0, "train_loss": 1.5, "val_loss": 1.25, "lr": 1e-4, "steps": 3}])
    assert hist == "epoch,train_loss,val_loss,lr\n0,1.5,1.25,0.0001\n"


def test_aggregate():
    assert aggregate([0.5, 0.7]) == pytest.approx((0.6, 0.1))
    assert aggregate([0.5, None]) == (None, None)
    cm = ConfusionMatrix.from_predictions([0, 1, 2, 3], [0, 1, 2, 3])
    agg = aggregate_reports([metrics_from_confusion(cm)] * 3)
    assert agg["ua"] == (1.0, 0.0)
