import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from absorbkit.data import RoiRegistry
from absorbkit.importance import (
    ImportanceMap, aggregate_views, leave_one_region_out, permutation_importance,
)
from absorbkit.models import ModelSpec, fit
from absorbkit.selection import normalize01


def _label_copy(rng, n=200):
    y = np.repeat([0, 1], n // 2)
    X = np.column_stack([y.astype(float), rng.normal(size=n)])
    return X, y


def _threshold0(X):
    return (X[:, 0] > 0.5).astype(float)


def test_label_copy_feature_importance(rng):
    X, y = _label_copy(rng)
    imp = permutation_importance(_threshold0, X, y, repeats=10, rng=rng)
    # shuffled accuracy on balanced data has expectation 0.5
    assert imp[0] == pytest.approx(0.5, abs=0.08) and imp[0] > 0
    assert imp[1] == 0.0


def test_unused_noise_column_scores_zero_with_stump(rng):
    X, y = _label_copy(rng)
    stump = fit(ModelSpec("DT", {"max_depth": 1}), X, y)
    imp = permutation_importance(stump.predict_proba, X, y, rng=rng)
    assert imp[1] == 0.0


def test_duplicated_columns_share_credit(rng):
    X, y = _label_copy(rng)
    single = permutation_importance(_threshold0, X[:, :1], y, rng=np.random.default_rng(1))[0]
    Xd = np.column_stack([X[:, 0], X[:, 0]])
    vote = lambda Z: (Z[:, 0] + Z[:, 1]) / 2.0  # both columns needed for a 1.0 vote
    dup = permutation_importance(vote, Xd, y, rng=np.random.default_rng(1))
    assert np.all(dup < single)


def test_permutation_importance_repeatable(rng):
    X = rng.normal(size=(120, 4))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(int)
    m = fit(ModelSpec("LR"), X, y)
    a = permutation_importance(m.predict_proba, X, y, rng=np.random.default_rng(1))
    b = permutation_importance(m.predict_proba, X, y, rng=np.random.default_rng(2))
    assert np.std(a - b) <= 0.05
    assert np.argmax(a) == 0


def test_normalize_examples():
    assert normalize01(np.array([2.0, 4, 6])).tolist() == [0, 0.5, 1]
    assert normalize01(np.array([5.0, 5, 5])).tolist() == [0, 0, 0]
    assert normalize01(np.array([3.0])).tolist() == [0]


def test_aggregate_examples():
    assert aggregate_views({"a": np.array([0.2]), "b": np.array([0.4]), "c": np.array([0.6])})[0] \
        == pytest.approx(0.4)
    assert aggregate_views({"a": np.array([0.2]), "b": None, "c": np.array([0.6])})[0] \
        == pytest.approx(0.4)
    v = np.array([0.1, 0.7])
    assert aggregate_views({"a": v, "b": v}).tolist() == v.tolist()
    with pytest.raises(ValueError):
        aggregate_views({"a": None})


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2 ** 31), st.integers(1, 3))
def test_views_in_unit_interval_and_agreeing_argmax_kept(d, seed, n_views):
    rng = np.random.default_rng(seed)
    raw = {}
    top = int(rng.integers(d))
    for v in ("forest", "linear", "permutation")[:n_views]:
        x = rng.random(d)
        x[top] = 2.0
        raw[v] = x
    m = ImportanceMap.build(range(1, d + 1), raw, np.zeros(d), 6)
    assert np.all((m.aggregated >= 0) & (m.aggregated <= 1))
    assert np.argmax(m.aggregated) == top
    assert m.top(1) == [top + 1]


def test_loro_counts(rng):
    X = rng.normal(size=(100, 3))
    y = (X[:, 0] > 0).astype(int)
    users = [lambda Z: (Z[:, 0] > 0).astype(float)] * 4
    idle = [lambda Z: (X[:, 0] > 0).astype(float)] * 2  # never reads its input
    counts = leave_one_region_out(users + idle, X, y, X.mean(axis=0))
    assert counts.tolist() == [4, 0, 0]


def test_neutralizing_unread_column_is_bit_identical(rng):
    X = rng.normal(size=(60, 3))
    y = (X[:, 0] > 0).astype(int)
    stump = fit(ModelSpec("DT", {"max_depth": 1}), X, y)
    Xn = X.copy()
    Xn[:, 2] = X[:, 2].mean()
    assert stump.predict_proba(Xn).tobytes() == stump.predict_proba(X).tobytes()


def test_csv_columns(tmp_path):
    m = ImportanceMap.build([1, 401], {"forest": np.array([1.0, 0.0]), "linear": None,
                                       "permutation": np.array([0.0, 2.0])}, [2, 1], 3)
    m.to_csv(tmp_path / "i.csv", RoiRegistry.default())
    rows = list(csv.reader(open(tmp_path / "i.csv")))
    assert rows[0] == ["roi_id", "roi_name", "atlas", "view_forest", "view_linear",
                       "view_permutation", "aggregated", "loro_drop_count"]
    assert rows[1][0] == "1" and rows[1][4] == "" and rows[1][-1] == "2"
    assert float(rows[2][6]) == pytest.approx(0.5)
