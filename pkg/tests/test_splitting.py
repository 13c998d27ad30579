import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from absorbkit.errors import SingleClass, TooFewSubjects
from absorbkit.splitting import FoldPlan, make_folds, subject_strata


def _cohort(n_subj, rows, r):
    subjects, labels = [], []
    for s in range(n_subj):
        for _ in range(rows):
            subjects.append(f"S{s:02d}")
            labels.append(int(r.random() < 0.5))
    return subjects, np.array(labels)


@given(st.integers(5, 15), st.integers(1, 6), st.integers(2, 5), st.integers(0, 10 ** 6))
@settings(max_examples=60, deadline=None)
def test_partition_and_no_subject_leakage(n_subj, rows, K, seed):
    r = np.random.default_rng(seed)
    subjects, labels = _cohort(n_subj, rows, r)
    if len(np.unique(labels)) < 2:
        return
    plan = make_folds(subjects, labels, K=K, seed=seed)
    vals = np.concatenate([va for _, va in plan.folds])
    assert sorted(vals.tolist()) == list(range(len(subjects)))
    subj = np.array(subjects)
    for tr, va in plan.folds:
        assert set(subj[tr]).isdisjoint(subj[va])
        assert len(tr) + len(va) == len(subjects)
    sizes = [len(set(subj[va])) for _, va in plan.folds]
    assert max(sizes) - min(sizes) <= 1


def test_strata_balanced_across_folds():
    subjects = [f"S{i}" for i in range(10) for _ in range(2)]
    labels = np.array([1 if i < 5 else 0 for i in range(10) for _ in range(2)])
    plan = make_folds(subjects, labels, K=5, seed=3)
    for _, va in plan.folds:
        assert sorted(set(labels[va].tolist())) == [0, 1]


def test_majority_tie_goes_to_class_one():
    assert subject_strata(["a", "a", "b"], [0, 1, 0]) == {"a": 1, "b": 0}


def test_deterministic_and_seed_sensitive():
    subjects = [f"S{i}" for i in range(12)]
    labels = np.array([i % 2 for i in range(12)])
    a = make_folds(subjects, labels, seed=42).to_json()
    b = make_folds(subjects, labels, seed=42).to_json()
    c = make_folds(subjects, labels, seed=43).to_json()
    assert a == b and a != c


def test_roundtrip():
    subjects = [f"S{i}" for i in range(6)]
    plan = make_folds(subjects, np.array([0, 1] * 3), K=3)
    back = FoldPlan.from_dict(json.loads(plan.to_json()))
    assert back.to_json() == plan.to_json()


def test_errors():
    with pytest.raises(SingleClass):
        make_folds(["a", "b", "c"], [1, 1, 1], K=2)
    with pytest.raises(TooFewSubjects):
        make_folds(["a", "b", "c"], [0, 1, 0], K=5)
