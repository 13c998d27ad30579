import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from absorbkit.augmentation import (AugmentConfig, balance_classes, balance_segment,
                                    balance_training_set, k_neighbors_for, keyed_rng,
                                    nearest_neighbors, perturb, smote_interpolate)
from absorbkit.errors import ConfigError, EmptySegment, TooFewRows


def test_k_rule():
    for size in range(2, 11):
        assert k_neighbors_for(size) == min(5, size - 1)


def test_nearest_neighbors_bruteforce(rng):
    for n in (6, 300):
        X = rng.normal(size=(n, 4))
        nn = nearest_neighbors(X, 3)
        for i in (0, n // 2, n - 1):
            d = [(np.sum((X[i] - X[j]) ** 2), j) for j in range(n) if j != i]
            assert [j for _, j in sorted(d)[:3]] == nn[i].tolist()


def test_nearest_neighbor_ties_to_lower_index():
    X = np.array([[0.0], [1.0], [-1.0], [2.0]])
    assert nearest_neighbors(X, 2)[0].tolist() == [1, 2]


def test_smote_points_on_segments(rng):
    X = rng.normal(size=(6, 3))
    k = 3
    out = smote_interpolate(X, 20, k, rng)
    nn = nearest_neighbors(X, k)
    for i, row in enumerate(out):
        base = X[i % 6]
        ok = False
        for j in nn[i % 6]:
            diff = X[j] - base
            u = np.dot(row - base, diff) / np.dot(diff, diff)
            if -1e-12 <= u <= 1 + 1e-12 and np.allclose(base + u * diff, row, atol=1e-10):
                ok = True
        assert ok


def test_smote_errors(rng):
    with pytest.raises(TooFewRows):
        smote_interpolate(np.ones((1, 2)), 3, 1, rng)
    with pytest.raises(TooFewRows):
        smote_interpolate(np.ones((3, 2)), 3, 3, rng)


def test_perturb_touches_expected_columns(rng):
    cfg = AugmentConfig()
    X = np.zeros((50, 10))
    out = perturb(X, np.ones(10), cfg, rng)
    changed = (out != 0).sum(axis=1)
    assert np.all(changed == math.ceil(0.8 * 10))
    # half the noise survives the blend: SD of changes is noise_level * 0.5
    assert out[out != 0].std() == pytest.approx(0.05 * 0.5, rel=0.2)


def test_perturb_identity_when_full_retention(rng):
    cfg = AugmentConfig(retention_degree=1.0)
    X = rng.normal(size=(5, 4))
    assert np.array_equal(perturb(X, np.ones(4), cfg, rng), X)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 10, 26, 27, 40])
def test_segment_reaches_target(n, rng):
    X = rng.normal(size=(n, 6))
    runs = np.arange(1, n + 1)
    seg = balance_segment(X, runs, AugmentConfig(), rng)
    assert seg.X.shape == (27, 6)
    assert seg.run_ids.tolist() == list(range(1, 28))
    kept = min(n, 27)
    assert np.array_equal(seg.X[:kept], X[:kept])
    assert seg.synthetic.sum() == 27 - kept
    if n == 1:
        assert seg.strategy == "replication"
    elif n < 27:
        assert seg.strategy == "smote" and seg.k_used == min(5, n - 1)


def test_segment_runs_as_classes(rng):
    X = rng.normal(size=(6, 3))
    seg = balance_segment(X, [1, 1, 1, 2, 2, 2], AugmentConfig(), rng)
    assert seg.k_used == 2


def test_segment_envelope(rng):
    cfg = AugmentConfig()
    for n in range(2, 11):
        X = rng.normal(size=(n, 8))
        sd = X.std(axis=0)
        seg = balance_segment(X, np.arange(n), cfg, rng, col_sd=sd)
        syn = seg.X[seg.synthetic]
        band = 6 * cfg.noise_level * (1 - cfg.retention_degree) * sd
        assert np.all(syn >= X.min(axis=0) - band) and np.all(syn <= X.max(axis=0) + band)


def test_empty_segment(rng):
    with pytest.raises(EmptySegment):
        balance_segment(np.zeros((0, 3)), [], AugmentConfig(), rng)


def test_config_validation():
    with pytest.raises(ConfigError):
        AugmentConfig(retention_degree=1.5)


def _training_slice(rng):
    subjects, conds, runs, y = [], [], [], []
    for s in range(3):
        for c, lab, n in (("J1", 1, 2), ("counting", 0, 1)):
            for r in range(n):
                subjects.append(f"S{s}")
                conds.append(c)
                runs.append(r + 1)
                y.append(lab)
    X = rng.normal(size=(len(y), 4))
    sids = [f"{a}-{b}-{c}" for a, b, c in zip(subjects, conds, runs)]
    return X, np.array(y), subjects, conds, runs, sids


def test_training_set_balance(rng):
    X, y, subjects, conds, runs, sids = _training_slice(rng)
    aug = balance_training_set(X, y, subjects, conds, runs, sids, AugmentConfig(), key=("c", 0))
    counts = {}
    for s in aug.segment:
        counts[s] = counts.get(s, 0) + 1
    assert all(v == 27 for v in counts.values())
    assert set(aug.source_sample_id) - {""} == set(sids)
    assert np.bincount(aug.y).tolist() == [81, 81]


def test_training_set_order_independent(rng):
    X, y, subjects, conds, runs, sids = _training_slice(rng)
    cfg = AugmentConfig()
    a = balance_training_set(X, y, subjects, conds, runs, sids, cfg, key=("c",))
    # shuffle whole segments while keeping row order inside each segment
    seg = [f"{s}|{c}" for s, c in zip(subjects, conds)]
    rank = {k: v for k, v in zip(sorted(set(seg)), np.random.default_rng(1).permutation(len(set(seg))))}
    p = np.argsort([rank[k] for k in seg], kind="stable")
    b = balance_training_set(X[p], y[p], [subjects[i] for i in p], [conds[i] for i in p],
                             [runs[i] for i in p], [sids[i] for i in p], cfg, key=("c",))
    assert a.segment == b.segment
    assert a.X.tobytes() == b.X.tobytes()


def test_keyed_rng_reproducible():
    assert keyed_rng(42, "J1 vs J2", 3).random() == keyed_rng(42, "J1 vs J2", 3).random()
    assert keyed_rng(42, "a").random() != keyed_rng(42, "b").random()


@given(st.integers(2, 30), st.integers(0, 10 ** 6))
@settings(max_examples=30, deadline=None)
def test_class_balance_ratio(n_min, seed):
    r = np.random.default_rng(seed)
    n_maj = n_min + int(r.integers(0, 20))
    from absorbkit.augmentation import AugmentedSet
    y = np.array([1] * n_maj + [0] * n_min)
    X = r.normal(size=(len(y), 3))
    aug = AugmentedSet(X, y, np.zeros(len(y), bool), ["s"] * len(y), ["S"] * len(y),
                       np.arange(len(y)), ["x"] * len(y))
    out = balance_classes(aug, X.std(axis=0), AugmentConfig(), ("k",))
    assert np.bincount(out.y, minlength=2)[0] == np.bincount(out.y, minlength=2)[1]
