"""CART decision trees (gini) and a bootstrap random forest built on them.

Tree growing runs in a numba kernel; per-node feature sampling uses a
splitmix64 stream seeded from numpy so results depend only on the seed.
"""

from __future__ import annotations

import math

import numba
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@numba.njit(cache=True)
def _next_u64(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def _randbelow(state, n):
    return np.int64(_next_u64(state) % np.uint64(n))


@numba.njit(cache=True)
def _grow(XT, y, rows, max_depth, min_samples_split, max_features, seed):
    # XT is the transposed design (features x samples) so column scans stay in cache
    n = rows.shape[0]
    d = XT.shape[0]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    n_node = np.zeros(cap, dtype=np.int64)
    npos = np.zeros(cap)
    importances = np.zeros(d)
    state = np.zeros(1, dtype=np.uint64)
    state[0] = seed

    idx = rows.copy()
    buf = np.empty(n, dtype=np.int64)
    vals = np.empty(n)
    pool = np.arange(d)
    cand = np.empty(d, dtype=np.int64)

    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)

    pos = 0.0
    for i in range(n):
        pos += y[idx[i]]
    value[0] = pos / n
    npos[0] = pos
    n_node[0] = n
    n_nodes = 1
    top = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    top = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        m = end - start
        p = value[node]
        if depth >= max_depth or m < min_samples_split or p == 0.0 or p == 1.0:
            continue

        # candidate features: first max_features non-constant ones in a random order
        n_cand = 0
        for j in range(d):
            pool[j] = j
        for j in range(d):
            if max_features < d:
                r = j + _randbelow(state, d - j)
                tmp = pool[j]
                pool[j] = pool[r]
                pool[r] = tmp
            f = pool[j]
            lo = XT[f, idx[start]]
            hi = lo
            for i in range(start + 1, end):
                v = XT[f, idx[i]]
                if v < lo:
                    lo = v
                elif v > hi:
                    hi = v
            if hi > lo:
                cand[n_cand] = f
                n_cand += 1
                if n_cand >= max_features:
                    break
        if n_cand == 0:
            continue
        cand_sorted = np.sort(cand[:n_cand])

        total_pos = npos[node]
        best_g = np.inf
        best_f = -1
        best_thr = 0.0
        for c in range(n_cand):
            f = cand_sorted[c]
            for i in range(m):
                vals[i] = XT[f, idx[start + i]]
            order = np.argsort(vals[:m])
            cl = 0.0
            for k in range(m - 1):
                cl += y[idx[start + order[k]]]
                a = vals[order[k]]
                b = vals[order[k + 1]]
                if b <= a:
                    continue
                nl = k + 1.0
                nr = m - nl
                pr = total_pos - cl
                g = 2.0 * cl * (nl - cl) / nl + 2.0 * pr * (nr - pr) / nr
                if g < best_g:
                    best_g = g
                    best_f = f
                    thr = a / 2.0 + b / 2.0
                    if thr >= b:
                        thr = a
                    best_thr = thr
        if best_f < 0:
            continue

        importances[best_f] += m * 2.0 * p * (1.0 - p) - best_g
        # stable partition of idx[start:end]
        nl_count = 0
        for i in range(start, end):
            if XT[best_f, idx[i]] <= best_thr:
                nl_count += 1
        li = 0
        ri = nl_count
        for i in range(start, end):
            if XT[best_f, idx[i]] <= best_thr:
                buf[li] = idx[i]
                li += 1
            else:
                buf[ri] = idx[i]
                ri += 1
        lpos = 0.0
        for i in range(m):
            idx[start + i] = buf[i]
            if i < nl_count:
                lpos += y[buf[i]]

        feature[node] = best_f
        threshold[node] = best_thr
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        value[lnode] = lpos / nl_count
        npos[lnode] = lpos
        npos[rnode] = total_pos - lpos
        n_node[lnode] = nl_count
        value[rnode] = (total_pos - lpos) / (m - nl_count)
        n_node[rnode] = m - nl_count
        # right pushed first so the left subtree is expanded first
        st_node[top] = rnode
        st_start[top] = start + nl_count
        st_end[top] = end
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = lnode
        st_start[top] = start
        st_end[top] = start + nl_count
        st_depth[top] = depth + 1
        top += 1

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], n_node[:n_nodes], importances)


@numba.njit(cache=True)
def _apply(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@numba.njit(cache=True)
def _walk(X, i, node, feature, threshold, children):
    f = feature[node]
    while f >= 0:
        node = children[2 * node + np.int64(not (X[i, f] <= threshold[node]))]
        f = feature[node]
    return node


@numba.njit(cache=True)
def _forest_votes(X, feature, threshold, children, leaf_vote, roots):
    """Class-1 vote count per row over trees packed end to end.

    ``children[2 * node]`` is the left child (``x <= threshold``) and
    ``children[2 * node + 1]`` the right one. Four rows descend each tree in
    lockstep so their memory loads overlap.
    """
    n = X.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for t in range(roots.shape[0]):
        r = roots[t]
        i = 0
        while i + 4 <= n:
            n0 = r
            n1 = r
            n2 = r
            n3 = r
            while True:
                f0 = feature[n0]
                f1 = feature[n1]
                f2 = feature[n2]
                f3 = feature[n3]
                if f0 < 0 and f1 < 0 and f2 < 0 and f3 < 0:
                    break
                if f0 >= 0:
                    n0 = children[2 * n0 + np.int64(not (X[i, f0] <= threshold[n0]))]
                if f1 >= 0:
                    n1 = children[2 * n1 + np.int64(not (X[i + 1, f1] <= threshold[n1]))]
                if f2 >= 0:
                    n2 = children[2 * n2 + np.int64(not (X[i + 2, f2] <= threshold[n2]))]
                if f3 >= 0:
                    n3 = children[2 * n3 + np.int64(not (X[i + 3, f3] <= threshold[n3]))]
            out[i] += leaf_vote[n0]
            out[i + 1] += leaf_vote[n1]
            out[i + 2] += leaf_vote[n2]
            out[i + 3] += leaf_vote[n3]
            i += 4
        while i < n:
            out[i] += leaf_vote[_walk(X, i, r, feature, threshold, children)]
            i += 1
    return out


class TreeArrays:
    """Flat node arrays. ``feature == -1`` marks a leaf; ``value`` is P(y=1)."""

    __slots__ = ("feature", "threshold", "left", "right", "value", "n_node")

    def __init__(self, feature, threshold, left, right, value, n_node):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=np.float64)
        self.n_node = np.asarray(n_node, dtype=np.int64)

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=np.int64)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _apply(X, self.feature, self.threshold, self.left, self.right)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_state(self) -> dict:
        return {k: getattr(self, k).tolist() for k in self.__slots__}

    @classmethod
    def from_state(cls, s: dict) -> "TreeArrays":
        return cls(*(s[k] for k in cls.__slots__))


def build_tree(X: np.ndarray, y: np.ndarray, max_depth: int, min_samples_split: int = 2,
               max_features: int | None = None, seed: int = 0, rows: np.ndarray | None = None):
    """Grow a gini tree; returns ``(TreeArrays, impurity_importances)``.

    ``rows`` selects (possibly repeated) training rows, e.g. a bootstrap draw.
    With ``max_features`` set, each node visits features in a random order and
    considers the first ``max_features`` that are not constant in the node.
    Split ties go to the lower feature index, then the lower threshold.
    """
    XT = np.ascontiguousarray(np.asarray(X, dtype=np.float64).T)
    return _build_tree_t(XT, y, max_depth, min_samples_split, max_features, seed, rows)


def _build_tree_t(XT, y, max_depth, min_samples_split, max_features, seed, rows):
    y = np.asarray(y, dtype=np.float64)
    rows = np.arange(XT.shape[1], dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
    mf = XT.shape[0] if max_features is None else int(max_features)
    out = _grow(XT, y, rows, int(max_depth), int(min_samples_split), mf, np.uint64(seed))
    return TreeArrays(*out[:6]), out[6]


class DecisionTree:
    def __init__(self, max_depth: int = 10, min_samples_split: int = 2, criterion: str = "gini"):
        if criterion != "gini":
            raise ValueError("only the gini criterion is supported")
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.tree_: TreeArrays | None = None
        self.feature_importances_: np.ndarray | None = None

    def fit(self, X, y):
        self.tree_, imp = build_tree(X, y, self.max_depth, self.min_samples_split)
        total = imp.sum()
        self.feature_importances_ = imp / total if total > 0 else imp
        return self

    def predict_proba(self, X):
        return self.tree_.predict_proba(X)

    def get_state(self):
        return {"tree": self.tree_.to_state(),
                "feature_importances": self.feature_importances_.tolist()}

    def set_state(self, s):
        self.tree_ = TreeArrays.from_state(s["tree"])
        self.feature_importances_ = np.array(s["feature_importances"])
        return self


class RandomForest:
    """Bagged gini trees with sqrt(d) candidate features per split.

    ``predict_proba`` is the fraction of trees whose leaf votes class 1
    (leaf P(y=1) >= 0.5), so it is always a multiple of ``1/n_estimators``.
    """

    def __init__(self, n_estimators: int = 100, max_depth: int = 20, min_samples_split: int = 2,
                 max_features: str | int | None = "sqrt", seed: int = 0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.max_features = max_features
        self.seed = seed
        self.trees_: list[TreeArrays] = []
        self.feature_importances_: np.ndarray | None = None

    def _n_features(self, d):
        if self.max_features == "sqrt":
            return max(1, int(math.sqrt(d)))
        if self.max_features is None:
            return d
        return max(1, min(d, int(self.max_features)))

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        n, d = X.shape
        XT = np.ascontiguousarray(X.T)
        m = self._n_features(d)
        self.trees_ = []
        imp = np.zeros(d)
        for ss in np.random.SeedSequence(self.seed).spawn(self.n_estimators):
            trng = np.random.default_rng(ss)
            boot = trng.integers(0, n, n)
            node_seed = int(trng.integers(0, 2 ** 63))
            tree, t_imp = _build_tree_t(XT, y, self.max_depth, self.min_samples_split, m,
                                        node_seed, boot)
            self.trees_.append(tree)
            total = t_imp.sum()
            if total > 0:
                imp += t_imp / total
        total = imp.sum()
        self.feature_importances_ = imp / total if total > 0 else imp
        self._packed = None
        return self

    def _pack(self):
        """Concatenate every tree's node arrays once, shifting child ids."""
        offsets = np.cumsum([0] + [len(t.feature) for t in self.trees_])
        shift = np.repeat(offsets[:-1], np.diff(offsets))
        cat = lambda name: np.concatenate([getattr(t, name) for t in self.trees_])
        feature = cat("feature")
        children = np.full(2 * len(feature), -1, dtype=np.int64)
        split = feature >= 0
        children[0::2][split] = (cat("left") + shift)[split]
        children[1::2][split] = (cat("right") + shift)[split]
        leaf_vote = (cat("value") >= 0.5).astype(np.int64)
        self._packed = (feature, cat("threshold"), children, leaf_vote,
                        offsets[:-1].astype(np.int64))

    def tree_votes(self, X) -> np.ndarray:
        """Per-tree class-1 votes, shape ``(n_estimators, n)``."""
        return np.array([t.predict_proba(X) >= 0.5 for t in self.trees_], dtype=np.int64)

    def predict_proba(self, X):
        if getattr(self, "_packed", None) is None:
            self._pack()
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _forest_votes(X, *self._packed) / len(self.trees_)

    def get_state(self):
        return {"trees": [t.to_state() for t in self.trees_],
                "feature_importances": self.feature_importances_.tolist()}

    def set_state(self, s):
        self.trees_ = [TreeArrays.from_state(t) for t in s["trees"]]
        self.feature_importances_ = np.array(s["feature_importances"])
        self._packed = None
        return self
