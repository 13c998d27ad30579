"""k-nearest-neighbour vote classifier."""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _knn_select(base, row_shift, row_scale, tcol, sq_max, T, X, k):
    # approx[i, j] = base[i, j] + row_shift[i] - row_scale[i] * tcol[j] is the
    # (possibly rank-1 updated) distance expansion; it only locates a band
    # that is then re-ranked with exact squared distances summed in feature order
    n_q, n_t = base.shape
    d = T.shape[1]
    out = np.empty((n_q, k), dtype=np.int64)
    row = np.empty(n_t)
    small = np.empty(k)
    cand = np.empty(n_t, dtype=np.int64)
    dist = np.empty(n_t)
    for i in range(n_q):
        for r in range(k):
            small[r] = np.inf
        for j in range(n_t):
            v = base[i, j] + row_shift[i] - row_scale[i] * tcol[j]
            row[j] = v
            if v < small[k - 1]:
                q = k - 1
                while q > 0 and small[q - 1] > v:
                    small[q] = small[q - 1]
                    q -= 1
                small[q] = v
        kth = small[k - 1]
        lim = kth + 1e-7 * (1.0 + abs(kth) + sq_max)
        c = 0
        for j in range(n_t):
            if row[j] <= lim:
                s = 0.0
                for f in range(d):
                    e = T[j, f] - X[i, f]
                    s += e * e
                cand[c] = j
                dist[c] = s
                c += 1
        # partial selection sort; candidates arrive in index order and the
        # rotate below keeps the rest in that order, so ties go to the lower index
        for r in range(k):
            best = r
            for q in range(r + 1, c):
                if dist[q] < dist[best]:
                    best = q
            bj = cand[best]
            bd = dist[best]
            for q in range(best, r, -1):
                cand[q] = cand[q - 1]
                dist[q] = dist[q - 1]
            cand[r] = bj
            dist[r] = bd
            out[i, r] = bj
    return out


class KNeighbors:
    """Euclidean k-NN; probability is the class-1 share among the k neighbours.

    Distance ties are broken toward the lower training index. The last
    query's distance expansion is cached, so a query that differs from it in
    one column (as in permutation importance) costs a rank-1 update.
    """

    def __init__(self, k: int = 5):
        self.k = k
        self.X_: np.ndarray | None = None
        self.y_: np.ndarray | None = None
        self._cache = None

    def fit(self, X, y):
        self.X_ = np.array(X, dtype=np.float64)
        self.y_ = np.array(y, dtype=np.int64)
        self._cache = None
        return self

    def neighbors(self, X) -> np.ndarray:
        """Indices of the k nearest training rows for each query row."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        n_q, n_t = X.shape[0], self.X_.shape[0]
        k = min(self.k, n_t)
        sq_train = (self.X_ ** 2).sum(axis=1)
        shift, scale, tcol = np.zeros(n_q), np.zeros(n_q), np.zeros(n_t)
        c = self._cache
        diff = None
        if c is not None and c[0].shape == X.shape:
            diff = np.flatnonzero(~(c[0] == X).all(axis=0))
        if diff is not None and len(diff) <= 1:
            base = c[1]
            if len(diff) == 1:
                j = diff[0]
                old, new = c[0][:, j], X[:, j]
                shift, scale, tcol = new ** 2 - old ** 2, 2.0 * (new - old), self.X_[:, j]
        else:
            base = (X ** 2).sum(axis=1)[:, None] - 2.0 * X @ self.X_.T + sq_train[None, :]
            self._cache = (X.copy(), base)
        return _knn_select(base, shift, scale, np.ascontiguousarray(tcol), float(sq_train.max()),
                           self.X_, X, k)

    def predict_proba(self, X):
        nb = self.neighbors(X)
        return self.y_[nb].mean(axis=1)

    def get_state(self):
        return {"k": self.k, "X": self.X_.tolist(), "y": self.y_.tolist()}

    def set_state(self, s):
        self.k = int(s["k"])
        self.X_ = np.array(s["X"], dtype=np.float64).reshape(len(s["y"]), -1)
        self.y_ = np.array(s["y"], dtype=np.int64)
        self._cache = None
        return self
