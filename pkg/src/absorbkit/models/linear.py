"""L2 logistic regression and a linear SVM with Platt-scaled probabilities."""

from __future__ import annotations

import numba
import numpy as np
from scipy.special import expit


def _log1pexp(z):
    return np.logaddexp(0.0, z)


class LogisticRegression:
    """Penalized maximum likelihood with penalty ``||w||^2 / (2C)``.

    The intercept is not penalized. Solved by Newton's method with
    backtracking; stops once the gradient infinity-norm drops below ``tol``.
    """

    def __init__(self, C: float = 1.0, tol: float = 1e-6, max_iter: int = 1000):
        self.C = C
        self.tol = tol
        self.max_iter = max_iter
        self.coef_: np.ndarray | None = None
        self.intercept_: float = 0.0
        self.n_iter_ = 0

    def _objective(self, w, b, X, s):
        z = X @ w + b
        return float(np.sum(_log1pexp(-s * z)) + w @ w / (2.0 * self.C))

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n, d = X.shape
        s = 2.0 * y - 1.0
        w = np.zeros(d)
        b = 0.0
        Xa = np.hstack([X, np.ones((n, 1))])
        reg = np.full(d + 1, 1.0 / self.C)
        reg[-1] = 0.0
        obj = self._objective(w, b, X, s)
        for it in range(1, self.max_iter + 1):
            p = expit(Xa[:, :d] @ w + b)
            grad = Xa.T @ (p - y) + reg * np.append(w, 0.0)
            self.n_iter_ = it
            if np.max(np.abs(grad)) < self.tol:
                break
            h = p * (1.0 - p)
            H = (Xa * h[:, None]).T @ Xa + np.diag(reg) + 1e-12 * np.eye(d + 1)
            try:
                step = np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(H, grad, rcond=None)[0]
            t = 1.0
            while True:
                w_new, b_new = w - t * step[:d], b - t * step[d]
                obj_new = self._objective(w_new, b_new, X, s)
                if obj_new <= obj - 1e-4 * t * float(grad @ step) or t < 1e-10:
                    break
                t *= 0.5
            if obj_new > obj:
                break
            w, b, obj = w_new, b_new, obj_new
        self.coef_ = w
        self.intercept_ = float(b)
        return self

    def decision_function(self, X):
        return np.asarray(X, dtype=np.float64) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return expit(self.decision_function(X))

    def get_state(self):
        return {"coef": self.coef_.tolist(), "intercept": self.intercept_, "n_iter": self.n_iter_}

    def set_state(self, s):
        self.coef_ = np.array(s["coef"], dtype=np.float64)
        self.intercept_ = float(s["intercept"])
        self.n_iter_ = int(s.get("n_iter", 0))
        return self


def platt_fit(f: np.ndarray, y: np.ndarray, max_iter: int = 100) -> tuple[float, float]:
    """Sigmoid ``P(y=1|f) = 1 / (1 + exp(A f + B))`` fit by Newton's method.

    Uses Platt's smoothed targets and the numerically stable update of
    Lin, Lin & Weng (2007).
    """
    f = np.asarray(f, dtype=np.float64)
    y = np.asarray(y)
    n_pos = float((y == 1).sum())
    n_neg = float((y == 0).sum())
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(y == 1, hi, lo)
    A, B = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    sigma = 1e-12

    def objective(A, B):
        fApB = f * A + B
        return float(np.sum(np.where(fApB >= 0, t * fApB + np.log1p(np.exp(-np.abs(fApB))),
                                     (t - 1.0) * fApB + np.log1p(np.exp(-np.abs(fApB))))))

    fval = objective(A, B)
    for _ in range(max_iter):
        fApB = f * A + B
        p = np.where(fApB >= 0, np.exp(-np.abs(fApB)) / (1.0 + np.exp(-np.abs(fApB))),
                     1.0 / (1.0 + np.exp(-np.abs(fApB))))
        q = 1.0 - p
        d2 = p * q
        h11 = sigma + float(np.sum(f * f * d2))
        h22 = sigma + float(np.sum(d2))
        h21 = float(np.sum(f * d2))
        d1 = t - p
        g1 = float(np.sum(f * d1))
        g2 = float(np.sum(d1))
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nf = objective(nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2.0
        else:
            break
    return float(A), float(B)


@numba.njit(cache=True)
def _svm_dual_cd(Xa, s, C, tol, max_iter):
    n, d = Xa.shape
    qii = np.empty(n)
    for i in range(n):
        qii[i] = Xa[i] @ Xa[i]
    alpha = np.zeros(n)
    w = np.zeros(d)
    it = 0
    for it in range(1, max_iter + 1):
        max_pg = -np.inf
        min_pg = np.inf
        for i in range(n):
            g = s[i] * (Xa[i] @ w) - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= C:
                pg = max(g, 0.0)
            else:
                pg = g
            max_pg = max(max_pg, pg)
            min_pg = min(min_pg, pg)
            if pg != 0.0 and qii[i] > 0:
                new = min(max(a - g / qii[i], 0.0), C)
                w += (new - a) * s[i] * Xa[i]
                alpha[i] = new
        if max_pg - min_pg < tol:
            break
    return w, it


class LinearSVM:
    """L2-regularized hinge-loss SVM, ``0.5||w||^2 + C sum max(0, 1 - y f(x))``.

    Dual coordinate descent over samples in index order (so fitting is
    deterministic), with the bias handled as an extra constant feature.
    Probabilities come from a Platt sigmoid fit on training decision values.
    """

    def __init__(self, C: float = 1.0, tol: float = 1e-4, max_iter: int = 1000):
        self.C = C
        self.tol = tol
        self.max_iter = max_iter
        self.coef_: np.ndarray | None = None
        self.intercept_: float = 0.0
        self.platt_: tuple[float, float] = (0.0, 0.0)
        self.n_iter_ = 0

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        n, d = X.shape
        s = np.where(y == 1, 1.0, -1.0)
        Xa = np.hstack([X, np.ones((n, 1))])
        w, self.n_iter_ = _svm_dual_cd(Xa, s, float(self.C), float(self.tol), int(self.max_iter))
        self.coef_ = w[:d].copy()
        self.intercept_ = float(w[d])
        self.platt_ = platt_fit(self.decision_function(X), y)
        return self

    def decision_function(self, X):
        return np.asarray(X, dtype=np.float64) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        A, B = self.platt_
        return expit(-(A * self.decision_function(X) + B))

    def get_state(self):
        return {"coef": self.coef_.tolist(), "intercept": self.intercept_,
                "platt": list(self.platt_), "n_iter": self.n_iter_}

    def set_state(self, s):
        self.coef_ = np.array(s["coef"], dtype=np.float64)
        self.intercept_ = float(s["intercept"])
        self.platt_ = tuple(float(v) for v in s["platt"])
        self.n_iter_ = int(s.get("n_iter", 0))
        return self
