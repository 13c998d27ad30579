"""Two-hidden-layer ReLU perceptron with a sigmoid output, trained with Adam."""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _loss_grad(X, y, W1, b1, W2, b2, W3, b3):
    """Mean binary cross-entropy and its gradients for one batch."""
    n = X.shape[0]
    z1 = X @ W1 + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ W2 + b2
    a2 = np.maximum(z2, 0.0)
    z3 = (a2 @ W3)[:, 0] + b3[0]
    loss = 0.0
    dz3 = np.empty(n)
    for i in range(n):
        z = z3[i]
        # log(1 + exp(-|z|)) keeps the loss finite for large logits
        soft = np.log1p(np.exp(-abs(z)))
        if z >= 0:
            loss += (1.0 - y[i]) * z + soft
            p = 1.0 / (1.0 + np.exp(-z))
        else:
            loss += -y[i] * z + soft
            ez = np.exp(z)
            p = ez / (1.0 + ez)
        dz3[i] = (p - y[i]) / n
    loss /= n
    gW3 = a2.T @ dz3.reshape(n, 1)
    gb3 = np.array([dz3.sum()])
    da2 = dz3.reshape(n, 1) @ W3.T
    dz2 = da2 * (z2 > 0)
    gW2 = a1.T @ dz2
    gb2 = dz2.sum(axis=0)
    da1 = dz2 @ W2.T
    dz1 = da1 * (z1 > 0)
    gW1 = X.T @ dz1
    gb1 = dz1.sum(axis=0)
    return loss, gW1, gb1, gW2, gb2, gW3, gb3


@numba.njit(cache=True)
def _logits(X, W1, b1, W2, b2, W3, b3):
    a1 = np.maximum(X @ W1 + b1, 0.0)
    a2 = np.maximum(a1 @ W2 + b2, 0.0)
    return (a2 @ W3)[:, 0] + b3[0]


@numba.njit(cache=True)
def _adam(p, g, m, v, lr, beta1, beta2, eps, t):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


@numba.njit(cache=True)
def _train(Xtr, ytr, Xva, yva, W1, b1, W2, b2, W3, b3, perms, batch, lr, beta1, beta2,
           eps, patience, use_val):
    params = (W1, b1, W2, b2, W3, b3)
    m1, m2, m3, m4, m5, m6 = (np.zeros_like(W1), np.zeros_like(b1), np.zeros_like(W2),
                              np.zeros_like(b2), np.zeros_like(W3), np.zeros_like(b3))
    v1, v2, v3, v4, v5, v6 = (np.zeros_like(W1), np.zeros_like(b1), np.zeros_like(W2),
                              np.zeros_like(b2), np.zeros_like(W3), np.zeros_like(b3))
    epochs = perms.shape[0]
    n = Xtr.shape[0]
    train_loss = np.full(epochs, np.nan)
    val_loss = np.full(epochs, np.nan)
    best = (W1.copy(), b1.copy(), W2.copy(), b2.copy(), W3.copy(), b3.copy())
    best_loss = np.inf
    best_epoch = -1
    wait = 0
    t = 0
    for ep in range(epochs):
        total = 0.0
        for start in range(0, n, batch):
            idx = perms[ep, start:min(start + batch, n)]
            Xb = Xtr[idx]
            yb = ytr[idx]
            loss, g1, g2, g3, g4, g5, g6 = _loss_grad(Xb, yb, W1, b1, W2, b2, W3, b3)
            total += loss * idx.shape[0]
            t += 1
            _adam(W1, g1, m1, v1, lr, beta1, beta2, eps, t)
            _adam(b1, g2, m2, v2, lr, beta1, beta2, eps, t)
            _adam(W2, g3, m3, v3, lr, beta1, beta2, eps, t)
            _adam(b2, g4, m4, v4, lr, beta1, beta2, eps, t)
            _adam(W3, g5, m5, v5, lr, beta1, beta2, eps, t)
            _adam(b3, g6, m6, v6, lr, beta1, beta2, eps, t)
        train_loss[ep] = total / n
        if use_val:
            val_loss[ep] = _loss_grad(Xva, yva, W1, b1, W2, b2, W3, b3)[0]
            monitored = val_loss[ep]
        else:
            monitored = train_loss[ep]
        if monitored < best_loss:
            best_loss = monitored
            best_epoch = ep
            best = (W1.copy(), b1.copy(), W2.copy(), b2.copy(), W3.copy(), b3.copy())
            wait = 0
        else:
            wait += 1
            if use_val and wait >= patience:
                break
    return best, train_loss, val_loss, best_epoch


PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


def init_params(d: int, hidden=(128, 64), seed: int = 0) -> list[np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = (d, *hidden, 1)
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def loss_and_grad(params, X, y):
    """Mean cross-entropy and gradients, one array per parameter in ``PARAM_NAMES`` order."""
    out = _loss_grad(np.ascontiguousarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64),
                     *params)
    return out[0], list(out[1:])


class MLP:
    """ReLU network ``d -> 128 -> 64 -> 1`` fit on mean binary cross-entropy.

    Adam with mini-batches reshuffled every epoch. With early stopping a
    stratified 10% of the rows is held out, training stops after ``patience``
    epochs without a lower validation loss, and the best weights are restored.
    Without it all rows train and the lowest-training-loss epoch is kept.
    """

    def __init__(self, hidden=(128, 64), epochs: int = 100, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 batch_size: int = 32, early_stopping: bool = True,
                 validation_fraction: float = 0.1, patience: int = 10, seed: int = 0):
        if len(hidden) != 2:
            raise ValueError("MLP supports exactly two hidden layers")
        self.hidden = tuple(int(h) for h in hidden)
        self.epochs = epochs
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.batch_size = batch_size
        self.early_stopping = early_stopping
        self.validation_fraction = validation_fraction
        self.patience = patience
        self.seed = seed
        self.params_: list[np.ndarray] | None = None
        self.history_: dict = {}

    def _split(self, y, rng):
        val = []
        for cls in (0, 1):
            members = np.flatnonzero(y == cls)
            n_val = int(np.ceil(self.validation_fraction * len(members)))
            if len(members) - n_val < 1:
                return None
            val.extend(rng.permutation(members)[:n_val].tolist())
        val = np.sort(np.array(val, dtype=np.int64))
        mask = np.ones(len(y), dtype=bool)
        mask[val] = False
        return np.flatnonzero(mask), val

    def fit(self, X, y):
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        rng = np.random.default_rng([self.seed, 1])
        split = self._split(y, rng) if self.early_stopping else None
        if split is None:
            tr, va = np.arange(len(y)), np.arange(0)
        else:
            tr, va = split
        params = init_params(X.shape[1], self.hidden, self.seed)
        perms = np.stack([rng.permutation(len(tr)) for _ in range(self.epochs)]).astype(np.int64)
        Xva = X[va] if len(va) else np.zeros((0, X.shape[1]))
        best, tl, vl, best_epoch = _train(
            X[tr], y[tr], Xva, y[va], *params, perms, int(self.batch_size), float(self.lr),
            float(self.beta1), float(self.beta2), float(self.eps), int(self.patience), len(va) > 0)
        self.params_ = [np.array(p) for p in best]
        ran = int(np.sum(~np.isnan(tl)))
        monitored = vl[:ran] if len(va) else tl[:ran]
        checkpoints = []
        for v in monitored:
            if not checkpoints or v < checkpoints[-1]:
                checkpoints.append(float(v))
        self.history_ = {
            "train_loss": [float(v) for v in tl[:ran]],
            "val_loss": [float(v) for v in vl[:ran]] if len(va) else [],
            "best_epoch": int(best_epoch),
            "checkpoint_losses": checkpoints,
            "n_val": int(len(va)),
        }
        return self

    def decision_function(self, X):
        return _logits(np.ascontiguousarray(X, dtype=np.float64), *self.params_)

    def predict_proba(self, X):
        z = self.decision_function(X)
        return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                        np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))

    def get_state(self):
        return {"hidden": list(self.hidden),
                "params": {k: p.tolist() for k, p in zip(PARAM_NAMES, self.params_)},
                "history": self.history_}

    def set_state(self, s):
        self.hidden = tuple(s["hidden"])
        self.params_ = [np.array(s["params"][k], dtype=np.float64) for k in PARAM_NAMES]
        self.history_ = s.get("history", {})
        return self
