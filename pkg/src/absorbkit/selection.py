"""Multi-view feature ranking, pre-keep and guarded recursive feature elimination."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, DegenerateFit
from .evaluation import compute_metrics
from .models import ModelSpec, fit

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectionConfig:
    prekeep_fraction: float = 0.50
    rfe_step_fraction: float = 0.05
    rfe_min_features: int = 10
    rfe_delta: float = 0.01
    mi_bins: int = 10
    rfe_rule: str = "step"  # or "threshold": drop features with normalized importance < 0.5
    guard_metric: str = "kappa"
    consensus_policy: str = "majority"
    prior_roi_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        for name in ("prekeep_fraction", "rfe_step_fraction"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")
        if self.rfe_min_features < 1:
            raise ConfigError("rfe_min_features must be >= 1")
        if self.rfe_rule not in ("step", "threshold"):
            raise ConfigError(f"unknown rfe_rule {self.rfe_rule!r}")
        if self.guard_metric not in ("kappa", "accuracy"):
            raise ConfigError(f"unknown guard_metric {self.guard_metric!r}")
        if self.consensus_policy not in ("union", "majority", "intersection"):
            raise ConfigError(f"unknown consensus_policy {self.consensus_policy!r}")


@dataclass
class SelectionResult:
    """Indices refer to columns of the matrix handed to the selector."""

    consensus_rank: np.ndarray
    prekeep_set: list[int]
    rfe_trace: list[tuple[int, float]] = field(default_factory=list)
    selected: list[int] = field(default_factory=list)
    best_score: float = -math.inf

    def to_dict(self, feature_ids: Sequence[int]) -> dict:
        fid = [int(f) for f in feature_ids]
        return {
            "consensus_rank": {str(f): float(r) for f, r in zip(fid, self.consensus_rank)},
            "prekeep_set": [fid[i] for i in self.prekeep_set],
            "rfe_trace": [{"n_features": int(n), "val_score": float(s)} for n, s in self.rfe_trace],
            "selected": [fid[i] for i in self.selected],
            "best_score": float(self.best_score),
        }


def mutual_information(x, y, bins: int = 10) -> float:
    """Plug-in MI (nats) between ``x`` cut into equal-frequency bins and binary ``y``.

    Bin edges are interior quantiles; repeated edges merge, so tied values
    always share a bin.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if np.ptp(x) == 0:
        return 0.0
    edges = np.unique(np.quantile(x, np.linspace(0.0, 1.0, bins + 1)[1:-1]))
    codes = np.searchsorted(edges, x, side="right")
    joint = np.zeros((len(edges) + 1, 2))
    np.add.at(joint, (codes, y), 1.0)
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(max(0.0, np.sum(joint[nz] * np.log(joint[nz] / (px @ py)[nz]))))


def rank_percentile(score: np.ndarray) -> np.ndarray:
    """Map scores to [0, 1] ranks with 0 for the highest score; ties share the average rank."""
    score = np.asarray(score, dtype=np.float64)
    d = len(score)
    if d == 1:
        return np.zeros(1)
    return (rankdata(-score, method="average") - 1.0) / (d - 1)


@dataclass(frozen=True)
class MultiviewRanking:
    rf_score: np.ndarray
    lin_score: np.ndarray
    mi_score: np.ndarray
    consensus: np.ndarray


def rank_multiview(X_train, y_train, seed: int = 42, rf_hyper: dict | None = None,
                   lr_hyper: dict | None = None, mi_bins: int = 10) -> MultiviewRanking:
    """Average the percentile ranks of forest importance, |LR coefficient| and MI."""
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train)
    if min(np.sum(y_train == 0), np.sum(y_train == 1)) < 2:
        raise DegenerateFit("ranking needs at least two samples per class")
    rf = fit(ModelSpec("RF", rf_hyper or {}, seed), X_train, y_train)
    lr = fit(ModelSpec("LR", lr_hyper or {}, seed), X_train, y_train)
    rf_score = rf.feature_importances()
    lin_score = lr.feature_importances()
    mi_score = np.array([mutual_information(X_train[:, j], y_train, mi_bins)
                         for j in range(X_train.shape[1])])
    for name, s in (("forest", rf_score), ("linear", lin_score), ("mi", mi_score)):
        if not np.isfinite(s).all():
            raise DegenerateFit(f"{name} view produced non-finite scores")
    consensus = (rank_percentile(rf_score) + rank_percentile(lin_score)
                 + rank_percentile(mi_score)) / 3.0
    return MultiviewRanking(rf_score, lin_score, mi_score, consensus)


def prekeep(consensus_rank, fraction: float = 0.5, feature_ids: Sequence[int] | None = None) -> list[int]:
    """Column indices of the ``ceil(fraction * d)`` lowest ranks; ties favour the lower roi id."""
    consensus_rank = np.asarray(consensus_rank, dtype=np.float64)
    d = len(consensus_rank)
    ids = np.arange(d) if feature_ids is None else np.asarray(feature_ids)
    n_keep = min(d, math.ceil(fraction * d))
    order = np.lexsort((ids, consensus_rank))
    return sorted(order[:n_keep].tolist())


def normalize01(v) -> np.ndarray:
    """Min-max scaling to [0, 1]; a constant vector maps to zeros."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return v.copy()
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def _guard_score(y, probs, metric):
    rep = compute_metrics(y, probs)
    score = rep.kappa if metric == "kappa" else rep.accuracy
    return 0.0 if score is None else float(score)


def forest_evaluator(X_train, y_train, X_val, y_val, seed: int = 42, rf_hyper: dict | None = None,
                     metric: str = "kappa") -> Callable[[list[int]], tuple[float, np.ndarray]]:
    """Scorer for :func:`rfe_with_guard`: fit a forest on a column subset, score on validation."""

    def evaluate(cols):
        rf = fit(ModelSpec("RF", rf_hyper or {}, seed), X_train[:, cols], y_train)
        return _guard_score(y_val, rf.predict_proba(X_val[:, cols]), metric), rf.feature_importances()

    return evaluate


def rfe_with_guard(evaluate: Callable[[list[int]], tuple[float, np.ndarray]], start_set: Sequence[int],
                   cfg: SelectionConfig, feature_ids: Sequence[int] | None = None) -> SelectionResult:
    """Recursive elimination with a validation guard.

    ``evaluate(cols)`` returns ``(validation_score, importances)`` for a
    forest fit on ``cols``. While more than ``rfe_min_features`` remain the
    current set is scored; the loop stops when the score falls more than
    ``rfe_delta`` below the best so far. Otherwise the
    ``ceil(step * |current|)`` least important features are dropped (never
    going below the floor); equal importances drop the higher roi id first.
    The best-scoring set is returned; a start set already at the floor is
    returned unchanged with an empty trace.
    """
    current = sorted(int(c) for c in start_set)
    if not current:
        raise ValueError("start_set is empty")
    ids = np.arange(max(current) + 1) if feature_ids is None else np.asarray(feature_ids)
    best_score = -math.inf
    best = list(current)
    trace = []
    while len(current) > cfg.rfe_min_features:
        score, imp = evaluate(current)
        trace.append((len(current), float(score)))
        if score < best_score - cfg.rfe_delta:
            break
        if score > best_score:
            best_score = score
            best = list(current)
        imp = np.asarray(imp, dtype=np.float64)
        room = len(current) - cfg.rfe_min_features
        if cfg.rfe_rule == "step":
            n_drop = min(room, math.ceil(cfg.rfe_step_fraction * len(current)))
        else:
            n_drop = min(room, max(1, int(np.sum(normalize01(imp) < 0.5))))
        cur_ids = ids[np.array(current)]
        # weakest first; among equals the higher roi id goes first
        order = np.lexsort((-cur_ids, imp))
        drop = set(order[:n_drop].tolist())
        current = [c for j, c in enumerate(current) if j not in drop]
    return SelectionResult(np.array([]), [], trace, sorted(best), float(best_score))


def consensus_global(per_fold_sets: Sequence[Sequence[int]], policy: str = "majority") -> list[int]:
    """Combine per-fold selections. Majority keeps features chosen in more than K/2 folds."""
    if not per_fold_sets:
        raise ValueError("need at least one fold set")
    k = len(per_fold_sets)
    counts: dict[int, int] = {}
    for s in per_fold_sets:
        for f in set(s):
            counts[f] = counts.get(f, 0) + 1
    if policy == "union":
        return sorted(counts)
    if policy == "intersection":
        out = sorted(f for f, c in counts.items() if c == k)
        if out:
            return out
        log.warning("intersection of fold selections is empty; falling back to majority")
        policy = "majority"
    if policy == "majority":
        return sorted(f for f, c in counts.items() if c > k / 2)
    raise ConfigError(f"unknown consensus policy {policy!r}")
