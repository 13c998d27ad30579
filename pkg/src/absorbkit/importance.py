"""Per-model feature impact, view aggregation and leave-one-region-out drop counts."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import RoiRegistry
from .evaluation import confusion, kappa_from_confusion
from .selection import normalize01

VIEWS = ("forest", "linear", "permutation")


def _metric_fn(metric: str) -> Callable[[np.ndarray, np.ndarray], float]:
    # these probes run thousands of times; skip the full metric suite
    def accuracy(y, probs):
        return float(np.count_nonzero((probs >= 0.5) == (y == 1))) / len(y)

    def kappa(y, probs):
        v = kappa_from_confusion(*confusion(y, probs >= 0.5))
        return 0.0 if v is None else float(v)
    return accuracy if metric == "accuracy" else kappa


def permutation_importance(predict_proba: Callable[[np.ndarray], np.ndarray], X_eval, y_eval,
                           repeats: int = 10, rng: np.random.Generator | None = None,
                           metric: str = "accuracy") -> np.ndarray:
    """Baseline metric minus the mean metric with one column shuffled, floored at 0.

    ``predict_proba`` may be a model's or an ensemble's bound method.
    """
    X_eval = np.asarray(X_eval, dtype=np.float64)
    y_eval = np.asarray(y_eval)
    rng = np.random.default_rng(0) if rng is None else rng
    score = _metric_fn(metric)
    base = score(y_eval, predict_proba(X_eval))
    n, d = X_eval.shape
    out = np.zeros(d)
    for j in range(d):
        Xp = X_eval.copy()
        drops = []
        for _ in range(repeats):
            Xp[:, j] = X_eval[rng.permutation(n), j]
            drops.append(score(y_eval, predict_proba(Xp)))
        out[j] = max(0.0, base - float(np.mean(drops)))
    return out


def aggregate_views(per_view: Mapping[str, np.ndarray | None]) -> np.ndarray:
    """Per-feature mean over the views that are present (not None)."""
    present = [np.asarray(v, dtype=np.float64) for v in per_view.values() if v is not None]
    if not present:
        raise ValueError("at least one importance view is required")
    return np.mean(np.vstack(present), axis=0)


def leave_one_region_out(predictors: Sequence[Callable[[np.ndarray], np.ndarray]], X_eval, y_eval,
                         train_mean) -> np.ndarray:
    """Count, per column, the predictors whose accuracy strictly drops when the
    column is replaced by its training mean."""
    X_eval = np.asarray(X_eval, dtype=np.float64)
    y_eval = np.asarray(y_eval)
    train_mean = np.asarray(train_mean, dtype=np.float64)
    score = _metric_fn("accuracy")
    base = [score(y_eval, p(X_eval)) for p in predictors]
    counts = np.zeros(X_eval.shape[1], dtype=np.int64)
    for j in range(X_eval.shape[1]):
        Xn = X_eval.copy()
        Xn[:, j] = train_mean[j]
        counts[j] = sum(score(y_eval, p(Xn)) < b for p, b in zip(predictors, base))
    return counts


@dataclass(frozen=True)
class ImportanceMap:
    feature_ids: tuple[int, ...]
    per_view: dict  # view -> normalized array or None
    aggregated: np.ndarray
    loro_drop_counts: np.ndarray
    n_classifiers: int

    @classmethod
    def build(cls, feature_ids, raw_views: Mapping[str, np.ndarray | None], loro_drop_counts,
              n_classifiers: int) -> "ImportanceMap":
        per_view = {v: (None if raw_views.get(v) is None else normalize01(raw_views[v]))
                    for v in VIEWS}
        return cls(tuple(feature_ids), per_view, aggregate_views(per_view),
                   np.asarray(loro_drop_counts, dtype=np.int64), n_classifiers)

    def top(self, n: int) -> list[int]:
        """Roi ids of the ``n`` largest aggregated values; ties to the lower id."""
        order = np.lexsort((np.array(self.feature_ids), -self.aggregated))
        return [self.feature_ids[i] for i in order[:n]]

    def to_csv(self, path, registry: RoiRegistry) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["roi_id", "roi_name", "atlas", "view_forest", "view_linear",
                        "view_permutation", "aggregated", "loro_drop_count"])
            for i, f in enumerate(self.feature_ids):
                e = registry[f]
                views = ["" if self.per_view[v] is None else repr(float(self.per_view[v][i]))
                         for v in VIEWS]
                w.writerow([f, e.name, e.atlas, *views, repr(float(self.aggregated[i])),
                            int(self.loro_drop_counts[i])])
