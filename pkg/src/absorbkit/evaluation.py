"""Binary metrics, top-L selection, probability-averaged ensembles and
subject-wise permutation significance."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionMismatch, TooFewCandidates, UndefinedMetric
from .models import FAMILIES, TrainedModel

log = logging.getLogger(__name__)

# JSON / report column names, in display order
TABLE_COLUMNS = ("Acc", "CK", "AUC", "Precision", "Recall", "F1", "Specificity", "p-Value")
_FIELD_OF = {"Acc": "accuracy", "CK": "kappa", "AUC": "auc", "Precision": "precision",
             "Recall": "recall", "F1": "f1", "Specificity": "specificity", "p-Value": "p_value"}


@dataclass(frozen=True)
class MetricsReport:
    """Metrics for one binary evaluation; undefined values are None."""

    accuracy: float
    kappa: float | None
    auc: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    specificity: float | None
    confusion: tuple[int, int, int, int]  # tp, fp, fn, tn
    n: int
    p_value: float | None = None

    def get(self, name: str):
        return getattr(self, _FIELD_OF.get(name, name))

    def to_table_dict(self) -> dict:
        out = {col: self.get(col) for col in TABLE_COLUMNS}
        tp, fp, fn, tn = self.confusion
        out["confusion"] = {"tp": tp, "fp": fp, "fn": fn, "tn": tn}
        out["n"] = self.n
        return out

    @classmethod
    def from_table_dict(cls, d: dict) -> "MetricsReport":
        c = d["confusion"]
        return cls(d["Acc"], d["CK"], d["AUC"], d["Precision"], d["Recall"], d["F1"],
                   d["Specificity"], (c["tp"], c["fp"], c["fn"], c["tn"]), d["n"], d["p-Value"])

    def with_p_value(self, p: float | None) -> "MetricsReport":
        return replace(self, p_value=p)


def confusion(y_true, labels) -> tuple[int, int, int, int]:
    y_true = np.asarray(y_true).astype(np.int64)
    labels = np.asarray(labels).astype(np.int64)
    tp = int(np.sum((y_true == 1) & (labels == 1)))
    fp = int(np.sum((y_true == 0) & (labels == 1)))
    fn = int(np.sum((y_true == 1) & (labels == 0)))
    tn = int(np.sum((y_true == 0) & (labels == 0)))
    return tp, fp, fn, tn


def _ratio(num, den, name, strict):
    if den == 0:
        if strict:
            raise UndefinedMetric(name)
        return None
    return num / den


def kappa_from_confusion(tp, fp, fn, tn, strict=False) -> float | None:
    """Cohen's kappa ``(p_o - p_e) / (1 - p_e)`` in its integer form.

    Multiplying through by ``n**2`` gives
    ``2 (tp*tn - fn*fp) / ((tp+fp)(fp+tn) + (tp+fn)(fn+tn))``, which needs a
    single rounding step, so hand-worked values such as 0.6 come out exact.
    """
    tp, fp, fn, tn = int(tp), int(fp), int(fn), int(tn)
    den = (tp + fp) * (fp + tn) + (tp + fn) * (fn + tn)
    if den == 0:  # p_e == 1
        if strict:
            raise UndefinedMetric("kappa")
        return None
    return 2 * (tp * tn - fn * fp) / den


def auc_score(y_true, scores) -> float | None:
    """Mann-Whitney AUC; tied scores earn half credit. None unless both classes occur."""
    y_true = np.asarray(y_true).astype(np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int((y_true == 1).sum())
    n_neg = int((y_true == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    r = rankdata(scores)  # average ranks for ties
    u = r[y_true == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def compute_metrics(y_true, probs, labels=None) -> MetricsReport:
    """Full metric suite. ``labels`` default to ``probs >= 0.5``."""
    y_true = np.asarray(y_true).astype(np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if len(y_true) == 0:
        raise DimensionMismatch("compute_metrics needs at least one sample")
    if len(probs) != len(y_true):
        raise DimensionMismatch("probs and y_true differ in length")
    labels = (probs >= 0.5).astype(np.int64) if labels is None else np.asarray(labels).astype(np.int64)
    tp, fp, fn, tn = confusion(y_true, labels)
    n = len(y_true)
    precision = _ratio(tp, tp + fp, "precision", False)
    recall = _ratio(tp, tp + fn, "recall", False)
    specificity = _ratio(tn, tn + fp, "specificity", False)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return MetricsReport(
        accuracy=(tp + tn) / n,
        kappa=kappa_from_confusion(tp, fp, fn, tn),
        auc=auc_score(y_true, probs),
        precision=precision,
        recall=recall,
        f1=f1,
        specificity=specificity,
        confusion=(tp, fp, fn, tn),
        n=n,
    )


def summarize(reports: Sequence[MetricsReport]) -> dict:
    """Per-metric mean and SD over reports, skipping undefined values."""
    out = {}
    for col in TABLE_COLUMNS:
        vals = [r.get(col) for r in reports if r.get(col) is not None]
        skipped = len(reports) - len(vals)
        if skipped and col != "p-Value":
            log.info("%s undefined in %d of %d folds; excluded from the mean", col, skipped, len(reports))
        out[col] = {
            "mean": float(np.mean(vals)) if vals else None,
            "sd": float(np.std(vals)) if vals else None,
            "n_defined": len(vals),
        }
    return out


def _sort_key(score: float | None) -> float:
    return -math.inf if score is None else score


def rank_candidates(scores: Mapping[str, tuple[float | None, float | None]]) -> list[str]:
    """Order families by primary score desc, then AUC desc, then fixed family order."""
    return sorted(scores, key=lambda f: (-_sort_key(scores[f][0]), -_sort_key(scores[f][1]),
                                         FAMILIES.index(f)))


def select_top(candidates: Mapping[str, TrainedModel], X_val, y_val, L: int = 3,
               metric: str = "kappa") -> tuple[list[TrainedModel], dict]:
    """Top-``L`` candidates by validation ``metric`` (kappa or accuracy).

    Returns the chosen models and the per-family ``(metric, auc)`` scores.
    """
    if len(candidates) < L:
        raise TooFewCandidates(f"{len(candidates)} candidates for L={L}")
    scores = {}
    for fam, m in candidates.items():
        rep = compute_metrics(y_val, m.predict_proba(X_val))
        scores[fam] = (rep.kappa if metric == "kappa" else rep.accuracy, rep.auc)
    order = rank_candidates(scores)
    return [candidates[f] for f in order[:L]], scores


@dataclass(frozen=True)
class Ensemble:
    members: tuple[TrainedModel, ...]
    threshold: float = 0.5

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        ids = {m.feature_ids for m in self.members}
        if len(ids) != 1:
            raise DimensionMismatch("ensemble members were fit on different feature sets")

    @property
    def feature_ids(self):
        return self.members[0].feature_ids

    @property
    def families(self) -> list[str]:
        return [m.family for m in self.members]

    def predict_proba(self, X) -> np.ndarray:
        return ensemble_predict(self, X)[0]

    def predict(self, X) -> np.ndarray:
        return ensemble_predict(self, X)[1]


def ensemble_predict(e: Ensemble, X) -> tuple[np.ndarray, np.ndarray]:
    """Mean member probability and the thresholded label (>= is class 1)."""
    stacked = np.sort(np.array([m.predict_proba(X) for m in e.members]), axis=0)
    # summing in sorted order makes the mean independent of member order
    probs = stacked.sum(axis=0) / len(e.members)
    return probs, (probs >= e.threshold).astype(np.int64)


def permute_subjectwise(labels, subjects, rng: np.random.Generator, units=None) -> np.ndarray:
    """One subject-respecting label permutation.

    ``units`` (default: one unit per row) groups rows that must share a
    label, e.g. the segments of a subject. When every subject carries a
    single label, whole-subject labels are shuffled across subjects.
    Otherwise unit labels are shuffled within each subject, which keeps
    every subject's class balance.
    """
    labels = np.asarray(labels)
    subjects = np.asarray(subjects)
    units = np.arange(len(labels)) if units is None else np.asarray(units)
    uniq = list(dict.fromkeys(subjects.tolist()))
    groups = [np.flatnonzero(subjects == s) for s in uniq]
    out = labels.copy()
    if all(len(np.unique(labels[g])) == 1 for g in groups):
        subj_labels = np.array([labels[g[0]] for g in groups])
        shuffled = rng.permutation(subj_labels)
        for g, lab in zip(groups, shuffled):
            out[g] = lab
        return out
    for g in groups:
        unit_keys = list(dict.fromkeys(units[g].tolist()))
        rows = [g[units[g] == u] for u in unit_keys]
        unit_labels = []
        for r in rows:
            if len(np.unique(labels[r])) != 1:
                raise ValueError("rows of one permutation unit carry different labels")
            unit_labels.append(labels[r[0]])
        for r, lab in zip(rows, rng.permutation(np.array(unit_labels))):
            out[r] = lab
    return out


def p_value_from_null(observed: float, null: Sequence[float]) -> float:
    null = np.asarray(null, dtype=np.float64)
    return float((1 + np.sum(null >= observed)) / (1 + len(null)))


def permutation_test(score_fn: Callable[[np.ndarray, int], float], labels, subjects,
                     observed: float, iterations: int = 1000, seed: int = 42,
                     n_jobs: int = 1, units=None) -> tuple[float, np.ndarray]:
    """Right-tailed permutation p-value ``(1 + #{null >= observed}) / (1 + iterations)``.

    ``score_fn(permuted_labels, iteration)`` reruns the scoring path. Each
    iteration draws from its own stream ``(seed, iteration)``, so the null is
    independent of execution order. With ``n_jobs > 1`` iterations run in a
    thread pool (numba/BLAS kernels release the GIL); results are reduced in
    iteration order.
    """
    perms = [permute_subjectwise(labels, subjects, np.random.default_rng([seed, i]), units)
             for i in range(iterations)]
    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(n_jobs) as ex:
            null = list(ex.map(lambda a: score_fn(*a), zip(perms, range(iterations))))
    else:
        null = [score_fn(p, i) for i, p in enumerate(perms)]
    null = np.asarray(null, dtype=np.float64)
    return p_value_from_null(observed, null), null
