"""Subject-wise stratified K-fold plans."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SingleClass, TooFewSubjects

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoldPlan:
    K: int
    folds: tuple[tuple[np.ndarray, np.ndarray], ...]
    seed: int
    repeat: int = 0

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "seed": self.seed,
            "repeat": self.repeat,
            "folds": [{"train": tr.tolist(), "val": va.tolist()} for tr, va in self.folds],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "FoldPlan":
        folds = tuple((np.array(f["train"], dtype=np.intp), np.array(f["val"], dtype=np.intp))
                      for f in d["folds"])
        return cls(d["K"], folds, d["seed"], d.get("repeat", 0))


def subject_strata(subjects: Sequence[str], labels) -> dict[str, int]:
    """Majority label per subject; a tie goes to class 1."""
    labels = np.asarray(labels)
    out = {}
    for s in dict.fromkeys(subjects):
        sel = labels[np.asarray(subjects) == s]
        out[s] = int((sel == 1).sum() >= (sel == 0).sum())
    return out


def make_folds(subjects: Sequence[str], labels, K: int = 5, seed: int = 42,
               repeat: int = 0) -> FoldPlan:
    """Deal subjects to ``K`` folds, stratified by each subject's majority class.

    Subjects are sorted, shuffled per stratum with a generator seeded by
    ``(seed, repeat)``, then dealt round-robin; the dealing position carries
    over from one stratum to the next so fold sizes stay even. Every sample
    follows its subject.

    ``subjects`` may also be a sequence of objects with a ``subject_id``
    attribute (e.g. :class:`~absorbkit.data.SampleMeta`).
    """
    subjects = [getattr(s, "subject_id", s) for s in subjects]
    labels = np.asarray(labels)
    if len(subjects) != len(labels):
        raise ValueError("subjects and labels differ in length")
    if len(np.unique(labels)) < 2:
        raise SingleClass("make_folds needs both classes present")
    strata = subject_strata(subjects, labels)
    if len(strata) < K:
        raise TooFewSubjects(f"{len(strata)} subjects for K={K} folds")
    subj_arr = np.asarray(subjects, dtype=object)
    carriers = min(len(set(subj_arr[labels == c].tolist())) for c in (0, 1))
    if K > carriers:
        log.warning("K=%d exceeds the %d subjects carrying the rarer class; some validation "
                    "folds may lack a class", K, carriers)
    rng = np.random.default_rng([seed, repeat])
    fold_of = {}
    pos = 0
    for cls in (1, 0):
        members = sorted(s for s, v in strata.items() if v == cls)
        for s in rng.permutation(np.array(members, dtype=object)) if members else []:
            fold_of[s] = pos % K
            pos += 1
    assign = np.array([fold_of[s] for s in subjects])
    idx = np.arange(len(subjects))
    folds = tuple((idx[assign != k], idx[assign == k]) for k in range(K))
    return FoldPlan(K, folds, seed, repeat)
