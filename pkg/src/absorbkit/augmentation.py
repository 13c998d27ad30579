"""SMOTE-plus-perturbation balancing of training segments.

A segment is the set of rows one subject contributed for one condition.
Each training segment is brought to exactly ``target_runs_per_segment`` rows;
optionally the minority class is then oversampled to a 1:1 class ratio.
Only training rows ever reach these functions.
"""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, EmptySegment, TooFewRows


@dataclass(frozen=True)
class AugmentConfig:
    target_runs_per_segment: int = 27
    k_cap: int = 5
    noise_level: float = 0.05
    retention_degree: float = 0.5
    interpolation_proportion: float = 0.8
    seed: int = 42
    perturb_originals: bool = False
    class_balance: bool = True

    def __post_init__(self):
        if self.target_runs_per_segment < 1:
            raise ConfigError("target_runs_per_segment must be >= 1")
        if self.k_cap < 1:
            raise ConfigError("k_cap must be >= 1")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be >= 0")
        if not 0 <= self.retention_degree <= 1:
            raise ConfigError("retention_degree must lie in [0, 1]")
        if not 0 <= self.interpolation_proportion <= 1:
            raise ConfigError("interpolation_proportion must lie in [0, 1]")


def stream_key(*parts) -> list[int]:
    """Stable integer key for ``np.random.default_rng`` from mixed parts."""
    out = []
    for p in parts:
        if isinstance(p, (int, np.integer)):
            out.append(int(p) & 0xFFFFFFFF)
        else:
            out.append(zlib.crc32(str(p).encode("utf-8")))
    return out


def keyed_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(stream_key(*parts))


def k_neighbors_for(min_class_size: int, k_cap: int = 5) -> int:
    """Neighbour count ``min(k_cap, min_class_size - 1)``."""
    return min(k_cap, min_class_size - 1)


def nearest_neighbors(X: np.ndarray, k: int) -> np.ndarray:
    """The ``k`` nearest other rows of each row (Euclidean, ties to lower index)."""
    n = X.shape[0]
    if n <= 256:
        diff = X[:, None, :] - X[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
    else:
        sq = np.einsum("ij,ij->i", X, X)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    np.fill_diagonal(d2, np.inf)
    if n <= 256:
        return np.argsort(d2, axis=1, kind="stable")[:, :k]
    if k < n - 1:
        part = np.argpartition(d2, k, axis=1)[:, : k + 1]
    else:
        part = np.tile(np.arange(n), (n, 1))
    rows = np.arange(n)[:, None]
    order = np.lexsort((part, d2[rows, part]), axis=1)
    return np.take_along_axis(part, order, axis=1)[:, :k]


def smote_interpolate(X_class: np.ndarray, n_new: int, k: int,
                      rng: np.random.Generator) -> np.ndarray:
    """``n_new`` points ``x_i + u (x_nn - x_i)``, base rows cycled in order.

    ``x_nn`` is drawn uniformly from the ``k`` nearest neighbours of ``x_i``
    within ``X_class`` and ``u ~ U[0, 1]``.
    """
    X_class = np.asarray(X_class, dtype=np.float64)
    n, d = X_class.shape
    if n_new == 0:
        return np.zeros((0, d))
    if n < 2:
        raise TooFewRows(f"SMOTE needs at least 2 rows, got {n}")
    if not 1 <= k <= n - 1:
        raise TooFewRows(f"k={k} must lie in [1, {n - 1}]")
    nn = nearest_neighbors(X_class, k)
    base = np.arange(n_new) % n
    pick = nn[base, rng.integers(0, k, size=n_new)]
    u = rng.random(n_new)[:, None]
    return X_class[base] + u * (X_class[pick] - X_class[base])


def perturb(X: np.ndarray, col_sd: np.ndarray, cfg: AugmentConfig,
            rng: np.random.Generator) -> np.ndarray:
    """Blend noise into ``ceil(interpolation_proportion * d)`` random columns per row.

    ``x' = r x + (1 - r)(x + eps)`` with ``eps ~ N(0, (noise_level * sd_col)^2)``
    and ``r = retention_degree``; the other columns pass through untouched.
    Each row is one pass with its own column subset.
    """
    X = np.array(X, dtype=np.float64)
    n, d = X.shape
    if n == 0 or d == 0:
        return X
    n_cols = min(d, math.ceil(cfg.interpolation_proportion * d))
    r = cfg.retention_degree
    for i in range(n):
        cols = rng.choice(d, size=n_cols, replace=False)
        eps = rng.normal(0.0, 1.0, size=n_cols) * cfg.noise_level * col_sd[cols]
        X[i, cols] = r * X[i, cols] + (1.0 - r) * (X[i, cols] + eps)
    return X


@dataclass(frozen=True)
class BalancedSegment:
    X: np.ndarray
    synthetic: np.ndarray  # bool per row
    source_rows: np.ndarray  # index into the input segment, -1 for synthetic rows
    run_ids: np.ndarray  # 1..target
    k_used: int | None
    strategy: str  # "unchanged", "smote" or "replication"


def balance_segment(X_seg: np.ndarray, run_ids: Sequence[int], cfg: AugmentConfig,
                    rng: np.random.Generator, col_sd: np.ndarray | None = None) -> BalancedSegment:
    """Bring one segment to exactly ``cfg.target_runs_per_segment`` rows.

    Runs act as temporary classes. When some run has a single row the runs
    are relabelled into one pseudo-class; a one-row segment falls back to
    replication with noise. New rows come from SMOTE with
    ``k = min(k_cap, min_class_size - 1)`` and are then perturbed. A segment
    with more original rows than the target keeps its first ``target`` rows.
    Output rows get fresh run ids ``1..target``.

    ``col_sd`` sets the noise scale; it should come from the original
    training rows. It defaults to the segment's own column SD.
    """
    X_seg = np.asarray(X_seg, dtype=np.float64)
    n, d = X_seg.shape
    if n == 0:
        raise EmptySegment("segment has no rows")
    target = cfg.target_runs_per_segment
    col_sd = X_seg.std(axis=0) if col_sd is None else np.asarray(col_sd, dtype=np.float64)
    new_runs = np.arange(1, target + 1)
    if n >= target:
        keep = np.arange(target)
        return BalancedSegment(X_seg[keep].copy(), np.zeros(target, dtype=bool), keep, new_runs,
                               None, "unchanged")

    n_new = target - n
    runs = np.asarray(run_ids)
    classes, counts = np.unique(runs, return_counts=True)
    if counts.min() <= 1:
        # minimal pseudo-class: relabel every row of the segment into one class
        classes, counts = np.array([0]), np.array([n])
        runs = np.zeros(n, dtype=np.int64)
    min_class = int(counts.min())
    k = k_neighbors_for(min_class, cfg.k_cap)
    if k >= 1:
        strategy = "smote"
        # deal the new rows to run classes round-robin
        share = np.bincount(np.arange(n_new) % len(classes), minlength=len(classes))
        parts = [smote_interpolate(X_seg[runs == c], int(m), k, rng)
                 for c, m in zip(classes, share)]
        synth = np.vstack(parts)
    else:
        strategy = "replication"
        k = None
        synth = np.repeat(X_seg[:1], n_new, axis=0)
    synth = perturb(synth, col_sd, cfg, rng)
    originals = perturb(X_seg, col_sd, cfg, rng) if cfg.perturb_originals else X_seg.copy()
    X_out = np.vstack([originals, synth])[:target]
    synthetic = np.r_[np.zeros(n, dtype=bool), np.ones(n_new, dtype=bool)]
    source = np.r_[np.arange(n), np.full(n_new, -1)]
    return BalancedSegment(X_out, synthetic, source, new_runs, k, strategy)


@dataclass(frozen=True)
class AugmentedSet:
    """Balanced training matrix with row provenance."""

    X: np.ndarray
    y: np.ndarray
    synthetic: np.ndarray
    segment: list[str]
    subject: list[str]
    run_id: np.ndarray
    source_sample_id: list[str]  # "" for synthetic rows

    def to_csv(self, path, feature_ids: Sequence[int]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "segment", "subject_id", "run_id", "label", "synthetic",
                        "source_sample_id"] + [f"roi_{f:04d}" for f in feature_ids])
            for i in range(len(self.y)):
                w.writerow([i, self.segment[i], self.subject[i], int(self.run_id[i]), int(self.y[i]),
                            bool(self.synthetic[i]), self.source_sample_id[i]]
                           + [repr(float(v)) for v in self.X[i]])


def balance_training_set(X: np.ndarray, y: np.ndarray, subjects: Sequence[str],
                         conditions: Sequence[str], run_ids: Sequence[int],
                         sample_ids: Sequence[str], cfg: AugmentConfig,
                         key: tuple = ()) -> AugmentedSet:
    """Balance every (subject, condition) segment of a training slice.

    ``key`` (e.g. ``(contrast, fold)``) namespaces the per-segment random
    streams, which are keyed by ``(cfg.seed, *key, segment)`` so the output
    does not depend on segment processing order.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    col_sd = X.std(axis=0)
    seg_keys = [f"{s}|{c}" for s, c in zip(subjects, conditions)]
    order = sorted(dict.fromkeys(seg_keys))
    rows_X, rows_y, syn, seg, subj, runs, src = [], [], [], [], [], [], []
    run_ids = np.asarray(run_ids)
    for sk in order:
        idx = np.array([i for i, k in enumerate(seg_keys) if k == sk])
        labels = np.unique(y[idx])
        if len(labels) != 1:
            raise ValueError(f"segment {sk} mixes labels")
        b = balance_segment(X[idx], run_ids[idx], cfg, keyed_rng(cfg.seed, *key, sk), col_sd)
        rows_X.append(b.X)
        rows_y.append(np.full(len(b.X), labels[0]))
        syn.append(b.synthetic)
        seg += [sk] * len(b.X)
        subj += [subjects[idx[0]]] * len(b.X)
        runs.append(b.run_ids)
        src += [sample_ids[idx[j]] if j >= 0 else "" for j in b.source_rows]
    out = AugmentedSet(np.vstack(rows_X), np.concatenate(rows_y), np.concatenate(syn), seg, subj,
                       np.concatenate(runs), src)
    if cfg.class_balance:
        out = balance_classes(out, col_sd, cfg, key)
    return out


def balance_classes(aug: AugmentedSet, col_sd: np.ndarray, cfg: AugmentConfig,
                    key: tuple = ()) -> AugmentedSet:
    """Oversample the minority class with SMOTE (+ perturbation) to a 1:1 ratio.

    Synthetic rows are tagged with the segment label ``class-balance``.
    """
    counts = np.bincount(aug.y, minlength=2)
    if counts[0] == counts[1]:
        return aug
    minority = int(np.argmin(counts))
    n_new = int(counts.max() - counts.min())
    Xm = aug.X[aug.y == minority]
    rng = keyed_rng(cfg.seed, *key, "class-balance")
    k = k_neighbors_for(len(Xm), cfg.k_cap)
    if k >= 1:
        synth = smote_interpolate(Xm, n_new, k, rng)
    else:
        synth = np.repeat(Xm[:1], n_new, axis=0)
    synth = perturb(synth, col_sd, cfg, rng)
    return AugmentedSet(
        np.vstack([aug.X, synth]),
        np.concatenate([aug.y, np.full(n_new, minority)]),
        np.concatenate([aug.synthetic, np.ones(n_new, dtype=bool)]),
        aug.segment + ["class-balance"] * n_new,
        aug.subject + [""] * n_new,
        np.concatenate([aug.run_id, np.arange(1, n_new + 1)]),
        aug.source_sample_id + [""] * n_new,
    )
