"""Datasets, the ROI registry, contrasts and CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DataError,
    DuplicateSampleId,
    EmptyClass,
    MissingColumn,
    NonNumericValue,
    UnknownRoiId,
)

ATLAS_SIZES = {"cortical": 400, "subcortical": 32, "brainstem": 54, "cerebellar": 10}
ATLAS_PREFIX = {
    "cortical": "Schaefer400",
    "subcortical": "Tian32",
    "brainstem": "Bianciardi54",
    "cerebellar": "MDTB10",
    "unassigned": "Unassigned",
}
N_ROIS = 498

J_STATES = tuple(f"J{i}" for i in range(1, 9))
CONDITIONS = J_STATES + ("access", "afterglow", "counting", "memory")
COHORTS = ("group", "case")
META_COLUMNS = ("sample_id", "subject_id", "cohort", "condition", "run_id")


def roi_column(roi_id: int) -> str:
    return f"roi_{roi_id:04d}"


@dataclass(frozen=True)
class RoiEntry:
    roi_id: int
    name: str
    atlas: str
    network_tag: str | None = None


@dataclass(frozen=True)
class RoiRegistry:
    """Ordered ROI table; roi ids are contiguous starting at 1."""

    entries: tuple[RoiEntry, ...]

    def __post_init__(self):
        ids = [e.roi_id for e in self.entries]
        if ids != list(range(1, len(ids) + 1)):
            raise DataError("registry roi_ids must be unique and contiguous from 1")

    @classmethod
    def default(cls) -> "RoiRegistry":
        """The 498-entry registry with placeholder names.

        The four atlases contribute 400 + 32 + 54 + 10 = 496 parcels. The two
        remaining ids (497, 498) are kept as ``unassigned`` so that the
        registry length matches the 498-column feature schema.
        """
        entries = []
        rid = 1
        for atlas, size in ATLAS_SIZES.items():
            for i in range(1, size + 1):
                entries.append(RoiEntry(rid, f"{ATLAS_PREFIX[atlas]}_{i:03d}", atlas))
                rid += 1
        for i in range(1, N_ROIS - rid + 2):
            entries.append(RoiEntry(rid, f"{ATLAS_PREFIX['unassigned']}_{i:03d}", "unassigned"))
            rid += 1
        return cls(tuple(entries))

    @classmethod
    def from_csv(cls, path) -> "RoiRegistry":
        """Load a registry from ``roi_id,name,atlas[,network_tag]`` rows."""
        entries = []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                tag = row.get("network_tag") or None
                entries.append(RoiEntry(int(row["roi_id"]), row["name"], row["atlas"], tag))
        return cls(tuple(entries))

    def __len__(self):
        return len(self.entries)

    def __contains__(self, roi_id):
        return 1 <= roi_id <= len(self.entries)

    def __getitem__(self, roi_id: int) -> RoiEntry:
        if roi_id not in self:
            raise UnknownRoiId(roi_id)
        return self.entries[roi_id - 1]

    @property
    def roi_ids(self) -> tuple[int, ...]:
        return tuple(e.roi_id for e in self.entries)

    def atlas_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for e in self.entries:
            counts[e.atlas] = counts.get(e.atlas, 0) + 1
        return counts


@dataclass(frozen=True)
class SampleMeta:
    sample_id: str
    subject_id: str
    cohort: str
    condition: str
    run_id: int

    def __post_init__(self):
        if self.cohort not in COHORTS:
            raise DataError(f"unknown cohort {self.cohort!r}")
        if self.condition not in CONDITIONS:
            raise DataError(f"unknown condition {self.condition!r}")
        if self.run_id < 1:
            raise DataError(f"run_id must be positive, got {self.run_id}")

    @property
    def segment_key(self) -> str:
        return f"{self.subject_id}|{self.condition}"


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with per-row metadata and per-column roi ids.

    The feature array is made read-only on construction.
    """

    features: np.ndarray
    meta: tuple[SampleMeta, ...]
    feature_ids: tuple[int, ...]

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, copy=True)
        if X.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "meta", tuple(self.meta))
        object.__setattr__(self, "feature_ids", tuple(int(f) for f in self.feature_ids))
        if X.shape[0] != len(self.meta):
            raise DataError(f"{X.shape[0]} feature rows but {len(self.meta)} metadata rows")
        if X.shape[1] != len(self.feature_ids):
            raise DataError("feature_ids length does not match the column count")
        if not np.isfinite(X).all():
            raise DataError("features contain missing or non-finite values")
        if len(set(self.feature_ids)) != len(self.feature_ids):
            raise DataError("duplicate feature ids")
        seen_ids = set()
        keys = set()
        case_subjects = set()
        for m in self.meta:
            if m.sample_id in seen_ids:
                raise DuplicateSampleId(m.sample_id)
            seen_ids.add(m.sample_id)
            key = (m.cohort, m.subject_id, m.condition, m.run_id)
            if key in keys:
                raise DataError(f"duplicate (subject, condition, run) {key[1:]} in cohort {m.cohort}")
            keys.add(key)
            if m.cohort == "case":
                case_subjects.add(m.subject_id)
        if len(case_subjects) > 1:
            raise DataError(f"case cohort must contain one subject, found {sorted(case_subjects)}")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def sample_ids(self) -> list[str]:
        return [m.sample_id for m in self.meta]

    @property
    def subject_ids(self) -> np.ndarray:
        return np.array([m.subject_id for m in self.meta], dtype=object)

    @property
    def conditions(self) -> list[str]:
        return [m.condition for m in self.meta]

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(self.features[rows], tuple(self.meta[i] for i in rows), self.feature_ids)

    def with_features(self, features: np.ndarray, feature_ids: Sequence[int] | None = None) -> "Dataset":
        return Dataset(features, self.meta, self.feature_ids if feature_ids is None else feature_ids)

    def column_indices(self, roi_ids: Iterable[int]) -> np.ndarray:
        lookup = {f: i for i, f in enumerate(self.feature_ids)}
        return np.array([lookup[r] for r in roi_ids], dtype=np.intp)

    def select_rois(self, roi_ids: Sequence[int]) -> "Dataset":
        return Dataset(self.features[:, self.column_indices(roi_ids)], self.meta, roi_ids)


@dataclass(frozen=True)
class Contrast:
    name: str
    positive: frozenset = field()
    negative: frozenset = field()

    def __post_init__(self):
        object.__setattr__(self, "positive", frozenset(self.positive))
        object.__setattr__(self, "negative", frozenset(self.negative))
        if not self.positive or not self.negative:
            raise DataError(f"contrast {self.name!r} needs non-empty positive and negative sets")
        overlap = self.positive & self.negative
        if overlap:
            raise DataError(f"contrast {self.name!r} has overlapping conditions {sorted(overlap)}")
        unknown = (self.positive | self.negative) - set(CONDITIONS)
        if unknown:
            raise DataError(f"contrast {self.name!r} has unknown conditions {sorted(unknown)}")

    @property
    def slug(self) -> str:
        return self.name.replace(" ", "_")


def default_contrasts() -> list[Contrast]:
    """The 20 default comparisons between stages and control tasks."""
    j = [f"J{i}" for i in range(1, 7)]
    out = [
        Contrast("J vs control", j, {"counting", "memory"}),
        Contrast("J vs counting", j, {"counting"}),
    ]
    out += [Contrast(f"{s} vs counting", {s}, {"counting"}) for s in j]
    out += [Contrast(f"{s} vs memory", {s}, {"memory"}) for s in j]
    out += [Contrast(f"{a} vs {b}", {a}, {b}) for a, b in zip(j, j[1:])]
    out.append(Contrast("J1 vs J6", {"J1"}, {"J6"}))
    return out


def contrast_by_name(name: str, contrasts: Sequence[Contrast] | None = None) -> Contrast:
    for c in contrasts if contrasts is not None else default_contrasts():
        if c.name == name or c.slug == name:
            return c
    raise DataError(f"unknown contrast {name!r}")


def select_contrast(ds: Dataset, c: Contrast) -> tuple[Dataset, np.ndarray]:
    """Keep rows whose condition is on either side of ``c``; label positives 1."""
    cond = ds.conditions
    rows = [i for i, k in enumerate(cond) if k in c.positive or k in c.negative]
    labels = np.array([1 if cond[i] in c.positive else 0 for i in rows], dtype=np.int64)
    if not (labels == 1).any():
        raise EmptyClass("positive")
    if not (labels == 0).any():
        raise EmptyClass("negative")
    return ds.take(rows), labels


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise NonNumericValue(row, col, text) from None
    if not math.isfinite(value):
        raise NonNumericValue(row, col, text)
    return value


def _open_table(path):
    try:
        return open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e


def load_feature_table(path, registry: RoiRegistry | None = None) -> Dataset:
    """Read a feature CSV (``sample_id,subject_id,cohort,condition,run_id,roi_XXXX...``).

    Row indices in errors are 0-based over data rows (the header excluded).
    """
    registry = registry if registry is not None else RoiRegistry.default()
    path = Path(path)
    with _open_table(path) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn("sample_id") from None
        for col in META_COLUMNS:
            if col not in header:
                raise MissingColumn(col)
        pos = {name: i for i, name in enumerate(header)}
        roi_cols = [h for h in header if h not in META_COLUMNS]
        feature_ids = []
        for h in roi_cols:
            if not (h.startswith("roi_") and h[4:].isdigit()):
                raise DataError(f"unexpected column {h!r}")
            rid = int(h[4:])
            if rid not in registry:
                raise UnknownRoiId(rid)
            feature_ids.append(rid)
        roi_pos = [pos[h] for h in roi_cols]
        meta, rows = [], []
        seen = set()
        for r, rec in enumerate(reader):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"row {r} has {len(rec)} fields, expected {len(header)}")
            sid = rec[pos["sample_id"]]
            if sid in seen:
                raise DuplicateSampleId(sid)
            seen.add(sid)
            try:
                run_id = int(rec[pos["run_id"]])
            except ValueError:
                raise NonNumericValue(r, "run_id", rec[pos["run_id"]]) from None
            meta.append(SampleMeta(sid, rec[pos["subject_id"]], rec[pos["cohort"]],
                                   rec[pos["condition"]], run_id))
            rows.append([_parse_float(rec[p], r, h) for p, h in zip(roi_pos, roi_cols)])
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_ids))
    return Dataset(X, tuple(meta), tuple(feature_ids))


def write_feature_table(ds: Dataset, path) -> None:
    """Write ``ds`` in the CSV schema; floats use shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(META_COLUMNS) + [roi_column(f) for f in ds.feature_ids])
        for m, row in zip(ds.meta, ds.features):
            w.writerow([m.sample_id, m.subject_id, m.cohort, m.condition, m.run_id]
                       + [repr(float(v)) for v in row])


def load_covariates(path) -> tuple[list[str], dict[str, list[float | None]]]:
    """Read a covariate CSV ``sample_id,<name>...``; blank cells become None."""
    with _open_table(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "sample_id":
            raise MissingColumn("sample_id")
        names = header[1:]
        values: dict[str, list[float | None]] = {}
        for r, rec in enumerate(reader):
            if not rec:
                continue
            if rec[0] in values:
                raise DuplicateSampleId(rec[0])
            values[rec[0]] = [None if cell.strip() == "" else _parse_float(cell, r, name)
                              for cell, name in zip(rec[1:], names)]
    return names, values


def write_covariates(names: Sequence[str], values: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", *names])
        for sid, vals in values.items():
            w.writerow([sid] + ["" if v is None else repr(float(v)) for v in vals])
