"""Synthetic cohorts with known planted signal, standing in for real ReHo tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .data import CONDITIONS, N_ROIS, Dataset, SampleMeta
from .errors import InvalidSpec

COVARIATE_NAMES = ("stability", "width", "quality", "intensity")


@dataclass(frozen=True)
class GeneratorSpec:
    """Shape and signal of a synthetic cohort.

    Features are ``sqrt(rho) * u_subject + sqrt(1 - rho) * e`` with unit total
    variance, so ``within_subject_corr`` is the correlation between two rows
    of the same subject. Rows of ``positive_conditions`` get ``effect_size``
    added on every informative roi.
    """

    n_subjects: int = 20
    runs_min: int = 1
    runs_max: int = 3
    conditions: tuple[str, ...] = ("J1", "J2", "J3", "J4", "J5", "J6", "counting", "memory")
    n_features: int = N_ROIS
    informative_rois: tuple[int, ...] = tuple(range(1, 11))
    effect_size: float = 1.5
    positive_conditions: tuple[str, ...] = ("J1", "J2", "J3", "J4", "J5", "J6")
    within_subject_corr: float = 0.3
    case_j_runs: int = 27
    case_control_runs: int = 16
    with_case: bool = True
    seed: int = 42

    def __post_init__(self):
        if self.n_subjects < 1:
            raise InvalidSpec("n_subjects must be >= 1")
        if not 1 <= self.runs_min <= self.runs_max:
            raise InvalidSpec("need 1 <= runs_min <= runs_max")
        if not 1 <= self.n_features <= N_ROIS:
            raise InvalidSpec(f"n_features must lie in [1, {N_ROIS}]")
        bad = [c for c in self.conditions + self.positive_conditions if c not in CONDITIONS]
        if bad:
            raise InvalidSpec(f"unknown conditions {bad}")
        if any(not 1 <= r <= self.n_features for r in self.informative_rois):
            raise InvalidSpec("informative_rois must lie within 1..n_features")
        if not 0 <= self.within_subject_corr < 1:
            raise InvalidSpec("within_subject_corr must lie in [0, 1)")
        if self.effect_size < 0 or not math.isfinite(self.effect_size):
            raise InvalidSpec("effect_size must be finite and >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown generator keys {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


@dataclass(frozen=True)
class SyntheticCohort:
    group: Dataset
    case: Dataset | None
    covariate_names: tuple[str, ...]
    covariates: dict = field(default_factory=dict)  # sample_id -> list[float | None]


def _rows(spec, rng, subject, cohort, runs_by_condition):
    d = spec.n_features
    rho = spec.within_subject_corr
    u = rng.normal(size=d) * math.sqrt(rho)
    informative = np.array(spec.informative_rois, dtype=np.intp) - 1
    X, meta, cov = [], [], []
    # subject-level traits for the covariates
    trait = rng.normal(size=2)
    for cond, n_runs in runs_by_condition:
        for run in range(1, n_runs + 1):
            x = u + rng.normal(size=d) * math.sqrt(1.0 - rho)
            pos = cond in spec.positive_conditions
            if pos and len(informative):
                x[informative] += spec.effect_size
            sid = f"{cohort}-{subject}-{cond}-r{run}"
            X.append(x)
            meta.append(SampleMeta(sid, subject, cohort, cond, run))
            stab, width = trait + rng.normal(scale=0.5, size=2)
            if cond.startswith("J"):
                q, inten = rng.normal(size=2)
                cov.append((sid, [float(stab), float(width), float(q), float(inten)]))
            else:
                cov.append((sid, [float(stab), float(width), None, None]))
    return X, meta, cov


def generate_synthetic(spec: GeneratorSpec, rng: np.random.Generator | None = None) -> SyntheticCohort:
    """Group cohort of ``n_subjects`` plus one held-out case subject.

    Group subjects contribute ``runs_min..runs_max`` runs per condition.
    The case subject has ``case_j_runs`` runs spread round-robin over the
    J conditions and ``case_control_runs`` runs of each control condition.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    feature_ids = tuple(range(1, spec.n_features + 1))
    X, meta, cov = [], [], []
    width = max(2, len(str(spec.n_subjects)))
    for s in range(1, spec.n_subjects + 1):
        runs = [(c, int(rng.integers(spec.runs_min, spec.runs_max + 1))) for c in spec.conditions]
        x, m, c = _rows(spec, rng, f"S{s:0{width}d}", "group", runs)
        X += x
        meta += m
        cov += c
    group = Dataset(np.array(X), tuple(meta), feature_ids)
    case = None
    if spec.with_case:
        j_conds = [c for c in spec.conditions if c.startswith("J")]
        controls = [c for c in spec.conditions if not c.startswith("J")]
        per_j = np.bincount(np.arange(spec.case_j_runs) % max(1, len(j_conds)),
                            minlength=len(j_conds)) if j_conds else []
        runs = [(c, int(n)) for c, n in zip(j_conds, per_j)]
        runs += [(c, spec.case_control_runs) for c in controls]
        x, m, c = _rows(spec, rng, "CASE", "case", runs)
        case = Dataset(np.array(x), tuple(m), feature_ids)
        cov += c
    return SyntheticCohort(group, case, COVARIATE_NAMES, dict(cov))
