"""Regress covariates out of features with a transform frozen at fit time."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import CovariateMismatch, DataError, RankDeficient

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ResidualModel:
    """``coef[0]`` is the per-roi intercept, ``coef[1 + j]`` the slope on covariate ``j``."""

    coef: np.ndarray  # (1 + n_covariates, n_features)
    covariate_names: tuple[str, ...]
    fit_n: int
    cov_min: np.ndarray
    cov_max: np.ndarray

    def to_dict(self) -> dict:
        return {"coef": self.coef.tolist(), "covariate_names": list(self.covariate_names),
                "fit_n": self.fit_n}


def _design(C):
    C = np.asarray(C, dtype=np.float64)
    if C.ndim == 1:
        C = C[:, None]
    return np.hstack([np.ones((C.shape[0], 1)), C]), C


def fit_residualizer(X, C, covariate_names: Sequence[str] | None = None) -> ResidualModel:
    """Per-feature OLS of ``X`` on ``[1, C]``."""
    X = np.asarray(X, dtype=np.float64)
    A, C = _design(C)
    if A.shape[0] != X.shape[0]:
        raise DataError("covariate and feature rows differ in count")
    names = tuple(covariate_names) if covariate_names is not None else tuple(
        f"c{j}" for j in range(C.shape[1]))
    if len(names) != C.shape[1]:
        raise CovariateMismatch("covariate_names length does not match C")
    rank = np.linalg.matrix_rank(A)
    if rank < A.shape[1]:
        # report the covariates that are spanned by the earlier columns
        bad = [names[j - 1] for j in range(1, A.shape[1])
               if np.linalg.matrix_rank(A[:, :j + 1]) <= np.linalg.matrix_rank(A[:, :j])]
        raise RankDeficient(bad)
    coef = np.linalg.lstsq(A, X, rcond=None)[0]
    return ResidualModel(coef, names, int(X.shape[0]), C.min(axis=0), C.max(axis=0))


def apply_residualizer(m: ResidualModel, X, C, covariate_names: Sequence[str] | None = None) -> np.ndarray:
    """``X - [1, C] @ coef``; never refits."""
    if covariate_names is not None and tuple(covariate_names) != m.covariate_names:
        raise CovariateMismatch(f"expected covariates {list(m.covariate_names)}, "
                                f"got {list(covariate_names)}")
    A, C = _design(C)
    if C.shape[1] != len(m.covariate_names):
        raise CovariateMismatch("covariate column count differs from the fitted model")
    outside = (C < m.cov_min) | (C > m.cov_max)
    if outside.any():
        log.info("%d rows have covariates outside the fit range; extrapolating linearly",
                 int(outside.any(axis=1).sum()))
    return np.asarray(X, dtype=np.float64) - A @ m.coef


def covariate_matrix(sample_ids: Sequence[str], names: Sequence[str],
                     values: Mapping[str, Sequence[float | None]], fill: np.ndarray | None = None
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Rows of covariates for ``sample_ids``; missing cells are replaced.

    Missing values take ``fill`` (per-covariate), which should be the mean of
    the training rows; pass None to compute it from the rows given here.
    Returns ``(matrix, fill_used)``. A sample absent from ``values`` is a
    data error.
    """
    rows = []
    for sid in sample_ids:
        if sid not in values:
            raise DataError(f"no covariates for sample {sid!r}")
        rows.append([np.nan if v is None else float(v) for v in values[sid]])
    M = np.array(rows, dtype=np.float64).reshape(len(sample_ids), len(names))
    if fill is None:
        with np.errstate(invalid="ignore"):
            counts = np.sum(~np.isnan(M), axis=0)
            fill = np.where(counts > 0, np.nansum(M, axis=0) / np.maximum(counts, 1), 0.0)
    M = np.where(np.isnan(M), fill[None, :], M)
    return M, np.asarray(fill, dtype=np.float64)


def usable_covariates(M: np.ndarray, names: Sequence[str]) -> list[int]:
    """Indices of covariate columns that vary over the given rows."""
    return [j for j in range(M.shape[1]) if np.ptp(M[:, j]) > 0]
