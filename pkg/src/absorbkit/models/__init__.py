"""Six classifier families behind one fit / predict_proba contract.

>>> tm = fit(ModelSpec("LR"), X, y)          # doctest: +SKIP
>>> predict_proba(tm, X_new)                  # doctest: +SKIP
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import DataError, DimensionMismatch, NonFiniteInput, SingleClass
from .knn import KNeighbors
from .linear import LinearSVM, LogisticRegression
from .mlp import MLP
from .tree import DecisionTree, RandomForest

FAMILIES = ("LR", "DT", "RF", "SVM_LINEAR", "KNN", "MLP")
STANDARDIZED = frozenset({"LR", "SVM_LINEAR", "MLP"})
FORMAT_VERSION = 1

DEFAULT_HYPER = {
    "LR": {"C": 1.0, "penalty": "l2", "tol": 1e-6, "max_iter": 1000},
    "DT": {"max_depth": 10, "criterion": "gini", "min_samples_split": 2},
    "RF": {"n_estimators": 100, "max_depth": 20, "max_features": "sqrt", "min_samples_split": 2},
    "SVM_LINEAR": {"C": 1.0, "kernel": "linear", "tol": 1e-4, "max_iter": 1000},
    "KNN": {"k": 5, "metric": "euclidean"},
    "MLP": {"hidden": [128, 64], "activation": "relu", "optimizer": "adam", "epochs": 100,
            "lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "batch_size": 32,
            "early_stopping": True, "validation_fraction": 0.1, "patience": 10},
}


@dataclass(frozen=True)
class ModelSpec:
    family: str
    hyper: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown model family {self.family!r}")
        merged = dict(DEFAULT_HYPER[self.family])
        unknown = set(self.hyper) - set(merged)
        if unknown:
            raise DataError(f"unknown hyperparameters for {self.family}: {sorted(unknown)}")
        merged.update(self.hyper)
        object.__setattr__(self, "hyper", merged)

    def to_dict(self):
        return {"family": self.family, "hyper": self.hyper, "seed": self.seed}


def _build(spec: ModelSpec):
    h = spec.hyper
    if spec.family == "LR":
        if h["penalty"].lower() != "l2":
            raise DataError("logistic regression supports the L2 penalty only")
        return LogisticRegression(C=h["C"], tol=h["tol"], max_iter=h["max_iter"])
    if spec.family == "DT":
        return DecisionTree(max_depth=h["max_depth"], min_samples_split=h["min_samples_split"],
                            criterion=h["criterion"])
    if spec.family == "RF":
        return RandomForest(n_estimators=h["n_estimators"], max_depth=h["max_depth"],
                            min_samples_split=h["min_samples_split"],
                            max_features=h["max_features"], seed=spec.seed)
    if spec.family == "SVM_LINEAR":
        if h["kernel"] != "linear":
            raise DataError("only the linear SVM kernel is supported")
        return LinearSVM(C=h["C"], tol=h["tol"], max_iter=h["max_iter"])
    if spec.family == "KNN":
        if h["metric"] != "euclidean":
            raise DataError("only the euclidean metric is supported")
        return KNeighbors(k=h["k"])
    if h["activation"] != "relu" or h["optimizer"] != "adam":
        raise DataError("MLP supports relu activation with the adam optimizer only")
    return MLP(hidden=h["hidden"], epochs=h["epochs"], lr=h["lr"], beta1=h["beta1"],
               beta2=h["beta2"], eps=h["eps"], batch_size=h["batch_size"],
               early_stopping=h["early_stopping"], validation_fraction=h["validation_fraction"],
               patience=h["patience"], seed=spec.seed)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        mean = X.mean(axis=0)
        sd = X.std(axis=0)
        return cls(mean, np.where(sd > 0, sd, 1.0))

    def transform(self, X):
        return (X - self.mean) / self.scale


@dataclass(frozen=True)
class TrainedModel:
    spec: ModelSpec
    estimator: object
    feature_ids: tuple
    standardizer: Standardizer | None
    training_summary: dict

    @property
    def family(self) -> str:
        return self.spec.family

    def _prepare(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_ids):
            raise DimensionMismatch(
                f"{self.family} was fit on {len(self.feature_ids)} features, got shape {X.shape}")
        return self.standardizer.transform(X) if self.standardizer is not None else X

    def predict_proba(self, X) -> np.ndarray:
        return np.clip(self.estimator.predict_proba(self._prepare(X)), 0.0, 1.0)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)

    def decision_function(self, X) -> np.ndarray:
        return self.estimator.decision_function(self._prepare(X))

    def feature_importances(self) -> np.ndarray | None:
        """Impurity importances for trees, |coef| (standardized units) for linear models."""
        if self.family in ("DT", "RF"):
            return np.asarray(self.estimator.feature_importances_)
        if self.family in ("LR", "SVM_LINEAR"):
            return np.abs(self.estimator.coef_)
        return None

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "feature_ids": list(self.feature_ids),
            "standardizer": None if self.standardizer is None else {
                "mean": self.standardizer.mean.tolist(), "scale": self.standardizer.scale.tolist()},
            "training_summary": self.training_summary,
            "state": self.estimator.get_state(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise DataError(f"unsupported model format version {d.get('format_version')!r}")
        s = d["spec"]
        spec = ModelSpec(s["family"], s["hyper"], s["seed"])
        est = _build(spec).set_state(d["state"])
        std = d["standardizer"]
        std = None if std is None else Standardizer(np.array(std["mean"]), np.array(std["scale"]))
        return cls(spec, est, tuple(d["feature_ids"]), std, d["training_summary"])


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise DimensionMismatch(f"X shape {X.shape} does not match {len(y)} labels")
    if not np.isfinite(X).all():
        raise NonFiniteInput("training features contain NaN or inf")
    if not set(np.unique(y).tolist()) <= {0, 1}:
        raise DataError("labels must be binary 0/1")
    if len(np.unique(y)) < 2:
        raise SingleClass("training labels contain a single class")
    return X, y.astype(np.int64)


def fit(spec: ModelSpec, X, y, feature_ids: Sequence[int] | None = None) -> TrainedModel:
    """Fit one family. LR, SVM and MLP get a standardizer fit on ``X`` itself."""
    X, y = _check_xy(X, y)
    feature_ids = tuple(range(X.shape[1])) if feature_ids is None else tuple(feature_ids)
    if len(feature_ids) != X.shape[1]:
        raise DimensionMismatch("feature_ids length does not match X")
    std = Standardizer.fit(X) if spec.family in STANDARDIZED else None
    Xs = std.transform(X) if std is not None else X
    est = _build(spec).fit(Xs, y)
    summary = {"n": int(X.shape[0]), "d": int(X.shape[1])}
    if spec.family == "MLP":
        summary["loss_curve"] = est.history_["train_loss"]
        summary["val_loss_curve"] = est.history_["val_loss"]
        summary["best_epoch"] = est.history_["best_epoch"]
    elif spec.family in ("LR", "SVM_LINEAR"):
        summary["n_iter"] = int(est.n_iter_)
    return TrainedModel(spec, est, feature_ids, std, summary)


def predict_proba(m: TrainedModel, X) -> np.ndarray:
    return m.predict_proba(X)


def save_model(m: TrainedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(m.to_dict(), fh)


def load_model(path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        return TrainedModel.from_dict(json.load(fh))


__all__ = ["FAMILIES", "DEFAULT_HYPER", "ModelSpec", "TrainedModel", "Standardizer", "fit",
           "predict_proba", "save_model", "load_model"]
