"""Two-step protocol: subject-wise group CV, then one test on the held-out case subject."""

from __future__ import annotations

import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .augmentation import AugmentedSet, balance_classes, balance_training_set
from .config import PipelineConfig
from .data import (Contrast, Dataset, RoiRegistry, contrast_by_name, load_covariates,
                   load_feature_table, select_contrast)
from .errors import AbsorbError, CaseMissingFeatures, ConfigError, DataError
from .evaluation import (Ensemble, MetricsReport, compute_metrics, ensemble_predict,
                         permutation_test, rank_candidates, select_top, summarize)
from .importance import ImportanceMap, leave_one_region_out, permutation_importance
from .augmentation import keyed_rng
from .models import TrainedModel, fit, save_model
from .residual import apply_residualizer, covariate_matrix, fit_residualizer, usable_covariates
from .selection import consensus_global, forest_evaluator, prekeep, rank_multiview, rfe_with_guard
from .splitting import FoldPlan, make_folds

log = logging.getLogger(__name__)


def _dump(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


@dataclass(frozen=True)
class Covariates:
    names: tuple[str, ...]
    values: dict  # sample_id -> list[float | None]

    @classmethod
    def load(cls, path) -> "Covariates":
        names, values = load_covariates(path)
        return cls(tuple(names), values)


class CaseSource:
    """Lazy access to the case-study table; every read is written to an audit log."""

    def __init__(self, path=None, registry: RoiRegistry | None = None, dataset: Dataset | None = None):
        if (path is None) == (dataset is None):
            raise ValueError("give exactly one of path or dataset")
        self.path = path
        self.registry = registry
        self._dataset = dataset

    def read(self, caller: str, audit_path=None) -> Dataset:
        if audit_path is not None:
            with open(audit_path, "a", encoding="utf-8") as fh:
                fh.write(f"read case={self.path or '<memory>'} caller={caller}\n")
        if self._dataset is not None:
            return self._dataset
        return load_feature_table(self.path, self.registry)


@dataclass
class FoldOutcome:
    fold: int
    report: MetricsReport
    family_scores: dict  # family -> (primary, auc)
    selected: list[int]  # roi ids
    ensemble_families: list[str]


@dataclass
class CVResult:
    contrast: Contrast
    plans: list[FoldPlan]
    folds: list[FoldOutcome] = field(default_factory=list)

    @property
    def fold_reports(self) -> list[MetricsReport]:
        return [f.report for f in self.folds]

    @property
    def selections(self) -> list[list[int]]:
        return [f.selected for f in self.folds]

    def family_summary(self) -> dict:
        """Mean validation (primary, auc) per family over folds; undefined values skipped."""
        out = {}
        fams = self.folds[0].family_scores if self.folds else {}
        for fam in fams:
            cols = []
            for j in (0, 1):
                vals = [f.family_scores[fam][j] for f in self.folds
                        if f.family_scores[fam][j] is not None]
                cols.append(float(np.mean(vals)) if vals else None)
            out[fam] = tuple(cols)
        return out


def _meta_arrays(ds: Dataset):
    return ([m.subject_id for m in ds.meta], ds.conditions, [m.run_id for m in ds.meta],
            ds.sample_ids)


def _residualize(cov: Covariates, train: Dataset, others: Sequence[Dataset]):
    """Fit on ``train`` rows, apply to ``train`` and each of ``others``."""
    C_tr, fill = covariate_matrix(train.sample_ids, cov.names, cov.values)
    keep = usable_covariates(C_tr, cov.names)
    names = [cov.names[j] for j in keep]
    model = fit_residualizer(train.features, C_tr[:, keep], names)
    out = [apply_residualizer(model, train.features, C_tr[:, keep], names)]
    for ds in others:
        C, _ = covariate_matrix(ds.sample_ids, cov.names, cov.values, fill)
        out.append(apply_residualizer(model, ds.features, C[:, keep], names))
    return model, out


def _grid_search(cfg: PipelineConfig, family: str, X, y, subjects) -> dict:
    """Best hyperparameters by mean inner-CV score (ties keep the earlier grid point)."""
    grid = cfg.grid.get(family)
    if not grid:
        return {}
    keys = sorted(grid)
    try:
        inner = make_folds(subjects, y, K=3, seed=cfg.seed)
    except DataError:
        return {}
    best, best_score = {}, -math.inf
    for combo in itertools.product(*(grid[k] for k in keys)):
        hyper = dict(zip(keys, combo))
        scores = []
        for tr, va in inner.folds:
            if len(np.unique(y[tr])) < 2:
                continue
            m = fit(cfg.model_spec(family, hyper), X[tr], y[tr])
            rep = compute_metrics(y[va], m.predict_proba(X[va]))
            v = rep.kappa if cfg.selection_metric == "kappa" else rep.accuracy
            scores.append(0.0 if v is None else v)
        s = float(np.mean(scores)) if scores else -math.inf
        if s > best_score:
            best, best_score = hyper, s
    return best


def _fit_families(cfg: PipelineConfig, aug: AugmentedSet, feature_ids, families,
                  raw=None) -> dict[str, TrainedModel]:
    models = {}
    for fam in families:
        hyper = _grid_search(cfg, fam, *raw) if (cfg.grid_search and raw is not None) else {}
        models[fam] = fit(cfg.model_spec(fam, hyper), aug.X, aug.y, feature_ids)
    return models


def _segment_balanced(cfg: PipelineConfig, ds: Dataset, cols, y, key) -> AugmentedSet:
    subj, cond, runs, sids = _meta_arrays(ds)
    return balance_training_set(ds.features[:, cols], y, subj, cond, runs, sids,
                                replace(cfg.augment, class_balance=False), key)


def _class_balanced(cfg: PipelineConfig, seg: AugmentedSet, col_sd, key) -> AugmentedSet:
    if not cfg.augment.class_balance:
        return seg
    return balance_classes(seg, col_sd, cfg.augment, key)


def _relabel(seg: AugmentedSet, seg_label: dict) -> AugmentedSet:
    y = np.array([seg_label[s] for s in seg.segment], dtype=np.int64)
    return replace(seg, y=y)


def run_group_cv(cfg: PipelineConfig, contrast: Contrast, group: Dataset, y: np.ndarray,
                 covariates: Covariates | None = None, out_dir=None) -> CVResult:
    """Cross-validate one contrast on the group cohort.

    Per fold: rank and pre-keep on training rows, guarded RFE scored on the
    untouched validation rows, balance the training rows, fit every family,
    keep the top ``ensemble_top_l`` by validation score and evaluate their
    probability average on the validation rows.
    """
    subjects = [m.subject_id for m in group.meta]
    plans = [make_folds(subjects, y, cfg.K, cfg.seed, r) for r in range(cfg.repeats)]
    res = CVResult(contrast, plans)
    slug = contrast.slug
    if out_dir is not None:
        _dump({"contrast": contrast.name, "sample_ids": group.sample_ids,
               "plans": [p.to_dict() for p in plans]}, Path(out_dir) / "folds.json")
    fids = np.array(group.feature_ids)
    for r, plan in enumerate(plans):
        for k, (tr, va) in enumerate(plan.folds):
            fold = r * cfg.K + k
            try:
                res.folds.append(_run_fold(cfg, contrast, group, y, tr, va, fold, fids,
                                           covariates, out_dir))
            except AbsorbError as e:
                raise type(e)(f"contrast {contrast.name!r} fold {fold}: {e}") from e
    log.info("%s: CV done over %d folds", slug, len(res.folds))
    return res


def _run_fold(cfg, contrast, group, y, tr, va, fold, fids, covariates, out_dir) -> FoldOutcome:
    slug = contrast.slug
    train, val = group.take(tr), group.take(va)
    ytr, yva = y[tr], y[va]
    Xtr, Xva = train.features, val.features
    if cfg.residualize:
        if covariates is None:
            raise ConfigError("residualize requires a covariate table")
        _, (Xtr, Xva) = _residualize(covariates, train, [val])
        train = train.with_features(Xtr)
    rf_hyper = cfg.model_hyper.get("RF")
    ranking = rank_multiview(Xtr, ytr, cfg.seed, rf_hyper, cfg.model_hyper.get("LR"),
                             cfg.selection.mi_bins)
    pk = prekeep(ranking.consensus, cfg.selection.prekeep_fraction, fids)
    evaluator = forest_evaluator(Xtr, ytr, Xva, yva, cfg.seed, rf_hyper, cfg.selection.guard_metric)
    sel = rfe_with_guard(evaluator, pk, cfg.selection, fids)
    sel.consensus_rank = ranking.consensus
    sel.prekeep_set = pk
    cols = sel.selected
    sel_ids = [int(fids[c]) for c in cols]
    key = (slug, fold)
    seg = _segment_balanced(cfg, train, cols, ytr, key)
    aug = _class_balanced(cfg, seg, Xtr[:, cols].std(axis=0), key)
    models = _fit_families(cfg, aug, sel_ids, cfg.families,
                           raw=(Xtr[:, cols], ytr, [m.subject_id for m in train.meta]))
    top, scores = select_top(models, Xva[:, cols], yva, cfg.ensemble_top_l, cfg.selection_metric)
    ens = Ensemble(tuple(top))
    probs, labels = ensemble_predict(ens, Xva[:, cols])
    report = compute_metrics(yva, probs, labels)
    if out_dir is not None:
        out = Path(out_dir)
        _dump(sel.to_dict(fids), out / f"selection_{slug}_{fold}.json")
        aug.to_csv(out / f"augmented_{slug}_{fold}.csv", sel_ids)
        if cfg.persist_models:
            for fam, m in models.items():
                save_model(m, out / f"model_{slug}_{fold}_{fam}.json")
    return FoldOutcome(fold, report, scores, sel_ids, ens.families)


@dataclass
class FinalResult:
    report: MetricsReport
    global_features: list[int]
    families: list[str]
    null: np.ndarray | None
    importance: ImportanceMap | None
    timings: dict


def _case_for(contrast: Contrast, case_ds: Dataset, feature_ids) -> tuple[Dataset, np.ndarray]:
    missing = sorted(set(feature_ids) - set(case_ds.feature_ids))
    if missing:
        raise CaseMissingFeatures(missing)
    return select_contrast(case_ds, contrast)


def _score(metric: str, y, probs) -> float:
    rep = compute_metrics(y, probs)
    v = rep.accuracy if metric == "accuracy" else rep.kappa
    return 0.0 if v is None else float(v)


def finalize_and_test(cfg: PipelineConfig, contrast: Contrast, cv: CVResult, group: Dataset,
                      y: np.ndarray, case: CaseSource, covariates: Covariates | None = None,
                      out_dir=None, with_importance: bool = True,
                      with_permutation: bool | None = None) -> FinalResult:
    """Global features, refit on the full group cohort, one evaluation on the case rows."""
    timings = {}
    t0 = time.perf_counter()
    slug = contrast.slug
    global_ids = consensus_global(cv.selections, cfg.selection.consensus_policy)
    if not global_ids:
        log.warning("%s: no feature selected in a majority of folds; using the union", slug)
        global_ids = consensus_global(cv.selections, "union")
    audit = None if out_dir is None else Path(out_dir) / "case_access.log"
    case_all = case.read(f"finalize_and_test:{slug}", audit)
    if cfg.selection.prior_roi_ids is not None:
        case_all = case_all.select_rois([f for f in cfg.selection.prior_roi_ids
                                         if f in set(case_all.feature_ids)])
    case_ds, y_case = _case_for(contrast, case_all, global_ids)
    Xg_full, Xc_full = group.features, case_ds.features
    if cfg.residualize:
        if covariates is None:
            raise ConfigError("residualize requires a covariate table")
        common = [f for f in group.feature_ids if f in set(case_ds.feature_ids)]
        g = group.select_rois(common)
        _, (Xg_full, Xc_full) = _residualize(covariates, g, [case_ds.select_rois(common)])
        group = g.with_features(Xg_full)
        case_ds = case_ds.select_rois(common).with_features(Xc_full)
    gcols = group.column_indices(global_ids)
    Xc = case_ds.features[:, case_ds.column_indices(global_ids)]
    Xg = group.features[:, gcols]
    key = (slug, "final")
    seg = _segment_balanced(cfg, group, gcols, y, key)
    col_sd = Xg.std(axis=0)
    aug = _class_balanced(cfg, seg, col_sd, key)
    models = _fit_families(cfg, aug, global_ids, cfg.families,
                           raw=(Xg, y, [m.subject_id for m in group.meta]))
    ranked = rank_candidates(cv.family_summary())
    top = ranked[:cfg.ensemble_top_l]
    ens = Ensemble(tuple(models[f] for f in top))
    probs, labels = ensemble_predict(ens, Xc)
    report = compute_metrics(y_case, probs, labels)
    timings["final_fit_s"] = time.perf_counter() - t0

    null = None
    run_perm = cfg.runs_permutation(contrast.name) if with_permutation is None else with_permutation
    if run_perm and cfg.permutation_iterations > 0:
        t1 = time.perf_counter()
        observed = _score(cfg.permutation_metric, y_case, probs)
        units = [m.segment_key for m in group.meta]
        subjects = [m.subject_id for m in group.meta]
        if cfg.full_null:
            def score_fn(perm, i):
                return _full_null_score(cfg, contrast, group, perm, case_ds, y_case, i)
        else:
            def score_fn(perm, i):
                seg_label = {u: int(v) for u, v in zip(units, perm)}
                relab = _class_balanced(cfg, _relabel(seg, seg_label), col_sd, (slug, "null", i))
                if len(np.unique(relab.y)) < 2:
                    return 0.0
                ms = [fit(cfg.model_spec(f), relab.X, relab.y, global_ids) for f in top]
                return _score(cfg.permutation_metric, y_case,
                              ensemble_predict(Ensemble(tuple(ms)), Xc)[0])
        p, null = permutation_test(score_fn, y, subjects, observed, cfg.permutation_iterations,
                                   cfg.seed, 1, units)
        report = report.with_p_value(p)
        timings["permutation_s"] = time.perf_counter() - t1

    imp = None
    if with_importance:
        t2 = time.perf_counter()
        imp = _importance(cfg, slug, models, ens, aug, Xg, Xc, y_case, global_ids)
        timings["importance_s"] = time.perf_counter() - t2
    if out_dir is not None and cfg.persist_models:
        for fam, m in models.items():
            save_model(m, Path(out_dir) / f"model_{slug}_final_{fam}.json")
    return FinalResult(report, global_ids, top, null, imp, timings)


def _importance(cfg, slug, models, ens, aug, Xg, Xc, y_case, global_ids) -> ImportanceMap:
    rf = models.get("RF") or fit(cfg.model_spec("RF"), aug.X, aug.y, global_ids)
    lr = models.get("LR") or fit(cfg.model_spec("LR"), aug.X, aug.y, global_ids)
    perm = permutation_importance(ens.predict_proba, aug.X, aug.y, cfg.importance_repeats,
                                  keyed_rng(cfg.seed, slug, "importance"))
    views = {"forest": rf.feature_importances(), "linear": lr.feature_importances(),
             "permutation": perm}
    if cfg.loro:
        loro = leave_one_region_out([m.predict_proba for m in models.values()], Xc, y_case,
                                    Xg.mean(axis=0))
    else:
        loro = np.zeros(len(global_ids), dtype=np.int64)
    return ImportanceMap.build(global_ids, views, loro, len(models))


def _full_null_score(cfg, contrast, group, perm, case_ds, y_case, i) -> float:
    """Null metric that reruns selection and CV with permuted labels (no persistence)."""
    quiet = replace(cfg, persist_models=False, grid_search=False)
    try:
        cv = run_group_cv(quiet, contrast, group, np.asarray(perm))
        res = finalize_and_test(quiet, contrast, cv, group, np.asarray(perm),
                                CaseSource(dataset=case_ds), with_importance=False,
                                with_permutation=False)
    except AbsorbError as e:
        log.warning("null iteration %d failed: %s", i, e)
        return 0.0
    return res.report.accuracy if cfg.permutation_metric == "accuracy" else (res.report.kappa or 0.0)


def metrics_document(cv: CVResult, final: FinalResult, cfg: PipelineConfig) -> dict:
    return {
        "contrast": cv.contrast.name,
        "folds": [dict(f.report.to_table_dict(), fold=f.fold, ensemble=f.ensemble_families,
                       selected=f.selected) for f in cv.folds],
        "cv_summary": summarize(cv.fold_reports),
        "family_cv_summary": {f: {"primary": s[0], "AUC": s[1]}
                              for f, s in cv.family_summary().items()},
        "final": final.report.to_table_dict(),
        "final_ensemble": final.families,
        "global_features": final.global_features,
        "selection_metric": cfg.selection_metric,
        "p_value": {"tested_on": "case", "metric": cfg.permutation_metric,
                    "iterations": 0 if final.null is None else int(len(final.null)),
                    "full_null": cfg.full_null},
    }


def run_contrast(cfg: PipelineConfig, contrast_name: str, group_all: Dataset, case: CaseSource,
                 covariates: Covariates | None, out_dir, registry: RoiRegistry) -> dict:
    """CV + final test for one contrast, persisting every artifact under ``out_dir``."""
    with threadpool_limits(limits=1):
        contrast = contrast_by_name(contrast_name)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        if cfg.selection.prior_roi_ids is not None:
            group_all = group_all.select_rois([f for f in cfg.selection.prior_roi_ids
                                               if f in set(group_all.feature_ids)])
        group, y = select_contrast(group_all, contrast)
        cv = run_group_cv(cfg, contrast, group, y, covariates, out)
        t1 = time.perf_counter()
        final = finalize_and_test(cfg, contrast, cv, group, y, case, covariates, out)
        doc = metrics_document(cv, final, cfg)
        _dump(doc, out / f"metrics_{contrast.slug}.json")
        if final.importance is not None:
            final.importance.to_csv(out / f"importance_{contrast.slug}.csv", registry)
        timings = {"cv_s": t1 - t0, **final.timings, "total_s": time.perf_counter() - t0}
        artifacts = sorted(p.name for p in out.iterdir())
        return {"status": "ok", "metrics": doc, "timings": timings, "artifacts": artifacts}


def _contrast_task(args) -> dict:
    cfg, name, group, case, cov, out, registry = args
    try:
        return run_contrast(cfg, name, group, case, cov, out, registry)
    except AbsorbError as e:
        log.error("contrast %s failed: %s", name, e)
        return {"status": "failed", "error": f"{type(e).__name__}: {e}"}


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def run_all(cfg: PipelineConfig, group: Dataset | None = None, case: CaseSource | None = None,
            covariates: Covariates | None = None, registry: RoiRegistry | None = None) -> tuple[dict, int]:
    """Run every configured contrast; write summary and manifest. Returns ``(manifest, exit_code)``."""
    t0 = time.perf_counter()
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"toolkit_version": __version__, "config": cfg.to_dict(), "contrasts": {},
                "timings": {}, "status": "running"}
    code = 0
    try:
        registry = registry or (RoiRegistry.from_csv(cfg.paths.registry_csv)
                                if cfg.paths.registry_csv else RoiRegistry.default())
        if group is None:
            if not cfg.paths.group_csv:
                raise ConfigError("paths.group_csv is required")
            group = load_feature_table(cfg.paths.group_csv, registry)
        if case is None:
            if not cfg.paths.case_csv:
                raise ConfigError("paths.case_csv is required")
            case = CaseSource(cfg.paths.case_csv, registry)
        if covariates is None and cfg.paths.covariates_csv:
            covariates = Covariates.load(cfg.paths.covariates_csv)
        if cfg.residualize and covariates is None:
            raise ConfigError("residualize=true needs paths.covariates_csv")
        variants = [("raw", replace(cfg, residualize=False))]
        if cfg.residualize:
            variants.append(("residual", cfg))
        tasks, keys = [], []
        for name in cfg.contrasts:
            slug = contrast_by_name(name).slug
            for variant, vcfg in variants:
                d = out / slug if variant == "raw" else out / slug / "residual"
                tasks.append((vcfg, name, group, case, covariates, d, registry))
                keys.append((name, variant, d))
        if cfg.n_jobs > 1:
            with ProcessPoolExecutor(cfg.n_jobs) as ex:
                results = list(ex.map(_contrast_task, tasks))
        else:
            results = [_contrast_task(t) for t in tasks]
        summary = {"contrasts": {}, "overall": {}}
        resid = {}
        for (name, variant, d), r in zip(keys, results):
            entry = manifest["contrasts"].setdefault(name, {})
            entry[variant] = {"status": r["status"], "dir": str(d),
                              "artifacts": r.get("artifacts", []), "timings": r.get("timings", {}),
                              "error": r.get("error")}
            if r["status"] != "ok":
                continue
            block = {"final": r["metrics"]["final"], "cv_summary": r["metrics"]["cv_summary"],
                     "final_ensemble": r["metrics"]["final_ensemble"]}
            if variant == "raw":
                summary["contrasts"][name] = block
            else:
                resid[name] = block
        finals = [b["final"] for b in summary["contrasts"].values()]
        for col in ("Acc", "CK", "AUC", "Precision", "Recall", "F1", "Specificity"):
            summary["overall"][col] = _mean([f[col] for f in finals])
        summary["overall"]["n_contrasts"] = len(finals)
        _dump(summary, out / "summary.json")
        if cfg.residualize:
            table = {}
            for name in cfg.contrasts:
                if name in resid and name in summary["contrasts"]:
                    raw_f, res_f = summary["contrasts"][name]["final"], resid[name]["final"]
                    table[name] = {
                        "raw": {"Acc": raw_f["Acc"], "CK": raw_f["CK"]},
                        "residual": {"Acc": res_f["Acc"], "CK": res_f["CK"]},
                        "delta": {c: None if raw_f[c] is None or res_f[c] is None
                                  else res_f[c] - raw_f[c] for c in ("Acc", "CK")},
                    }
            _dump(table, out / "residual_vs_raw.json")
        failed = [k for k, r in zip(keys, results) if r["status"] != "ok"]
        code = 4 if failed else 0
        manifest["status"] = "partial" if failed else "ok"
    except ConfigError as e:
        manifest["status"], manifest["error"], code = "failed", str(e), 2
        raise
    except DataError as e:
        manifest["status"], manifest["error"], code = "failed", str(e), 3
        raise
    finally:
        manifest["timings"]["total_s"] = time.perf_counter() - t0
        manifest["exit_code"] = code
        _dump(manifest, out / "manifest.json")
    return manifest, code
