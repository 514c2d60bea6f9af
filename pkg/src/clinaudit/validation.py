"""Hold-out, k-fold, stratified, LOOCV, repeated and nested cross-validation,
plus evaluation on an external cohort.

Folds run sequentially and results are reduced in fold-id order, so outputs
do not depend on scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .calibration import intercept_slope
from .data import Dataset, FoldPlan, make_folds, split_holdout
from .errors import ClinAuditError, DataError
from .metrics import auc_score, get_metric
from .models import Architecture, Model, TrainConfig, predict_proba, train

DEFAULT_METRICS = ("accuracy", "auc", "log_loss")


def _evaluate(y, p, metrics, threshold):
    out = {}
    for name in metrics:
        try:
            out[name] = get_metric(name)(y, p, threshold)
        except (DataError, ValueError):
            out[name] = None
    return out


@dataclass
class CvResult:
    rows: list[dict]
    mean: dict[str, float | None]
    sd: dict[str, float | None]
    plan: FoldPlan
    pooled_auc: float | None = None
    oof_predictions: np.ndarray | None = field(default=None, repr=False)

    def metric(self, name: str) -> list[float | None]:
        return [r[name] for r in self.rows]

    def to_dict(self) -> dict:
        return {"folds": self.rows, "mean": self.mean, "sd": self.sd, "pooled_auc": self.pooled_auc,
                "plan": {"k": self.plan.k, "mode": self.plan.mode, "seed": self.plan.seed}}


def _summarize(rows, metrics):
    mean, sd = {}, {}
    for name in metrics:
        vals = np.array([r[name] for r in rows if r[name] is not None], dtype=np.float64)
        mean[name] = float(vals.mean()) if vals.size else None
        sd[name] = float(vals.std(ddof=1)) if vals.size > 1 else (0.0 if vals.size else None)
    return mean, sd


def _default_fit(arch: Architecture, cfg: TrainConfig) -> Callable[[Dataset], Model]:
    return lambda ds: train(ds, arch, cfg)


def cross_validate(ds: Dataset, arch: Architecture, cfg: TrainConfig, plan: FoldPlan,
                   metrics: Sequence[str] = DEFAULT_METRICS, threshold: float = 0.5,
                   fit: Callable[[Dataset], Model] | None = None) -> CvResult:
    """Retrain on each fold's training side and score its held-out rows.

    Per-fold metrics that are undefined on a fold (AUC of a single-class test
    fold, e.g. under LOOCV) are ``None`` and skipped in the mean; the AUC of
    the pooled out-of-fold predictions is reported alongside.
    """
    if plan.n != ds.n:
        raise DataError(f"fold plan covers {plan.n} rows, dataset has {ds.n}")
    fit = fit or _default_fit(arch, cfg)
    oof = np.empty(ds.n)
    rows = []
    for fold, (tr, te) in enumerate(plan.splits()):
        train_ds, test_ds = ds.subset(tr), ds.subset(te)
        if not train_ds.has_both_classes():
            raise DataError(f"fold {fold}: training side contains a single class")
        model = fit(train_ds)
        p = predict_proba(model, test_ds.features)
        oof[te] = p
        rows.append({"fold": fold, "n_train": int(tr.size), "n_test": int(te.size),
                     "test_positives": int(test_ds.labels.sum()),
                     **_evaluate(test_ds.labels, p, metrics, threshold)})
    mean, sd = _summarize(rows, metrics)
    pooled = auc_score(ds.labels, oof) if ds.has_both_classes() else None
    return CvResult(rows, mean, sd, plan, pooled, oof)


def repeated_cross_validate(ds: Dataset, arch: Architecture, cfg: TrainConfig, k: int = 5,
                            mode: str = "stratified", seeds: Sequence[int] = (0,),
                            metrics: Sequence[str] = DEFAULT_METRICS) -> list[CvResult]:
    """One cross-validation per seed; callers concatenate ``rows`` as needed."""
    return [cross_validate(ds, arch, cfg, make_folds(ds, k, mode, s), metrics) for s in seeds]


def holdout_validate(ds: Dataset, arch: Architecture, cfg: TrainConfig, train_fraction: float = 0.7,
                     stratified: bool = True, seed: int = 0, metrics: Sequence[str] = DEFAULT_METRICS,
                     threshold: float = 0.5) -> dict:
    train_ds, test_ds = split_holdout(ds, train_fraction, stratified, seed)
    model = train(train_ds, arch, cfg)
    p = predict_proba(model, test_ds.features)
    return {"n_train": train_ds.n, "n_test": test_ds.n,
            "metrics": _evaluate(test_ds.labels, p, metrics, threshold)}


@dataclass
class NestedCvResult:
    cv: CvResult
    chosen: list[dict]
    inner_scores: list[list[float]]

    def to_dict(self) -> dict:
        return {**self.cv.to_dict(), "chosen": self.chosen, "inner_mean_log_loss": self.inner_scores}


def _select(candidates: list[dict], scores: list[float]) -> int:
    """Lowest inner log-loss; ties go to the smallest weight decay, then grid order."""
    keys = [(s, c.get("weight_decay", 0.0), i) for i, (c, s) in enumerate(zip(candidates, scores))]
    return min(keys)[2]


def nested_cross_validate(ds: Dataset, arch: Architecture, grid: Sequence[dict], outer: FoldPlan,
                          inner_k: int, cfg: TrainConfig, metrics: Sequence[str] = DEFAULT_METRICS,
                          threshold: float = 0.5) -> NestedCvResult:
    """Select hyperparameters on inner folds of each outer training side.

    ``grid`` entries are :class:`TrainConfig` field overrides such as
    ``{"weight_decay": 0.1}``.  The outer test rows never reach the inner loop.
    """
    grid = [dict(g) for g in grid]
    if not grid:
        raise ValueError("hyperparameter grid is empty")
    if outer.n != ds.n:
        raise DataError(f"fold plan covers {outer.n} rows, dataset has {ds.n}")
    inner_mode = "stratified" if outer.stratified else "plain"
    chosen, inner_scores, rows = [], [], []
    oof = np.empty(ds.n)
    for fold, (tr, te) in enumerate(outer.splits()):
        outer_train = ds.subset(tr)
        if not outer_train.has_both_classes():
            raise DataError(f"fold {fold}: training side contains a single class")
        inner_plan = make_folds(outer_train, inner_k, inner_mode, outer.seed + 1 + fold)
        scores = []
        for overrides in grid:
            inner = cross_validate(outer_train, arch, replace(cfg, **overrides), inner_plan, ("log_loss",))
            scores.append(inner.mean["log_loss"])
        best = _select(grid, scores)
        chosen.append(grid[best])
        inner_scores.append(scores)
        model = train(outer_train, arch, replace(cfg, **grid[best]))
        test = ds.subset(te)
        p = predict_proba(model, test.features)
        oof[te] = p
        rows.append({"fold": fold, "n_train": int(tr.size), "n_test": int(te.size),
                     "test_positives": int(test.labels.sum()),
                     **_evaluate(test.labels, p, metrics, threshold)})
    mean, sd = _summarize(rows, metrics)
    pooled = auc_score(ds.labels, oof) if ds.has_both_classes() else None
    return NestedCvResult(CvResult(rows, mean, sd, outer, pooled, oof), chosen, inner_scores)


def evaluate_external(model: Model, external: Dataset, metrics: Sequence[str] = DEFAULT_METRICS,
                      threshold: float = 0.5) -> dict:
    """Score a frozen model on a separate cohort; nothing is refitted."""
    if external.d != model.d:
        raise DataError(f"schema mismatch: model expects {model.d} features, cohort has {external.d}")
    if model.feature_names and tuple(model.feature_names) != tuple(external.feature_names):
        raise DataError(f"schema mismatch: feature names {list(external.feature_names)} "
                        f"differ from model's {list(model.feature_names)}")
    p = predict_proba(model, external.features)
    report = {"n": external.n, "prevalence": external.prevalence,
              "metrics": _evaluate(external.labels, p, metrics, threshold)}
    try:
        report["calibration_alpha"], report["calibration_beta"] = intercept_slope(external.labels, p)
    except ClinAuditError as exc:
        report["calibration_alpha"] = report["calibration_beta"] = None
        report["warnings"] = [str(exc)]
    return report
