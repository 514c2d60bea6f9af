"""Group-conditional metrics and fairness gaps.

Every gap is the largest absolute difference over pairs of groups (equivalently
max minus min across groups), so it is zero exactly when all groups agree.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import calibration
from .errors import ClinAuditError, DataError
from .metrics import classification_metrics, confusion


def _check(y, p, group):
    y = np.asarray(y, dtype=np.int64)
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(group)
    if not (y.shape == p.shape == g.shape) or y.ndim != 1:
        raise DataError("labels, scores and groups must be aligned 1-D sequences")
    ids = np.unique(g)
    if ids.size < 2:
        raise DataError("fairness metrics need at least two groups")
    return y, p, g, ids


def _spread(values) -> float:
    values = [v for v in values if v is not None]
    return float(max(values) - min(values)) if len(values) >= 2 else 0.0


def statistical_parity_difference(p, group, threshold: float = 0.5) -> float:
    """Largest pairwise gap in positive-classification rate between groups."""
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(group)
    if p.shape != g.shape:
        raise DataError("scores and groups must be aligned")
    ids = np.unique(g)
    if ids.size < 2:
        raise DataError("statistical parity needs at least two groups")
    return _spread([float(np.mean(p[g == k] >= threshold)) for k in ids])


@dataclass(frozen=True)
class FairnessCriteria:
    independence_gap: float
    separation_gap: float
    sufficiency_gap: float
    tpr_gap: float | None
    fpr_gap: float | None
    undefined: list[str] = field(default_factory=list)

    def as_tuple(self) -> tuple[float, float, float]:
        return self.independence_gap, self.separation_gap, self.sufficiency_gap

    def to_dict(self) -> dict:
        return {"independence_gap": self.independence_gap, "separation_gap": self.separation_gap,
                "sufficiency_gap": self.sufficiency_gap, "tpr_gap": self.tpr_gap, "fpr_gap": self.fpr_gap,
                "undefined": list(self.undefined)}


def fairness_criteria(y, p, group, threshold: float = 0.5, n_bins: int = calibration.DEFAULT_BINS,
                      binning: str = "equal_width") -> FairnessCriteria:
    """Independence, separation and sufficiency gaps.

    * independence: spread of group mean scores;
    * separation: the larger of the TPR and FPR spreads at ``threshold``; a
      group without positives (negatives) has no TPR (FPR) and is listed in
      ``undefined`` instead of contributing;
    * sufficiency: over score bins shared with the calibration module, the
      largest spread of the observed event rate among groups present in a bin.
    """
    y, p, g, ids = _check(y, p, group)
    independence = _spread([float(p[g == k].mean()) for k in ids])

    undefined = []
    tprs, fprs = [], []
    for k in ids:
        yk, pk = y[g == k], p[g == k]
        pos, neg = yk == 1, yk == 0
        if pos.any():
            tprs.append(float(np.mean(pk[pos] >= threshold)))
        else:
            undefined.append(f"tpr undefined for group {k} (no positives)")
        if neg.any():
            fprs.append(float(np.mean(pk[neg] >= threshold)))
        else:
            undefined.append(f"fpr undefined for group {k} (no negatives)")
    tpr_gap = _spread(tprs) if len(tprs) >= 2 else None
    fpr_gap = _spread(fprs) if len(fprs) >= 2 else None
    separation = max(v for v in (tpr_gap, fpr_gap, 0.0) if v is not None)

    bins, _ = calibration.assign_bins(p, n_bins, binning)
    sufficiency = 0.0
    for b in np.unique(bins):
        in_bin = bins == b
        rates = [float(y[in_bin & (g == k)].mean()) for k in ids if np.any(in_bin & (g == k))]
        sufficiency = max(sufficiency, _spread(rates))
    return FairnessCriteria(independence, separation, sufficiency, tpr_gap, fpr_gap, undefined)


def subgroup_calibration(y, p, group, n_bins: int = calibration.DEFAULT_BINS,
                         binning: str = "equal_width") -> dict:
    """Per-group alpha, beta and ECE.

    Errors from the calibration fits are re-raised tagged with the group id.
    """
    y, p, g, ids = _check(y, p, group)
    out = {}
    for k in ids:
        m = g == k
        try:
            alpha, beta = calibration.intercept_slope(y[m], p[m])
            out[int(k)] = {"alpha": alpha, "beta": beta, "ece": calibration.ece(y[m], p[m], n_bins, binning)}
        except ClinAuditError as exc:
            raise type(exc)(f"group {k}: {exc}") from exc
    return out


def group_table(y, p, group, threshold: float = 0.5) -> dict:
    y, p, g, ids = _check(y, p, group)
    table = {}
    for k in ids:
        m = g == k
        c = confusion(y[m], p[m], threshold)
        table[int(k)] = {"n": int(m.sum()), "prevalence": float(y[m].mean()),
                         "positive_rate": float(np.mean(p[m] >= threshold)),
                         "mean_score": float(p[m].mean()), **c.as_dict(), **classification_metrics(c)}
    return table


@dataclass(frozen=True)
class FairnessReport:
    groups: dict
    spd: float
    criteria: FairnessCriteria
    calibration: dict
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"groups": {str(k): v for k, v in self.groups.items()}, "spd": self.spd,
                **self.criteria.to_dict(),
                "calibration": {str(k): v for k, v in self.calibration.items()},
                "warnings": list(self.warnings)}


def fairness_report(y, p, group, threshold: float = 0.5, n_bins: int = calibration.DEFAULT_BINS,
                    binning: str = "equal_width") -> FairnessReport:
    """Per-group tables, parity, the three criteria and subgroup calibration.

    Groups whose calibration fit fails get ``None`` entries and a warning.
    """
    y, p, g, ids = _check(y, p, group)
    warns = []
    calib = {}
    for k in ids:
        m = g == k
        entry = {"alpha": None, "beta": None, "ece": calibration.ece(y[m], p[m], n_bins, binning)}
        try:
            entry["alpha"], entry["beta"] = calibration.intercept_slope(y[m], p[m])
        except ClinAuditError as exc:
            warns.append(f"group {k}: {exc}")
        calib[int(k)] = entry
    crit = fairness_criteria(y, p, g, threshold, n_bins, binning)
    return FairnessReport(group_table(y, p, g, threshold), statistical_parity_difference(p, g, threshold),
                          crit, calib, warns + crit.undefined)


# ---------------------------------------------------------------- shipped fixture


def make_impossibility_fixture(n_per_group: int = 500) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Two groups with identical score distributions but prevalence 0.2 vs 0.5.

    Scores are the same evenly spaced grid in both groups, so the independence
    gap is zero; the event threshold differs (0.8 vs 0.5), so at a 0.5 decision
    threshold the false-positive rates cannot match.
    """
    s = (np.arange(n_per_group) + 0.5) / n_per_group
    y = np.concatenate([(s >= 0.8), (s >= 0.5)]).astype(np.int64)
    p = np.concatenate([s, s])
    g = np.repeat([0, 1], n_per_group)
    return y, p, g


def load_impossibility_fixture() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read the shipped ``fairness_impossibility.csv`` (columns label, score, group)."""
    text = resources.files("clinaudit.fixtures").joinpath("fairness_impossibility.csv").read_text("utf-8")
    rows = list(csv.DictReader(text.splitlines()))
    return (np.array([int(r["label"]) for r in rows]), np.array([float(r["score"]) for r in rows]),
            np.array([int(r["group"]) for r in rows]))
