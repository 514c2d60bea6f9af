"""Discrimination metrics, empirical risk, hold-out error bound and paired tests.

Conventions: a prediction is positive when ``p >= threshold``.  Ratios whose
denominator is zero are reported as ``None`` rather than 0.
"""

from __future__ import annotations

import csv
import math
from fractions import Fraction
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from .errors import DataError, NumericError
from .models import PROB_CLAMP, log_loss

WILCOXON_EXACT_MAX_N = 20


def _as_arrays(y, p):
    y = np.asarray(y, dtype=np.int64)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape or y.ndim != 1:
        raise DataError("labels and predictions must be aligned 1-D sequences")
    if y.size == 0:
        raise DataError("empty prediction set")
    return y, p


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def confusion(y, p, threshold: float = 0.5) -> ConfusionCounts:
    y, p = _as_arrays(y, p)
    pred = p >= threshold
    pos = y == 1
    return ConfusionCounts(
        int(np.sum(pred & pos)), int(np.sum(pred & ~pos)),
        int(np.sum(~pred & ~pos)), int(np.sum(~pred & pos)),
    )


def _ratio(num: float, den: float) -> float | None:
    return None if den == 0 else num / den


def classification_metrics(c: ConfusionCounts) -> dict[str, float | None]:
    """Accuracy, sensitivity (recall), specificity, precision and F1."""
    sens = _ratio(c.tp, c.tp + c.fn)
    prec = _ratio(c.tp, c.tp + c.fp)
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    return {
        "accuracy": _ratio(c.tp + c.tn, c.n),
        "sensitivity": sens,
        "specificity": _ratio(c.tn, c.tn + c.fp),
        "precision": prec,
        "f1": f1,
    }


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "fpr", "tpr"])
            for row in zip(self.thresholds, self.fpr, self.tpr):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "RocCurve":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        t, f, r = (np.array([float(row[k]) for row in rows]) for k in ("threshold", "fpr", "tpr"))
        return cls(t, f, r, float(np.sum(np.diff(f) * (r[1:] + r[:-1]) / 2)))


def _roc_counts(y, p):
    y, p = _as_arrays(y, p)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC requires both classes")
    order = np.argsort(-p, kind="stable")
    ps, ys = p[order], y[order]
    last_of_run = np.r_[np.flatnonzero(ps[1:] != ps[:-1]), ps.size - 1]
    tp = np.cumsum(ys)[last_of_run]
    fp = (last_of_run + 1) - tp
    tp = np.r_[0, tp]
    fp = np.r_[0, fp]
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return np.r_[np.inf, ps[last_of_run]], fp, tp, n_pos, n_neg, twice_area


def roc_auc(y, p) -> RocCurve:
    """ROC curve with tied scores collapsed into one step, and its trapezoidal AUC.

    The first point is (0, 0) at threshold +inf.  The area is accumulated on
    integer counts, so it coincides with the Mann-Whitney statistic (ties
    credited one half) up to a single final division.
    """
    thresholds, fp, tp, n_pos, n_neg, twice_area = _roc_counts(y, p)
    return RocCurve(thresholds, fp / n_neg, tp / n_pos, twice_area / (2.0 * n_pos * n_neg))


def auc_fraction(y, p) -> Fraction:
    """AUC as an exact rational: the Mann-Whitney count over ``n_pos * n_neg``."""
    *_, n_pos, n_neg, twice_area = _roc_counts(y, p)
    return Fraction(twice_area, 2 * n_pos * n_neg)


def auc_score(y, p) -> float:
    return roc_auc(y, p).auc


def empirical_risk(y, pred, loss: str = "0-1") -> float:
    """Average loss over the samples.

    For 0-1 loss ``pred`` may be hard labels or probabilities (positive at >= 0.5).
    Log-loss clamps probabilities to [1e-12, 1 - 1e-12].
    """
    y, pred = _as_arrays(y, pred)
    if loss == "0-1":
        return float(np.mean((pred >= 0.5).astype(np.int64) != y))
    if loss == "log-loss":
        return float(np.mean(log_loss(y, pred)))
    raise ValueError(f"unknown loss {loss!r}")


def holdout_error_bound(m_prime: int, delta: float) -> float:
    """Deviation bound ``sqrt(ln(2 / delta) / (2 m'))`` between empirical and true risk."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if m_prime < 1:
        raise ValueError("m' must be >= 1")
    return math.sqrt(math.log(2.0 / delta) / (2.0 * m_prime))


# ---------------------------------------------------------------- paired tests


def _wilcoxon_null_counts(twice_ranks: np.ndarray) -> np.ndarray:
    """Number of sign patterns giving each value of 2*W+ (exact, integer DP)."""
    total = int(twice_ranks.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in twice_ranks:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(diffs) -> dict:
    diffs = np.asarray(diffs, dtype=np.float64)
    nz = diffs[diffs != 0]
    if nz.size == 0:
        return {"method": "wilcoxon", "statistic": 0.0, "p_two_sided": 1.0, "n": 0, "exact": True,
                "note": "no evidence: all differences are zero"}
    ranks = stats.rankdata(np.abs(nz))
    w_plus = float(ranks[nz > 0].sum())
    n = nz.size
    if n <= WILCOXON_EXACT_MAX_N:
        twice = np.rint(2 * ranks).astype(np.int64)
        counts = _wilcoxon_null_counts(twice)
        obs = int(round(2 * w_plus))
        total = 2 ** n
        lower = sum(counts[: obs + 1])
        upper = sum(counts[obs:])
        p = min(1.0, 2 * min(lower, upper) / total)
        return {"method": "wilcoxon", "statistic": w_plus, "p_two_sided": float(p), "n": n, "exact": True}
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
    z = (w_plus - mean) / math.sqrt(var)
    return {"method": "wilcoxon", "statistic": w_plus, "p_two_sided": float(2 * stats.norm.sf(abs(z))),
            "n": n, "exact": False}


def paired_ttest(a, b) -> dict:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    n = d.size
    sd = d.std(ddof=1)
    if sd == 0:
        raise NumericError("degenerate t-test: differences have zero variance")
    t = d.mean() / (sd / math.sqrt(n))
    return {"method": "ttest", "statistic": float(t), "p_two_sided": float(2 * stats.t.sf(abs(t), n - 1)),
            "df": n - 1}


def compare_paired(a, b, method: str = "wilcoxon") -> dict:
    """Paired comparison of two per-fold metric sequences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise DataError("paired comparison needs two equal-length sequences of length >= 2")
    if method == "ttest":
        return paired_ttest(a, b)
    if method == "wilcoxon":
        return wilcoxon_signed_rank(a - b)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------- metric registry


def _threshold_metric(name):
    def f(y, p, threshold=0.5):
        return classification_metrics(confusion(y, p, threshold))[name]
    f.__name__ = name
    return f


def _ece(y, p, threshold=0.5):
    from .calibration import ece
    return ece(y, p)


def _log_loss(y, p, threshold=0.5):
    return empirical_risk(y, p, "log-loss")


def _brier(y, p, threshold=0.5):
    return float(np.mean((np.asarray(p, dtype=np.float64) - np.asarray(y)) ** 2))


def _auc(y, p, threshold=0.5):
    return auc_score(y, p)


METRICS: dict[str, Callable] = {
    "accuracy": _threshold_metric("accuracy"),
    "sensitivity": _threshold_metric("sensitivity"),
    "specificity": _threshold_metric("specificity"),
    "precision": _threshold_metric("precision"),
    "f1": _threshold_metric("f1"),
    "auc": _auc,
    "log_loss": _log_loss,
    "brier": _brier,
    "ece": _ece,
}
LOWER_IS_BETTER = {"log_loss", "brier", "ece"}


def get_metric(metric) -> Callable:
    if callable(metric):
        return metric
    try:
        return METRICS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}") from None


def score(metric, y, p, threshold: float = 0.5):
    return get_metric(metric)(y, p, threshold)


def bootstrap_ci(y, p, metric="auc", n_boot: int = 1000, level: float = 0.95, seed: int = 0,
                 max_retries: int = 100) -> tuple[float, float]:
    """Percentile bootstrap interval for ``metric``.

    Resamples lacking one of the classes are redrawn, at most ``max_retries``
    times per replicate.
    """
    y, p = _as_arrays(y, p)
    if y.size < 10:
        raise DataError("bootstrap needs at least 10 samples")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    f = get_metric(metric)
    rng = np.random.default_rng(seed)
    values = np.empty(n_boot)
    for b in range(n_boot):
        for _ in range(max_retries + 1):
            idx = rng.integers(0, y.size, y.size)
            yb = y[idx]
            if 0 < yb.sum() < yb.size:
                break
        else:
            raise NumericError("bootstrap resamples remain single-class after retry cap")
        v = f(yb, p[idx])
        values[b] = np.nan if v is None else v
    alpha = (1 - level) / 2
    lo, hi = np.nanquantile(values, [alpha, 1 - alpha])
    return float(lo), float(hi)


def clamp_probabilities(p) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
