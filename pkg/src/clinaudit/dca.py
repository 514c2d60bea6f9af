"""Decision curve analysis.

Net benefit at threshold probability t is ``TP/N - FP/N * t / (1 - t)`` with
patients treated when ``p >= t``.  Thresholds 0 and 1 are excluded.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError


def default_grid(start: float = 0.01, stop: float = 0.99, step: float = 0.01) -> np.ndarray:
    n = int(round((stop - start) / step)) + 1
    return np.round(start + step * np.arange(n), 10)


def _check_threshold(t: float) -> None:
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold must lie strictly inside (0, 1), got {t}")


def net_benefit_from_counts(tp: int, fp: int, n: int, threshold: float) -> float:
    _check_threshold(threshold)
    return tp / n - (fp / n) * (threshold / (1.0 - threshold))


def net_benefit(y, p, threshold: float) -> float:
    y = np.asarray(y)
    p = np.asarray(p, dtype=np.float64)
    _check_threshold(threshold)
    treat = p >= threshold
    tp = int(np.sum(treat & (y == 1)))
    fp = int(np.sum(treat & (y == 0)))
    return net_benefit_from_counts(tp, fp, y.size, threshold)


def treat_all_net_benefit(prevalence: float, thresholds) -> np.ndarray:
    t = np.asarray(thresholds, dtype=np.float64)
    return prevalence - (1.0 - prevalence) * t / (1.0 - t)


@dataclass(frozen=True)
class DecisionCurve:
    thresholds: np.ndarray
    nb_model: np.ndarray
    nb_treat_all: np.ndarray
    nb_treat_none: np.ndarray
    prevalence: float
    comparators: dict[str, np.ndarray] = field(default_factory=dict)

    def columns(self) -> dict[str, np.ndarray]:
        cols = {"threshold": self.thresholds, "nb_model": self.nb_model,
                "nb_treat_all": self.nb_treat_all, "nb_treat_none": self.nb_treat_none}
        cols.update({f"nb_test_{k}": v for k, v in self.comparators.items()})
        return cols

    def to_csv(self, path) -> None:
        cols = self.columns()
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(cols))
            for row in zip(*cols.values()):
                w.writerow([repr(float(v)) for v in row])

    @staticmethod
    def read_csv(path) -> dict[str, np.ndarray]:
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]} if rows else {}

    def to_dict(self) -> dict:
        return {k: [float(x) for x in v] for k, v in self.columns().items()} | {"prevalence": self.prevalence}


def decision_curve(y, p, thresholds=None, comparators: dict | None = None) -> DecisionCurve:
    """Net benefit of the model, treat-all, treat-none and binary-test comparators.

    A comparator is a 0/1 column (a binary diagnostic test); its true and false
    positives are fixed, so only the odds weight changes across thresholds.
    """
    y = np.asarray(y, dtype=np.int64)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape or y.size == 0:
        raise DataError("labels and predictions must be aligned and non-empty")
    t = default_grid() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if t.size == 0:
        raise ValueError("empty threshold grid")
    if np.any(t <= 0) or np.any(t >= 1):
        raise ValueError("threshold grid must lie strictly inside (0, 1)")
    if np.any(np.diff(t) <= 0):
        raise ValueError("threshold grid must be strictly ascending")
    n = y.size
    prevalence = float(y.mean())

    # counts of p >= t via sorted scores: positives/negatives with score >= t
    pos_sorted = np.sort(p[y == 1])
    neg_sorted = np.sort(p[y == 0])
    tp = pos_sorted.size - np.searchsorted(pos_sorted, t, side="left")
    fp = neg_sorted.size - np.searchsorted(neg_sorted, t, side="left")
    odds = t / (1.0 - t)
    nb_model = tp / n - (fp / n) * odds

    comps = {}
    for name, col in (comparators or {}).items():
        col = np.asarray(col)
        if col.shape != y.shape or not np.all((col == 0) | (col == 1)):
            raise DataError(f"comparator {name!r} must be a 0/1 column aligned with labels")
        ctp = int(np.sum((col == 1) & (y == 1)))
        cfp = int(np.sum((col == 1) & (y == 0)))
        comps[name] = ctp / n - (cfp / n) * odds
    return DecisionCurve(t, nb_model, treat_all_net_benefit(prevalence, t), np.zeros(t.size), prevalence, comps)
