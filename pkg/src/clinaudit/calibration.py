"""Calibration curves, calibration-in-the-large, calibration slope, ECE, recalibration."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import logit, sigmoid
from .errors import DataError, NumericError
from .models import PROB_CLAMP

DEFAULT_BINS = 10
MIN_EVENTS_WARNING = 200
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 100


def fit_logistic(X, y, offset=None, ridge: float = 0.0, tol: float = NEWTON_TOL,
                 max_iter: int = NEWTON_MAX_ITER) -> np.ndarray:
    """Maximum-likelihood logistic coefficients by damped Newton iterations.

    ``X`` must already contain an intercept column if one is wanted; ``ridge``
    adds ``ridge / 2 * ||beta||^2`` to the negative log-likelihood (all
    coefficients).  The step is halved until the objective does not get worse.
    Raises :class:`NumericError` when the fit diverges (separable data).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    off = np.zeros(y.size) if offset is None else np.asarray(offset, dtype=np.float64)
    beta = np.zeros(X.shape[1])

    def loglik(b):
        z = X @ b + off
        return float(np.sum(y * z - np.logaddexp(0.0, z))) - 0.5 * ridge * float(b @ b)

    ll = loglik(beta)
    for _ in range(max_iter):
        p = sigmoid(X @ beta + off)
        grad = X.T @ (y - p) - ridge * beta
        w = p * (1 - p)
        H = (X * w[:, None]).T @ X + ridge * np.eye(X.shape[1])
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            raise NumericError("logistic fit diverged: singular information matrix") from None
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = loglik(cand)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, ll = cand, ll_new
        if not np.all(np.isfinite(beta)) or np.max(np.abs(beta)) > 1e6:
            raise NumericError("logistic fit diverged (perfectly separating logits?)")
        if np.max(np.abs(t * step)) < tol:
            return beta
    raise NumericError(f"logistic fit did not converge in {max_iter} iterations (separable logits?)")


def _clamped_logit(p) -> np.ndarray:
    return logit(np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP))


def _check(y, p):
    y = np.asarray(y, dtype=np.int64)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape or y.ndim != 1 or y.size == 0:
        raise DataError("labels and predictions must be aligned non-empty 1-D sequences")
    return y, p


@dataclass(frozen=True)
class CalibrationBins:
    edges: np.ndarray
    mean_predicted: np.ndarray
    observed: np.ndarray
    count: np.ndarray
    binning: str

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def rows(self) -> list[dict]:
        return [
            {"bin_center": float(c), "mean_predicted": None if k == 0 else float(m),
             "observed": None if k == 0 else float(o), "count": int(k)}
            for c, m, o, k in zip(self.centers, self.mean_predicted, self.observed, self.count)
        ]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_center", "mean_predicted", "observed", "count"])
            for c, m, o, k in zip(self.centers, self.mean_predicted, self.observed, self.count):
                w.writerow([repr(float(c)), "" if k == 0 else repr(float(m)), "" if k == 0 else repr(float(o)), int(k)])

    @staticmethod
    def read_csv(path) -> list[dict]:
        with Path(path).open(newline="", encoding="utf-8") as fh:
            return [
                {"bin_center": float(r["bin_center"]),
                 "mean_predicted": None if r["mean_predicted"] == "" else float(r["mean_predicted"]),
                 "observed": None if r["observed"] == "" else float(r["observed"]),
                 "count": int(r["count"])}
                for r in csv.DictReader(fh)
            ]


def assign_bins(p, n_bins: int = DEFAULT_BINS, binning: str = "equal_width") -> tuple[np.ndarray, np.ndarray]:
    """Bin index for every prediction, plus the bin edges.

    Equal-width bins split [0, 1] (a prediction of exactly 1 joins the last bin).
    Equal-frequency bins split the sorted predictions into chunks whose sizes
    differ by at most one.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    p = np.asarray(p, dtype=np.float64)
    if binning == "equal_width":
        edges = np.linspace(0.0, 1.0, n_bins + 1)
        idx = np.clip(np.floor(p * n_bins).astype(np.int64), 0, n_bins - 1)
        return idx, edges
    if binning == "equal_frequency":
        if p.size < n_bins:
            raise DataError(f"need at least n_bins={n_bins} predictions")
        order = np.argsort(p, kind="stable")
        idx = np.empty(p.size, dtype=np.int64)
        chunks = np.array_split(order, n_bins)
        edges = [0.0]
        for b, chunk in enumerate(chunks):
            idx[chunk] = b
            if b < n_bins - 1:
                edges.append(0.5 * (p[chunk[-1]] + p[chunks[b + 1][0]]))
        edges.append(1.0)
        return idx, np.asarray(edges)
    raise ValueError(f"unknown binning {binning!r}")


def calibration_curve(y, p, n_bins: int = DEFAULT_BINS, binning: str = "equal_width") -> CalibrationBins:
    y, p = _check(y, p)
    idx, edges = assign_bins(p, n_bins, binning)
    count = np.bincount(idx, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_pred = np.bincount(idx, weights=p, minlength=n_bins) / count
        observed = np.bincount(idx, weights=y, minlength=n_bins) / count
    return CalibrationBins(edges, mean_pred, observed, count, binning)


def ece(y, p, n_bins: int = DEFAULT_BINS, binning: str = "equal_width") -> float:
    """Expected calibration error with class-1 probability as the confidence."""
    bins = calibration_curve(y, p, n_bins, binning)
    occ = bins.count > 0
    gaps = np.abs(bins.observed[occ] - bins.mean_predicted[occ])
    return float(np.sum(bins.count[occ] * gaps) / bins.count.sum())


def intercept_slope(y, p) -> tuple[float, float]:
    """Calibration-in-the-large (alpha) and calibration slope (beta).

    beta is the coefficient of logit(p) in a logistic refit with free intercept;
    alpha is the intercept of a refit with logit(p) as a fixed offset.
    """
    y, p = _check(y, p)
    if not 0 < y.sum() < y.size:
        raise DataError("calibration intercept/slope needs both classes")
    lp = _clamped_logit(p)
    ones = np.ones((y.size, 1))
    alpha = fit_logistic(ones, y, offset=lp)[0]
    if np.ptp(lp) == 0:
        raise NumericError("non-identifiable slope: predictions are constant")
    beta = fit_logistic(np.column_stack([ones, lp]), y)[1]
    return float(alpha), float(beta)


@dataclass(frozen=True)
class RecalibrationMap:
    """``p -> sigmoid(intercept + slope * logit(p))``."""

    intercept: float
    slope: float

    def __call__(self, p) -> np.ndarray:
        return sigmoid(self.intercept + self.slope * _clamped_logit(p))

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "slope": self.slope}


def recalibrate(y, p) -> RecalibrationMap:
    """Logistic recalibration fitted on held-out labels and predictions."""
    y, p = _check(y, p)
    if not 0 < y.sum() < y.size:
        raise DataError("recalibration needs both classes in the held-out set")
    lp = _clamped_logit(p)
    if np.ptp(lp) == 0:
        raise NumericError("non-identifiable slope: predictions are constant")
    a, b = fit_logistic(np.column_stack([np.ones(y.size), lp]), y)
    return RecalibrationMap(float(a), float(b))


@dataclass(frozen=True)
class CalibrationReport:
    bins: CalibrationBins
    alpha: float | None
    beta: float | None
    ece: float
    binning: str
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"binning": self.binning, "alpha": self.alpha, "beta": self.beta, "ece": self.ece,
                "bins": self.bins.rows(), "warnings": list(self.warnings)}


def calibration_report(y, p, n_bins: int = DEFAULT_BINS, binning: str = "equal_width") -> CalibrationReport:
    """Curve, alpha/beta and ECE in one report.

    Fewer than 200 events or non-events only adds a warning.  A failing
    alpha/beta fit is reported as ``None`` plus a warning.
    """
    y, p = _check(y, p)
    bins = calibration_curve(y, p, n_bins, binning)
    warns = []
    events = int(y.sum())
    if min(events, y.size - events) < MIN_EVENTS_WARNING:
        warns.append(f"fewer than {MIN_EVENTS_WARNING} events or non-events "
                     f"(events={events}, non-events={y.size - events}); calibration estimates are unstable")
    try:
        alpha, beta = intercept_slope(y, p)
    except (NumericError, DataError) as exc:
        alpha = beta = None
        warns.append(f"intercept/slope unavailable: {exc}")
    return CalibrationReport(bins, alpha, beta, ece(y, p, n_bins, binning), binning, warns)
