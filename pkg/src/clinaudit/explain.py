"""Post-hoc explanations: permutation importance, exact Shapley values, surrogate fidelity."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import DataError
from .metrics import LOWER_IS_BETTER, get_metric
from .models import leaf_count, train_tree

SHAPLEY_MAX_FEATURES = 12


def _predictor(model):
    return model if callable(model) and not hasattr(model, "predict_proba") else model.predict_proba


@dataclass(frozen=True)
class Attribution:
    values: np.ndarray
    feature_names: tuple[str, ...]
    scope: str
    method: str

    def to_dict(self) -> dict:
        return {"scope": self.scope, "method": self.method,
                "values": {n: float(v) for n, v in zip(self.feature_names, self.values)}}

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "value"])
            for n, v in zip(self.feature_names, self.values):
                w.writerow([n, repr(float(v))])


def permutation_importance(model, ds: Dataset, metric="auc", n_repeats: int = 5, seed: int = 0) -> Attribution:
    """Drop in ``metric`` when one column is shuffled, averaged over repeats.

    For lower-is-better metrics (log-loss, Brier, ECE) the sign is flipped so a
    positive importance always means the feature helps.
    """
    f = _predictor(model)
    score = get_metric(metric)
    sign = -1.0 if metric in LOWER_IS_BETTER else 1.0
    baseline = score(ds.labels, f(ds.features))
    rng = np.random.default_rng(seed)
    out = np.zeros(ds.d)
    for j in range(ds.d):
        drops = []
        for _ in range(n_repeats):
            X = ds.features.copy()
            X[:, j] = X[rng.permutation(ds.n), j]
            drops.append(baseline - score(ds.labels, f(X)))
        out[j] = sign * float(np.mean(drops))
    return Attribution(out, ds.feature_names, "global", "permutation")


def coalition_values(model, instance, background) -> np.ndarray:
    """Value of every feature coalition, indexed by bitmask.

    ``v[S]`` is the mean prediction over background rows with the features in
    ``S`` overwritten by the instance's values.
    """
    f = _predictor(model)
    x = np.asarray(instance, dtype=np.float64).ravel()
    B = background.features if isinstance(background, Dataset) else np.atleast_2d(np.asarray(background, dtype=np.float64))
    d = x.size
    if B.shape[1] != d:
        raise DataError("background width does not match the instance")
    v = np.empty(2 ** d)
    for mask in range(2 ** d):
        Z = B.copy()
        cols = [j for j in range(d) if mask >> j & 1]
        Z[:, cols] = x[cols]
        v[mask] = float(np.mean(f(Z)))
    return v


def shapley_exact(model, instance, background, feature_names=None) -> Attribution:
    """Exact Shapley values by enumerating all 2^d coalitions.

    Absent features are marginalized by averaging over the background rows, so
    the values sum to ``f(instance) - mean background prediction``.
    """
    x = np.asarray(instance, dtype=np.float64).ravel()
    d = x.size
    if d > SHAPLEY_MAX_FEATURES:
        raise DataError(f"exact Shapley enumeration limited to d <= {SHAPLEY_MAX_FEATURES} (got d={d}); "
                        "use permutation_importance for wider models")
    v = coalition_values(model, x, background)
    weights = [math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)]
    phi = np.zeros(d)
    for j in range(d):
        bit = 1 << j
        # fsum is exactly rounded, so interchangeable features get identical values
        phi[j] = math.fsum(weights[bin(mask).count("1")] * (v[mask | bit] - v[mask])
                           for mask in range(2 ** d) if not mask & bit)
    if feature_names is None:
        feature_names = background.feature_names if isinstance(background, Dataset) else tuple(f"x{j}" for j in range(d))
    return Attribution(phi, tuple(feature_names), "local", "shapley")


def surrogate_fidelity(task_model, surrogate, eval_data, threshold: float = 0.5) -> float:
    """Share of rows on which surrogate and task model make the same thresholded call."""
    X = eval_data.features if isinstance(eval_data, Dataset) else np.asarray(eval_data, dtype=np.float64)
    a = _predictor(task_model)(X) >= threshold
    b = _predictor(surrogate)(X) >= threshold
    if a.shape != b.shape:
        raise DataError("task model and surrogate disagree on output shape")
    return float(np.mean(a == b))


def surrogate_parsimony(surrogate) -> int:
    """Leaf count of a tree surrogate."""
    return leaf_count(surrogate)


def fit_tree_surrogate(task_model, ds: Dataset, max_depth: int = 3, min_leaf: int = 5, threshold: float = 0.5):
    """Tree trained to imitate the task model's thresholded predictions on ``ds``."""
    yhat = (_predictor(task_model)(ds.features) >= threshold).astype(np.int64)
    if yhat.min() == yhat.max():
        raise DataError("task model predicts a single class on the surrogate data")
    return train_tree(Dataset(ds.features, yhat, ds.group, ds.feature_names, ds.row_ids), max_depth, min_leaf)

