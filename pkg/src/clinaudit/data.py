"""Datasets, CSV ingestion, splitting, fold plans and synthetic generators.

All randomness goes through :func:`numpy.random.default_rng` (PCG64 bit
generator, numpy >= 1.17 stream).  Every randomized function takes an integer
seed and is a pure function of its inputs and that seed.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError, SingleClassWarning

LABEL_COLUMN = "label"
GROUP_COLUMN = "group"


@dataclass(frozen=True)
class Dataset:
    """Numeric feature matrix with binary labels and an optional group id.

    ``row_ids`` tracks the original row index through subsetting so that
    disjointness of train/test/shadow pools can be audited.
    """

    features: np.ndarray
    labels: np.ndarray
    group: np.ndarray | None = None
    feature_names: tuple[str, ...] = ()
    row_ids: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[0] < 1:
            raise DataError("features must be a non-empty 2-D matrix")
        y = np.asarray(self.labels)
        if y.shape != (X.shape[0],):
            raise DataError(f"labels length {y.shape} does not match n={X.shape[0]}")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("non-binary label")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        g = self.group
        if g is not None:
            g = np.asarray(g, dtype=np.int64)
            if g.shape != y.shape:
                raise DataError("group length does not match n")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("feature_names length does not match d")
        ids = np.arange(X.shape[0]) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.int64)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y.astype(np.int64))
        object.__setattr__(self, "group", g)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "row_ids", ids)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def prevalence(self) -> float:
        return float(self.labels.mean())

    def has_both_classes(self) -> bool:
        return 0 < self.labels.sum() < self.n

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            None if self.group is None else self.group[idx],
            self.feature_names,
            self.row_ids[idx],
        )

    def with_features(self, X) -> "Dataset":
        return Dataset(X, self.labels, self.group, self.feature_names, self.row_ids)


def require_both_classes(ds: Dataset, what: str = "training") -> None:
    if not ds.has_both_classes():
        raise DataError(f"{what} data contains a single class")


# ---------------------------------------------------------------- CSV I/O


def load_csv(path, label_column: str = LABEL_COLUMN, group_column: str | None = GROUP_COLUMN,
             impute: str = "error") -> Dataset:
    """Read a UTF-8 CSV with a header row into a :class:`Dataset`.

    Every column other than the label and (optional) group column is a numeric
    feature.  Empty cells are missing values: ``impute="mean"`` replaces them
    with the column mean of the observed cells, ``impute="error"`` rejects them.
    """
    if impute not in ("error", "mean"):
        raise ValueError(f"unknown impute mode {impute!r}")
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: missing header row")
    header, body = [h.strip() for h in rows[0]], [r for r in rows[1:] if r]
    if label_column not in header:
        raise DataError(f"{path}: missing label column {label_column!r}")
    if not body:
        raise DataError(f"{path}: no data rows")
    has_group = group_column is not None and group_column in header
    feat_cols = [i for i, h in enumerate(header) if h not in (label_column, group_column if has_group else None)]
    li = header.index(label_column)
    gi = header.index(group_column) if has_group else None

    labels, groups = [], []
    X = np.empty((len(body), len(feat_cols)))
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{r}: expected {len(header)} cells, got {len(row)}")
        try:
            lab = float(row[li])
        except ValueError:
            raise DataError(f"{path}:{r}: non-binary label {row[li]!r}") from None
        if lab not in (0.0, 1.0):
            raise DataError(f"{path}:{r}: non-binary label {row[li]!r}")
        labels.append(int(lab))
        if gi is not None:
            try:
                groups.append(int(float(row[gi])))
            except ValueError:
                raise DataError(f"{path}:{r}: non-integer group id {row[gi]!r}") from None
        for j, c in enumerate(feat_cols):
            cell = row[c].strip()
            if cell == "":
                X[r - 2, j] = np.nan
                continue
            try:
                X[r - 2, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}:{r}: non-numeric feature cell {cell!r} in column {header[c]!r}") from None
            if not math.isfinite(X[r - 2, j]):
                raise DataError(f"{path}:{r}: non-finite feature cell in column {header[c]!r}")

    missing = np.isnan(X)
    if missing.any():
        if impute == "error":
            r, c = np.argwhere(missing)[0]
            raise DataError(f"{path}:{r + 2}: empty cell in column {header[feat_cols[c]]!r} (impute=error)")
        X = mean_impute(X)

    ds = Dataset(X, np.array(labels), np.array(groups) if gi is not None else None,
                 tuple(header[c] for c in feat_cols))
    if not ds.has_both_classes():
        warnings.warn(f"{path}: label column has a single class", SingleClassWarning, stacklevel=2)
    return ds


def mean_impute(X: np.ndarray) -> np.ndarray:
    """Replace NaNs with the mean of the observed values in their column."""
    X = np.array(X, dtype=np.float64)
    missing = np.isnan(X)
    for j in np.flatnonzero(missing.any(axis=0)):
        obs = X[~missing[:, j], j]
        if obs.size == 0:
            raise DataError(f"column {j} has no observed values to impute from")
        X[missing[:, j], j] = obs.mean()
    return X


def write_csv(ds: Dataset, path, extra: dict[str, Sequence] | None = None) -> None:
    """Write ``ds`` in the format accepted by :func:`load_csv`."""
    cols = list(ds.feature_names) + [LABEL_COLUMN]
    if ds.group is not None:
        cols.append(GROUP_COLUMN)
    extra = extra or {}
    cols += list(extra)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.features[i]] + [int(ds.labels[i])]
            if ds.group is not None:
                row.append(int(ds.group[i]))
            row += [extra[k][i] for k in extra]
            w.writerow(row)


# ---------------------------------------------------------------- splitting


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_holdout(ds: Dataset, train_fraction: float = 0.7, stratified: bool = False,
                  seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random train/test split.  Stratified splits take round(f * n_c) of each class."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    if stratified:
        train = []
        for c in (0, 1):
            members = np.flatnonzero(ds.labels == c)
            if 0 < members.size < 2:
                raise DataError(f"stratified split impossible: class {c} has {members.size} member")
            members = rng.permutation(members)
            train.append(members[:_round_half_up(train_fraction * members.size)])
        train_idx = np.sort(np.concatenate(train))
    else:
        perm = rng.permutation(ds.n)
        train_idx = np.sort(perm[:_round_half_up(train_fraction * ds.n)])
    test_mask = np.ones(ds.n, dtype=bool)
    test_mask[train_idx] = False
    test_idx = np.flatnonzero(test_mask)
    if train_idx.size == 0 or test_idx.size == 0:
        raise DataError("holdout split leaves one side empty")
    return ds.subset(train_idx), ds.subset(test_idx)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray
    stratified: bool = False
    seed: int = 0
    mode: str = "plain"

    @property
    def n(self) -> int:
        return self.assignments.size

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def splits(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for f in range(self.k):
            yield self.train_indices(f), self.test_indices(f)

    def fold_sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()

    def class_counts(self, labels) -> list[dict[str, int]]:
        labels = np.asarray(labels)
        return [
            {"negatives": int(np.sum(labels[self.assignments == f] == 0)),
             "positives": int(np.sum(labels[self.assignments == f] == 1))}
            for f in range(self.k)
        ]

    def to_dict(self) -> dict:
        return {"k": self.k, "mode": self.mode, "stratified": self.stratified, "seed": self.seed,
                "assignments": self.assignments.tolist()}


def make_folds(ds: Dataset, k: int = 5, mode: str = "plain", seed: int = 0) -> FoldPlan:
    """Assign every row to one of ``k`` folds.

    Rows are dealt round-robin over a seeded permutation, so plain fold sizes
    differ by at most one.  In stratified mode each class is dealt in turn,
    continuing the round-robin position across classes; per-fold class counts
    then differ from ``n_c / k`` by less than one and no fold is empty.
    """
    n = ds.n
    if mode == "loocv":
        k = n
    elif mode not in ("plain", "stratified"):
        raise ValueError(f"unknown fold mode {mode!r}")
    if k < 2:
        raise DataError(f"k must be at least 2, got {k}")
    if k > n:
        raise DataError(f"k={k} exceeds n={n}")
    rng = np.random.default_rng(seed)
    assignments = np.empty(n, dtype=np.int64)
    if mode == "stratified":
        pos = 0
        for c in (0, 1):
            members = rng.permutation(np.flatnonzero(ds.labels == c))
            assignments[members] = (pos + np.arange(members.size)) % k
            pos = (pos + members.size) % k
    else:
        perm = rng.permutation(n)
        assignments[perm] = np.arange(n) % k
    return FoldPlan(k, assignments, mode == "stratified", seed, mode)


# ---------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator for logistic-model data.

    Features are standard normal.  Labels are Bernoulli(sigmoid(w.x + b + s_g + e))
    with ``s_g`` the logit offset of the row's group and ``e ~ N(0, noise**2)``.
    ``group_feature_shift[g]`` is added to every feature of group ``g`` rows.
    Groups are only produced when at least one group offset list is given.
    """

    n: int
    true_weights: tuple[float, ...]
    intercept: float = 0.0
    group_logit_shift: tuple[float, ...] = ()
    group_feature_shift: tuple[float, ...] = ()
    noise: float = 0.0
    seed: int = 0
    feature_scale: float = 1.0

    @property
    def d(self) -> int:
        return len(self.true_weights)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    values = [*spec.true_weights, spec.intercept, spec.noise, spec.feature_scale,
              *spec.group_logit_shift, *spec.group_feature_shift]
    if not all(math.isfinite(v) for v in values):
        raise DataError("synthetic spec contains non-finite values")
    if spec.n < 1 or spec.d < 1:
        raise DataError("synthetic spec needs n >= 1 and d >= 1")
    n_groups = max(len(spec.group_logit_shift), len(spec.group_feature_shift))
    logit_shift = np.zeros(max(n_groups, 1))
    logit_shift[:len(spec.group_logit_shift)] = spec.group_logit_shift
    feat_shift = np.zeros(max(n_groups, 1))
    feat_shift[:len(spec.group_feature_shift)] = spec.group_feature_shift

    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((spec.n, spec.d)) * spec.feature_scale
    g = rng.integers(0, n_groups, spec.n) if n_groups else np.zeros(spec.n, dtype=np.int64)
    X = X + feat_shift[g][:, None]
    z = X @ np.asarray(spec.true_weights, dtype=np.float64) + spec.intercept + logit_shift[g]
    if spec.noise > 0:
        z = z + spec.noise * rng.standard_normal(spec.n)
    y = (rng.random(spec.n) < sigmoid(z)).astype(np.int64)
    return Dataset(X, y, g if n_groups else None)


def true_probabilities(spec: SyntheticSpec, ds: Dataset) -> np.ndarray:
    """Generator probabilities for rows of a dataset produced by ``spec`` (noise-free part)."""
    shift = np.zeros(max(len(spec.group_logit_shift), 1))
    shift[:len(spec.group_logit_shift)] = spec.group_logit_shift
    g = ds.group if ds.group is not None else np.zeros(ds.n, dtype=np.int64)
    return sigmoid(ds.features @ np.asarray(spec.true_weights) + spec.intercept + shift[g])
