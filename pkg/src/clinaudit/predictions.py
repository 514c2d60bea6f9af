"""Aligned (label, probability, group) triples and their CSV form."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import DataError


@dataclass(frozen=True)
class PredictionSet:
    y: np.ndarray
    p: np.ndarray
    group: np.ndarray | None = None
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        y = np.asarray(self.y)
        p = np.asarray(self.p, dtype=np.float64)
        if y.shape != p.shape or y.ndim != 1 or y.size == 0:
            raise DataError("labels and probabilities must be aligned non-empty sequences")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("non-binary label")
        y = y.astype(np.int64)
        if not np.all((p >= 0) & (p <= 1)):
            raise DataError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p", p)
        if self.group is not None:
            g = np.asarray(self.group, dtype=np.int64)
            if g.shape != y.shape:
                raise DataError("group column misaligned")
            object.__setattr__(self, "group", g)

    @property
    def n(self) -> int:
        return self.y.size

    @classmethod
    def from_model(cls, model, ds: Dataset) -> "PredictionSet":
        return cls(ds.labels, model.predict_proba(ds.features), ds.group)

    def to_csv(self, path, score_column: str = "score") -> None:
        cols = {"label": self.y, score_column: self.p}
        if self.group is not None:
            cols["group"] = self.group
        cols.update(self.extra)
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(cols))
            for row in zip(*cols.values()):
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else int(v) for v in row])


def load_predictions(path, label_column: str = "label", score_column: str = "score",
                     group_column: str | None = "group", extra_columns=()) -> PredictionSet:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: no data rows")
    header = rows[0].keys()
    for col in (label_column, score_column, *extra_columns):
        if col not in header:
            raise DataError(f"{path}: missing column {col!r}")

    def column(name, cast):
        try:
            return np.array([cast(r[name]) for r in rows])
        except (TypeError, ValueError):
            raise DataError(f"{path}: non-numeric value in column {name!r}") from None

    group = column(group_column, lambda v: int(float(v))) if group_column and group_column in header else None
    return PredictionSet(column(label_column, float), column(score_column, float), group,
                         {c: column(c, float) for c in extra_columns})
