"""Dataset container shared by every module.

A dataset is a feature matrix, binary labels, an optional binary confounder
``z`` and a derived under-representation flag ``d``:

* CI mode (no confounder): ``d = 1`` exactly for the minority class; on a
  tie the positive class counts as minority.
* CBUC mode (confounder present): ``d = |z - y|`` per example.

CSV layout is ``f0..f{N-1},y[,z]`` with one row per example.  ``d`` is never
stored because it is derivable; loading recomputes it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

MODE_CI = "CI"
MODE_CBUC = "CBUC"


class Example(NamedTuple):
    """One instance: features, label, optional confounder, d flag."""

    x: np.ndarray
    y: int
    z: int | None
    d: int


class DataError(ValueError):
    """Malformed dataset, file or configuration."""


def minority_label(y: np.ndarray) -> int:
    """Label of the less numerous class; ties resolve to class 1."""
    n1 = int(np.sum(y == 1))
    n0 = len(y) - n1
    return 1 if n1 <= n0 else 0


def underrep_flags(y: np.ndarray, z: np.ndarray | None, mode: str) -> np.ndarray:
    if mode == MODE_CI:
        return (y == minority_label(y)).astype(np.int64)
    if mode == MODE_CBUC:
        if z is None:
            raise DataError("CBUC mode requires the confounder column z")
        return np.abs(z - y).astype(np.int64)
    raise DataError(f"unknown mode {mode!r}")


@dataclass
class Dataset:
    """Feature matrix plus labels, optional confounder, derived d flags."""

    X: np.ndarray
    y: np.ndarray
    z: np.ndarray | None = None
    d: np.ndarray = field(default=None)  # type: ignore[assignment]
    numeric_mask: np.ndarray | None = None  # ingest only: which columns are numeric

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.z is not None:
            self.z = np.asarray(self.z, dtype=np.int64)
        if self.d is None:
            self.d = underrep_flags(self.y, self.z, self.mode)
        else:
            self.d = np.asarray(self.d, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise DataError("feature matrix and labels disagree on length")

    @property
    def mode(self) -> str:
        return MODE_CI if self.z is None else MODE_CBUC

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        """Row selection; d flags are carried over, not recomputed."""
        return Dataset(
            X=self.X[idx],
            y=self.y[idx],
            z=None if self.z is None else self.z[idx],
            d=self.d[idx],
            numeric_mask=self.numeric_mask,
        )

    def class_counts(self) -> tuple[int, int]:
        n1 = int(np.sum(self.y == 1))
        return len(self.y) - n1, n1

    def d_counts(self) -> tuple[int, int]:
        n1 = int(np.sum(self.d == 1))
        return len(self.d) - n1, n1

    def to_csv(self, path) -> None:
        header = [f"f{i}" for i in range(self.n_features)] + ["y"]
        if self.z is not None:
            header.append("z")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(len(self)):
                row = [repr(float(v)) for v in self.X[i]] + [str(int(self.y[i]))]
                if self.z is not None:
                    row.append(str(int(self.z[i])))
                writer.writerow(row)


def load_dataset_csv(path, minority: int | None = None) -> Dataset:
    """Read a ``f0..f{N-1},y[,z]`` CSV written by :meth:`Dataset.to_csv`.

    ``minority`` overrides the minority-class inference in CI mode (needed
    for balanced validation files, where counts alone cannot identify the
    training-set minority).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")
    has_z = header[-1] == "z"
    n_feat = len(header) - (2 if has_z else 1)
    expected = [f"f{i}" for i in range(n_feat)] + ["y"] + (["z"] if has_z else [])
    if header != expected:
        raise DataError(f"{path}: unexpected header {header[:4]}...")
    X = np.empty((len(rows), n_feat))
    y = np.empty(len(rows), dtype=np.int64)
    z = np.empty(len(rows), dtype=np.int64) if has_z else None
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        try:
            X[i] = [float(v) for v in row[:n_feat]]
            y[i] = int(row[n_feat])
            if has_z:
                z[i] = int(row[n_feat + 1])
        except ValueError as exc:
            raise DataError(f"{path}: row {i + 2}: {exc}") from None
    if has_z:
        d = np.abs(z - y)
    else:
        lab = minority if minority is not None else minority_label(y)
        d = (y == lab).astype(np.int64)
    return Dataset(X=X, y=y, z=z, d=d)
