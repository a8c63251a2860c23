"""Real-world tabular benchmarks: loading, encoding, controlled subsampling.

A JSON schema names each column's kind: ``numeric`` (z-scored), ``categorical``
(one-hot, alphabetical category order, missing values as their own category),
``target`` (mapped to {0,1} via ``positive_label``) or ``protected`` (mapped
to the confounder z, not included in the features).

``load_csv`` standardises numerics over the loaded file; ``subsample_to_unbalance``
re-standardises with training-split statistics after the split, which by
affine composition equals standardising the raw data with training statistics
(no validation leakage).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .data import MODE_CBUC, MODE_CI, DataError, Dataset
from .seeding import stream

COLUMN_KINDS = ("numeric", "categorical", "target", "protected")


@dataclass(frozen=True)
class TabularSchema:
    columns: dict[str, str]  # name -> kind, in feature-layout order
    positive_label: str
    protected_positive: str | None = None  # protected value mapped to z=1

    def __post_init__(self):
        bad = {k for k in self.columns.values() if k not in COLUMN_KINDS}
        if bad:
            raise DataError(f"unknown column kinds: {sorted(bad)}")
        targets = [n for n, k in self.columns.items() if k == "target"]
        if len(targets) != 1:
            raise DataError(f"schema needs exactly one target column, got {targets}")
        protected = [n for n, k in self.columns.items() if k == "protected"]
        if len(protected) > 1:
            raise DataError(f"schema allows at most one protected column, got {protected}")

    @property
    def target(self) -> str:
        return next(n for n, k in self.columns.items() if k == "target")

    @property
    def protected(self) -> str | None:
        return next((n for n, k in self.columns.items() if k == "protected"), None)

    @staticmethod
    def from_json(path) -> "TabularSchema":
        with open(path) as fh:
            raw = json.load(fh)
        return TabularSchema(
            columns=dict(raw["columns"]),
            positive_label=str(raw["positive_label"]),
            protected_positive=raw.get("protected_positive"),
        )


def _standardize(col: np.ndarray) -> np.ndarray:
    mu = col.mean()
    sigma = col.std()
    if sigma == 0.0:
        return np.zeros_like(col)  # constant column carries no signal
    return (col - mu) / sigma


def load_csv(path, schema: TabularSchema) -> Dataset:
    """Encode one CSV file into a Dataset per the schema."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    if not rows:
        raise DataError(f"{path}: no data rows")
    missing = [c for c in schema.columns if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    col_idx = {c: header.index(c) for c in schema.columns}

    def cell(row_i: int, col: str) -> str:
        row = rows[row_i]
        if len(row) != len(header):
            raise DataError(f"{path}: row {row_i + 2} has {len(row)} cells, expected {len(header)}")
        return row[col_idx[col]].strip()

    n = len(rows)
    feature_blocks: list[np.ndarray] = []
    numeric_flags: list[np.ndarray] = []
    for name, kind in schema.columns.items():
        if kind == "numeric":
            vals = np.empty(n)
            for i in range(n):
                raw = cell(i, name)
                try:
                    vals[i] = float(raw)
                except ValueError:
                    raise DataError(
                        f"{path}: row {i + 2}, column {name!r}: cannot parse {raw!r}"
                    ) from None
            feature_blocks.append(_standardize(vals)[:, None])
            numeric_flags.append(np.array([True]))
        elif kind == "categorical":
            vals = [cell(i, name) for i in range(n)]
            categories = sorted(set(vals))  # missing ("") is its own category
            onehot = np.zeros((n, len(categories)))
            index = {c: j for j, c in enumerate(categories)}
            for i, v in enumerate(vals):
                onehot[i, index[v]] = 1.0
            feature_blocks.append(onehot)
            numeric_flags.append(np.zeros(len(categories), dtype=bool))
    y = np.array([int(cell(i, schema.target) == schema.positive_label) for i in range(n)],
                 dtype=np.int64)
    z = None
    if schema.protected is not None:
        vals = [cell(i, schema.protected) for i in range(n)]
        levels = sorted(set(vals))
        if len(levels) > 2:
            raise DataError(f"{path}: protected column has {len(levels)} levels, need 2")
        if schema.protected_positive is not None:
            one = schema.protected_positive
        else:
            one = levels[-1]  # alphabetical: last level maps to z=1
        z = np.array([int(v == one) for v in vals], dtype=np.int64)
    X = np.hstack(feature_blocks) if feature_blocks else np.zeros((n, 0))
    return Dataset(X=X, y=y, z=z, numeric_mask=np.concatenate(numeric_flags) if numeric_flags else None)


# ---------------------------------------------------------------------------
# controlled subsampling


def _restandardize(train: Dataset, val: Dataset) -> None:
    """Z-score numeric columns with training-split statistics only."""
    if train.numeric_mask is None:
        return
    cols = np.flatnonzero(train.numeric_mask)
    for j in cols:
        mu = train.X[:, j].mean()
        sigma = train.X[:, j].std()
        if sigma == 0.0:
            train.X[:, j] = 0.0
            val.X[:, j] -= mu
        else:
            train.X[:, j] = (train.X[:, j] - mu) / sigma
            val.X[:, j] = (val.X[:, j] - mu) / sigma


def _pick(rng: np.random.Generator, pool: np.ndarray, size: int) -> np.ndarray:
    chosen = rng.choice(pool, size=size, replace=False)
    return np.sort(chosen)


def subsample_to_unbalance(
    dataset: Dataset,
    target_ratio: float,
    mode: str,
    seed: int,
    validation_fraction: float = 0.2,
) -> tuple[Dataset, Dataset]:
    """Carve a balanced validation set, then subsample training to the ratio.

    The validation carve-out takes at most ``validation_fraction`` of the
    source and at most half of the scarcest class/cell, so training stays
    feasible.  Deterministic given the seed.
    """
    if not 0.5 <= target_ratio < 1.0:
        raise DataError("target_ratio must lie in [0.5, 1)")
    rng = stream(seed, "subsample", mode, repr(target_ratio))
    n = len(dataset)
    if mode == MODE_CI:
        groups = {c: np.flatnonzero(dataset.y == c) for c in (0, 1)}
    elif mode == MODE_CBUC:
        if dataset.z is None:
            raise DataError("CBUC subsampling requires the confounder column")
        groups = {
            (y, z): np.flatnonzero((dataset.y == y) & (dataset.z == z))
            for y in (0, 1)
            for z in (0, 1)
        }
    else:
        raise DataError(f"unknown mode {mode!r}")
    if any(len(idx) == 0 for idx in groups.values()):
        raise DataError("a class/cell of the source data is empty")

    min_group = min(len(idx) for idx in groups.values())
    per_group = min(int(round(validation_fraction * n)) // len(groups), min_group // 2)
    if per_group < 1:
        raise DataError("source too small for a balanced validation carve-out")
    val_idx, rest = [], {}
    for key, idx in groups.items():
        take = _pick(rng, idx, per_group)
        val_idx.append(take)
        rest[key] = np.setdiff1d(idx, take, assume_unique=True)

    if mode == MODE_CI:
        maj = 0 if len(rest[0]) >= len(rest[1]) else 1
        a_maj, a_min = len(rest[maj]), len(rest[1 - maj])
        n_min = a_min
        n_maj = round(n_min * target_ratio / (1.0 - target_ratio))
        if n_maj > a_maj:
            n_maj = a_maj
            n_min = round(n_maj * (1.0 - target_ratio) / target_ratio)
        if n_min < 1 or n_maj < 1:
            max_ratio = a_maj / (a_maj + 1)
            raise DataError(
                f"cannot reach unbalance {target_ratio}: maximum achievable "
                f"ratio is {max_ratio:.6f}"
            )
        train_idx = np.concatenate([
            _pick(rng, rest[maj], n_maj),
            _pick(rng, rest[1 - maj], min(n_min, a_min)),
        ])
    else:
        r = target_ratio
        n_y = None
        for y in (0, 1):
            cap = min(int(len(rest[(y, y)]) / r), int(len(rest[(y, 1 - y)]) / (1.0 - r)))
            while cap > 0 and (round(r * cap) > len(rest[(y, y)]) or cap - round(r * cap) > len(rest[(y, 1 - y)])):
                cap -= 1
            n_y = cap if n_y is None else min(n_y, cap)
        if n_y is None or n_y < 2 or n_y - round(r * n_y) < 1:
            caps = {y: len(rest[(y, y)]) / (len(rest[(y, y)]) + 1) for y in (0, 1)}
            raise DataError(
                f"cannot reach unbalance {target_ratio}: maximum achievable "
                f"ratio is {min(caps.values()):.6f}"
            )
        picks = []
        for y in (0, 1):
            n_u0 = round(r * n_y)
            picks.append(_pick(rng, rest[(y, y)], n_u0))
            picks.append(_pick(rng, rest[(y, 1 - y)], n_y - n_u0))
        train_idx = np.concatenate(picks)

    train_idx = np.sort(train_idx)
    val_idx = np.sort(np.concatenate(val_idx))
    train = dataset.subset(train_idx)
    val = dataset.subset(val_idx)
    # d flags follow the emitted training composition
    if mode == MODE_CI:
        minority = 1 if int(np.sum(train.y == 1)) <= int(np.sum(train.y == 0)) else 0
        train.d = (train.y == minority).astype(np.int64)
        val.d = (val.y == minority).astype(np.int64)
    _restandardize(train, val)
    return train, val
