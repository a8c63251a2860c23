"""Group-wise validation: UnderG/OverG metrics and fairness gaps.

UnderG collects the validation examples that were under-represented during
training (minority class in CI; u = 1 in CBUC), OverG the rest.  CI groups
are single-class, so they are scored with per-group accuracy; CBUC groups
contain both classes and are scored with rank-based AUC.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .data import MODE_CBUC, MODE_CI, DataError, Dataset

CSV_COLUMNS = ["mode", "n_underg", "n_overg", "underg_metric", "overg_metric", "fpr_gap", "fnr_gap"]


@dataclass
class GroupReport:
    mode: str
    underg_metric: float
    overg_metric: float
    n_underg: int
    n_overg: int
    fpr_gap: float | None = None
    fnr_gap: float | None = None

    def min_metric(self) -> float:
        return min(self.underg_metric, self.overg_metric)

    @staticmethod
    def csv_header() -> str:
        return ",".join(CSV_COLUMNS)

    def to_csv_row(self) -> str:
        cells = [
            self.mode,
            str(self.n_underg),
            str(self.n_overg),
            repr(self.underg_metric),
            repr(self.overg_metric),
            "" if self.fpr_gap is None else repr(self.fpr_gap),
            "" if self.fnr_gap is None else repr(self.fnr_gap),
        ]
        return ",".join(cells)


def split_groups(validation: Dataset, mode: str, minority: int | None = None):
    """Partition into (UnderG, OverG); exhaustive and disjoint.

    CI mode requires the training-set minority label, which a balanced
    validation set cannot reveal on its own.
    """
    if len(validation) == 0:
        raise DataError("empty validation set")
    if mode == MODE_CI:
        if minority is None:
            raise DataError("CI split needs the training-set minority label")
        under = validation.y == minority
    elif mode == MODE_CBUC:
        if validation.z is None:
            raise DataError("CBUC split needs the confounder column")
        under = np.abs(validation.z - validation.y) == 1
    else:
        raise DataError(f"unknown mode {mode!r}")
    if under.all() or not under.any():
        raise DataError("one validation group is empty")
    return validation.subset(np.flatnonzero(under)), validation.subset(np.flatnonzero(~under))


def accuracy_group(group: Dataset, p: np.ndarray, threshold: float = 0.5) -> float:
    if len(group) == 0:
        raise DataError("empty group")
    preds = (np.asarray(p) > threshold).astype(np.int64)
    return float(np.mean(preds == group.y))


def auc_group(group: Dataset, p: np.ndarray) -> float:
    """Mann-Whitney AUC with half-credit for ties."""
    y = group.y
    n_pos = int(np.sum(y == 1))
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes in the group; use accuracy instead")
    ranks = rankdata(np.asarray(p))  # average ranks handle ties
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def fairness_gaps(validation: Dataset, p: np.ndarray, threshold: float = 0.5):
    """Signed FPR and FNR differences, group z=0 minus group z=1."""
    if validation.z is None:
        raise DataError("fairness gaps need the confounder column")
    preds = (np.asarray(p) > threshold).astype(np.int64)
    rates = {}
    for yy in (0, 1):
        for zz in (0, 1):
            mask = (validation.y == yy) & (validation.z == zz)
            if not mask.any():
                raise DataError(f"empty (y={yy}, z={zz}) cell in validation set")
            wrong = preds[mask] != yy
            rates[(yy, zz)] = float(np.mean(wrong))
    fpr_gap = rates[(0, 0)] - rates[(0, 1)]
    fnr_gap = rates[(1, 0)] - rates[(1, 1)]
    return fpr_gap, fnr_gap


def evaluate(
    validation: Dataset,
    p: np.ndarray,
    mode: str,
    minority: int | None = None,
    threshold: float = 0.5,
) -> GroupReport:
    """Full group report for one model's validation probabilities."""
    p = np.asarray(p)
    if mode == MODE_CI:
        if minority is None:
            raise DataError("CI evaluation needs the training-set minority label")
        under_mask = validation.y == minority
    else:
        if validation.z is None:
            raise DataError("CBUC evaluation needs the confounder column")
        under_mask = np.abs(validation.z - validation.y) == 1
    if under_mask.all() or not under_mask.any():
        raise DataError("one validation group is empty")
    under = validation.subset(np.flatnonzero(under_mask))
    over = validation.subset(np.flatnonzero(~under_mask))
    if mode == MODE_CI:
        m_under = accuracy_group(under, p[under_mask], threshold)
        m_over = accuracy_group(over, p[~under_mask], threshold)
    else:
        m_under = auc_group(under, p[under_mask])
        m_over = auc_group(over, p[~under_mask])
    fpr_gap = fnr_gap = None
    if validation.z is not None:
        fpr_gap, fnr_gap = fairness_gaps(validation, p, threshold)
    return GroupReport(
        mode=mode,
        underg_metric=m_under,
        overg_metric=m_over,
        n_underg=len(under),
        n_overg=len(over),
        fpr_gap=fpr_gap,
        fnr_gap=fnr_gap,
    )
