"""Per-example losses, their p-gradients, and cost-threshold utilities.

Every elementwise loss returns ``(loss, dloss_dp)`` as float arrays over the
batch.  Inputs ``p`` are assumed already clamped away from {0, 1} (the
network does this), so every log term is finite.

Loss families
-------------
* ``h_star``       standard cross-entropy
* ``weighted_ce``  cost-weighted cross-entropy with mixing cost c
* ``cc``           C^y * H*, the class-cost hyperparameter correction
* ``focal``        K^y * |y-p|^alpha * H*
* ``fbi``          K^(d*|y-p|*xi) * H*, the unbalance correction with the
                   error-modulated exponent
* ``peo``          batch-level H* plus the hinged proxy equalized-odds
                   penalty (see :func:`peo_batch_loss`)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import Dataset, DataError, underrep_flags


class DegenerateInputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# cost utilities


@dataclass(frozen=True)
class CostSpec:
    """Misclassification costs for the two classes.

    Derived quantities: ``c = c0 / (c0 + c1)`` (the decision threshold) and
    ``C = (1 - c) / c`` (the class-1 error weight).
    """

    c0: float
    c1: float

    def __post_init__(self):
        if self.c0 < 0 or self.c1 < 0 or (self.c0 == 0 and self.c1 == 0):
            raise DegenerateInputError("costs must be nonnegative and not both zero")

    @property
    def c(self) -> float:
        return self.c0 / (self.c0 + self.c1)

    @property
    def C(self) -> float:
        return (1.0 - self.c) / self.c


def decision_rule(p, c):
    """Predict class 1 iff p > c; the tie p == c resolves to class 0."""
    return (np.asarray(p) > c).astype(np.int64)


def weighted_error(y, p, c):
    """Cost-weighted misclassification error of the thresholded prediction."""
    y = np.asarray(y)
    p = np.asarray(p)
    return (1.0 - c) * y * (p <= c) + c * (1.0 - y) * (p > c)


def baseline_shift(c: float, pi: float, pi_hat: float) -> float:
    """Adjusted cost after the class-1 prior moves from pi to pi_hat."""
    denom = pi_hat * (c - pi) - pi * (c - 1.0)
    if abs(denom) < 1e-300:
        raise DegenerateInputError("baseline shift undefined: zero denominator")
    return c * pi_hat * (1.0 - pi) / denom


def u_value(y, z):
    """Under-representation indicator |z - y|."""
    return np.abs(np.asarray(z) - np.asarray(y))


def k_factor(dataset: Dataset, mode: str) -> float:
    """count(d=0) / count(d=1) with d assigned per mode.

    CI: d marks the minority class.  CBUC: d = |z - y|.
    """
    d = underrep_flags(dataset.y, dataset.z, mode)
    n1 = int(np.sum(d == 1))
    n0 = len(d) - n1
    if n0 == 0 or n1 == 0:
        raise DataError(
            "unbalance correction undefined: one d-group is empty "
            f"(counts d=0:{n0}, d=1:{n1})"
        )
    return n0 / n1


def class_ratio(dataset: Dataset) -> float:
    """count(y=0) / count(y=1), the fixed K of the focal loss."""
    n0, n1 = dataset.class_counts()
    if n0 == 0 or n1 == 0:
        raise DataError("class ratio undefined: single-class dataset")
    return n0 / n1


# ---------------------------------------------------------------------------
# elementwise losses


def h_star(y, p):
    """Standard cross-entropy and its p-derivative."""
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    loss = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    grad = -y / p + (1.0 - y) / (1.0 - p)
    return loss, grad


def weighted_ce(y, p, c: float):
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    loss = -(1.0 - c) * y * np.log(p) - c * (1.0 - y) * np.log1p(-p)
    grad = -(1.0 - c) * y / p + c * (1.0 - y) / (1.0 - p)
    return loss, grad


def cc_loss(y, p, C: float):
    y = np.asarray(y, dtype=np.float64)
    h, dh = h_star(y, p)
    w = C**y
    return w * h, w * dh


def focal_loss(y, p, K: float, alpha: float):
    """K^y * |y-p|^alpha * H*; the modulating factor is differentiated."""
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    h, dh = h_star(y, p)
    m = np.abs(y - p)
    dm = 1.0 - 2.0 * y  # d|y-p|/dp for y in {0,1}
    w = K**y
    if alpha == 0:
        return w * h, w * dh
    mod = m**alpha
    dmod = alpha * m ** (alpha - 1.0) * dm
    return w * mod * h, w * (dmod * h + mod * dh)


def fbi_loss(y, d, p, K: float, xi: float):
    """K^(d * |y-p| * xi) * H*, differentiated through the exponent."""
    y = np.asarray(y, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    h, dh = h_star(y, p)
    m = np.abs(y - p)
    dm = 1.0 - 2.0 * y
    w = K ** (d * m * xi)
    dw = w * np.log(K) * d * xi * dm
    return w * h, dw * h + w * dh


# ---------------------------------------------------------------------------
# proxy equalized-odds batch loss


class GroupRates(NamedTuple):
    cpeo: float
    dcpeo_dp: np.ndarray


def soft_group_rates(y, z, p) -> GroupRates | None:
    """Proxy EO violation from probability-valued group rates.

    soft FPR(g) = mean p over {y=0, z=g}; soft FNR(g) = mean (1-p) over
    {y=1, z=g}; the violation is the sum of the absolute gaps.  Returns
    None when any of the four (y, z) cells is empty in the batch.
    """
    y = np.asarray(y)
    z = np.asarray(z)
    p = np.asarray(p, dtype=np.float64)
    grad = np.zeros_like(p)
    cells = {}
    for yy in (0, 1):
        for zz in (0, 1):
            mask = (y == yy) & (z == zz)
            n = int(mask.sum())
            if n == 0:
                return None
            cells[(yy, zz)] = (mask, n)
    fpr = {zz: p[cells[(0, zz)][0]].mean() for zz in (0, 1)}
    fnr = {zz: (1.0 - p[cells[(1, zz)][0]]).mean() for zz in (0, 1)}
    s_fpr = np.sign(fpr[0] - fpr[1])
    s_fnr = np.sign(fnr[0] - fnr[1])
    cpeo = abs(fpr[0] - fpr[1]) + abs(fnr[0] - fnr[1])
    grad[cells[(0, 0)][0]] = s_fpr / cells[(0, 0)][1]
    grad[cells[(0, 1)][0]] = -s_fpr / cells[(0, 1)][1]
    grad[cells[(1, 0)][0]] = -s_fnr / cells[(1, 0)][1]
    grad[cells[(1, 1)][0]] = s_fnr / cells[(1, 1)][1]
    return GroupRates(float(cpeo), grad)


class PeoBatch(NamedTuple):
    loss: float
    dloss_dp: np.ndarray
    cpeo: float | None  # None when a (y, z) cell was empty (penalty skipped)


def peo_batch_loss(y, z, p, lam: float, epsilon: float) -> PeoBatch:
    """Mean H* plus ``lam * max(0, C_PEO - epsilon)`` over one batch.

    The hinge subgradient at the kink is 0; a batch with an empty (y, z)
    cell contributes no penalty and reports ``cpeo=None`` so the trainer can
    count the skip.
    """
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    h, dh = h_star(y, p)
    n = len(p)
    loss = float(h.mean())
    grad = dh / n
    rates = soft_group_rates(y, z, p)
    if rates is None:
        return PeoBatch(loss, grad, None)
    if lam > 0 and rates.cpeo > epsilon:
        loss += lam * (rates.cpeo - epsilon)
        grad = grad + lam * rates.dcpeo_dp
    return PeoBatch(loss, grad, rates.cpeo)


# ---------------------------------------------------------------------------
# loss specification


LOSS_KINDS = ("standard_ce", "weighted_ce", "cc", "focal", "fbi", "peo")


@dataclass(frozen=True)
class LossSpec:
    """Named loss family plus the hyperparameters that family reads."""

    kind: str
    c: float = 0.5  # weighted_ce
    C: float = 1.0  # cc
    K: float = 1.0  # focal, fbi
    alpha: float = 0.0  # focal
    xi: float = 0.0  # fbi
    lam: float = 0.0  # peo
    epsilon: float = 0.0  # peo

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.K <= 0:
            raise ValueError("K must be positive")
        if self.kind == "weighted_ce" and not 0.0 < self.c < 1.0:
            raise ValueError("c must lie in (0, 1)")
        if self.kind == "cc" and self.C <= 0:
            raise ValueError("C must be positive")
        if min(self.alpha, self.xi, self.lam, self.epsilon) < 0:
            raise ValueError("alpha, xi, lambda and epsilon must be nonnegative")

    @property
    def needs_d(self) -> bool:
        return self.kind == "fbi"

    @property
    def needs_z(self) -> bool:
        return self.kind == "peo"

    @property
    def is_batchwise(self) -> bool:
        return self.kind == "peo"


def elementwise_loss(spec: LossSpec, y, p, d=None):
    """Dispatch per-example losses; ``d`` is only read by the fbi kind."""
    if spec.kind == "standard_ce":
        return h_star(y, p)
    if spec.kind == "weighted_ce":
        return weighted_ce(y, p, spec.c)
    if spec.kind == "cc":
        return cc_loss(y, p, spec.C)
    if spec.kind == "focal":
        return focal_loss(y, p, spec.K, spec.alpha)
    if spec.kind == "fbi":
        if d is None:
            raise DataError("fbi loss requires the under-representation flag d")
        return fbi_loss(y, d, p, spec.K, spec.xi)
    raise ValueError(f"{spec.kind} is not an elementwise loss")
