"""Synthetic benchmark generator with controlled unbalance and complexity.

Instances are N-dimensional white noise bounded to [-noise_bound, noise_bound]:
either a truncated normal with sigma = noise_bound / 3 (default) or uniform
over the interval.  Class membership adds ``theta_y`` to one of two disjoint
4-feature blocks (one block per class value); in CBUC mode the confounder
adds ``theta_z`` to one of two further disjoint blocks.  ``theta_y`` is the
inverse task complexity: smaller means harder.

The truncated-normal default makes the class signal linearly detectable at
moderate ``theta_y`` (a sum over the informative blocks separates the
classes), which is what the reference perceptron architectures can actually
learn; uniform noise hides most of the signal in distribution tails that
gradient training does not recover at bench sample sizes.

Training sets are unbalanced on request: in CI mode the class-0 share of
the training set equals ``unbalance``; in CBUC mode classes stay balanced
and ``unbalance`` is the share of instances with z = y (u = 0), applied
symmetrically within each class.  Validation sets are always balanced.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import MODE_CBUC, MODE_CI, DataError, Dataset, Example
from .seeding import stream


NOISE_KINDS = ("gauss", "uniform")


@dataclass(frozen=True)
class SynthConfig:
    theta_y: float
    unbalance: float
    mode: str = MODE_CI
    n_features: int = 100
    noise_bound: float = 5.0
    theta_z: float = 3.0
    set_size: int = 4
    n_train: int = 100_000
    noise_kind: str = "gauss"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (MODE_CI, MODE_CBUC):
            raise DataError(f"unknown mode {self.mode!r}")
        if self.noise_kind not in NOISE_KINDS:
            raise DataError(f"unknown noise kind {self.noise_kind!r}")
        if self.theta_y < 0 or self.theta_z < 0:
            raise DataError("signal strengths must be nonnegative")
        if self.noise_bound <= 0:
            raise DataError("noise_bound must be positive")
        if 4 * self.set_size > self.n_features:
            raise DataError(
                f"four disjoint blocks of {self.set_size} features do not fit "
                f"in {self.n_features} dimensions"
            )
        if not 0.5 <= self.unbalance < 1.0:
            raise DataError("unbalance must lie in [0.5, 1)")
        if self.n_train < 2:
            raise DataError("n_train too small")


@dataclass(frozen=True)
class FeatureAssignment:
    """Disjoint index blocks for the two class values and two z values."""

    y0_set: tuple[int, ...]
    y1_set: tuple[int, ...]
    z0_set: tuple[int, ...]
    z1_set: tuple[int, ...]


def assign_feature_sets(config: SynthConfig) -> FeatureAssignment:
    """Fixed contiguous layout: y0, y1, z0 and z1 blocks in that order."""
    s = config.set_size
    blocks = [tuple(range(i * s, (i + 1) * s)) for i in range(4)]
    return FeatureAssignment(*blocks)


def _noise(config: SynthConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    t = config.noise_bound
    if config.noise_kind == "uniform":
        return rng.uniform(-t, t, size=(n, config.n_features))
    # truncated normal: sigma = bound / 3, resample the ~0.3% outliers
    sigma = t / 3.0
    X = rng.normal(0.0, sigma, size=(n, config.n_features))
    for _ in range(64):
        bad = np.abs(X) > t
        if not bad.any():
            return X
        X[bad] = rng.normal(0.0, sigma, size=int(bad.sum()))
    X[np.abs(X) > t] = 0.0  # astronomically unlikely fallback
    return X


def _fill_block(
    config: SynthConfig,
    assignment: FeatureAssignment,
    y: int,
    z: int | None,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    X = _noise(config, n, rng)
    y_set = assignment.y1_set if y == 1 else assignment.y0_set
    X[:, y_set] += config.theta_y
    if config.mode == MODE_CBUC:
        z_set = assignment.z1_set if z == 1 else assignment.z0_set
        X[:, z_set] += config.theta_z
    return X


def _d_of(config: SynthConfig, y: int, z: int | None) -> int:
    if config.mode == MODE_CI:
        # class 0 holds the unbalance share, so the minority is always 1
        return int(y == 1)
    return abs(z - y)


def generate_instance(
    config: SynthConfig,
    assignment: FeatureAssignment,
    y: int,
    z: int | None,
    rng: np.random.Generator,
) -> Example:
    if (z is not None) != (config.mode == MODE_CBUC):
        raise DataError("z must be given exactly in CBUC mode")
    x = _fill_block(config, assignment, y, z, 1, rng)[0]
    return Example(x=x, y=y, z=z, d=_d_of(config, y, z))


def _cell_counts_train(config: SynthConfig) -> list[tuple[int, int | None, int]]:
    """[(y, z, count)] in generation order."""
    u = config.unbalance
    n = config.n_train
    if config.mode == MODE_CI:
        n0 = round(u * n)
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            raise DataError(f"unbalance {u} leaves an empty class at n_train={n}")
        return [(0, None, n0), (1, None, n1)]
    n_y = (n - n // 2, n // 2)  # class 0 absorbs an odd instance
    cells = []
    for y in (0, 1):
        n_u0 = round(u * n_y[y])
        n_u1 = n_y[y] - n_u0
        if n_u0 == 0 or n_u1 == 0:
            raise DataError(f"unbalance {u} leaves an empty (y,z) cell at n_train={n}")
        cells.append((y, y, n_u0))
        cells.append((y, 1 - y, n_u1))
    return cells


def _emit(config: SynthConfig, cells, rng) -> Dataset:
    assignment = assign_feature_sets(config)
    xs, ys, zs, ds = [], [], [], []
    for y, z, n in cells:
        xs.append(_fill_block(config, assignment, y, z, n, rng))
        ys.append(np.full(n, y, dtype=np.int64))
        if config.mode == MODE_CBUC:
            zs.append(np.full(n, z, dtype=np.int64))
        ds.append(np.full(n, _d_of(config, y, z), dtype=np.int64))
    return Dataset(
        X=np.concatenate(xs),
        y=np.concatenate(ys),
        z=np.concatenate(zs) if zs else None,
        d=np.concatenate(ds),
    )


def generate_train(config: SynthConfig) -> Dataset:
    rng = stream(config.seed, "synth", config.mode, repr(config.theta_y),
                 repr(config.unbalance), "train")
    return _emit(config, _cell_counts_train(config), rng)


def generate_validation(config: SynthConfig, n_val: int = 20_000, purpose: str = "validation") -> Dataset:
    """Balanced hold-out set from a stream disjoint from training.

    ``purpose`` distinguishes further balanced carve-outs (e.g. a model
    selection set) without touching the training or validation streams.
    """
    if config.mode == MODE_CI:
        if n_val % 2:
            raise DataError("n_val must be divisible by 2 in CI mode")
        cells = [(0, None, n_val // 2), (1, None, n_val // 2)]
    else:
        if n_val % 4:
            raise DataError("n_val must be divisible by 4 in CBUC mode")
        q = n_val // 4
        cells = [(0, 0, q), (0, 1, q), (1, 1, q), (1, 0, q)]
    rng = stream(config.seed, "synth", config.mode, repr(config.theta_y),
                 repr(config.unbalance), purpose)
    return _emit(config, cells, rng)


def for_cell(template: SynthConfig, theta_y: float, unbalance: float, seed: int) -> SynthConfig:
    """Template specialised to one sweep cell."""
    return replace(template, theta_y=theta_y, unbalance=unbalance, seed=seed)
