"""Problem instances and the uniform entry-sampling observation model.

A problem is a collection of square low-rank matrices. Observations are
trace-regression samples: an entry location drawn uniformly at random
(with replacement, so the same entry can be seen several times) plus
additive noise on the entry value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MatrixSpec",
    "GroundTruth",
    "NoiseModel",
    "Observation",
    "Dataset",
    "named_stream",
    "generate_ground_truth",
    "new_samples",
]


@dataclass(frozen=True)
class MatrixSpec:
    """One sub-problem: a d x d matrix of rank at most ``rank_bound``.

    ``index`` is the 1-based problem id, ``bound`` the known magnitude
    scale A of entries and observations (it enters the regularization
    schedule and the confidence band, never the generator).
    """

    index: int
    dim: int
    rank_bound: int
    bound: float = 4.0

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"matrix index must be >= 1, got {self.index}")
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if not 1 <= self.rank_bound <= self.dim:
            raise ValueError(
                f"rank_bound must be in [1, {self.dim}], got {self.rank_bound}"
            )
        if self.bound <= 0:
            raise ValueError(f"bound must be positive, got {self.bound}")


@dataclass(frozen=True)
class GroundTruth:
    """A spec together with its true dense matrix."""

    spec: MatrixSpec
    entries: np.ndarray

    def __post_init__(self):
        d = self.spec.dim
        if self.entries.shape != (d, d):
            raise ValueError(
                f"entries must be {d}x{d}, got {self.entries.shape}"
            )


@dataclass(frozen=True)
class NoiseModel:
    """Additive observation noise: Gaussian with std ``sigma``, or none."""

    kind: str = "gaussian"
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "none"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")

    @classmethod
    def gaussian(cls, sigma: float) -> "NoiseModel":
        return cls(kind="gaussian", sigma=sigma)

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls(kind="none", sigma=0.0)


@dataclass(frozen=True)
class Observation:
    """A single noisy look at entry (row, col) of matrix ``index``.

    Rows and columns are zero-based array coordinates.
    """

    index: int
    row: int
    col: int
    value: float


@dataclass
class Dataset:
    """Ordered observations of a single matrix, stored as flat arrays.

    Insertion order is significant: sample splitting and the pairing of
    double-sampled entries both walk the dataset in arrival order.
    """

    index: int
    rows: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    cols: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    values: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.float64))

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if not (len(self.rows) == len(self.cols) == len(self.values)):
            raise ValueError("rows, cols and values must have equal length")

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def from_observations(cls, obs: list[Observation]) -> "Dataset":
        if not obs:
            raise ValueError("cannot infer matrix index from an empty list")
        k = obs[0].index
        if any(o.index != k for o in obs):
            raise ValueError("all observations must share one matrix index")
        return cls(
            index=k,
            rows=np.array([o.row for o in obs], dtype=np.int64),
            cols=np.array([o.col for o in obs], dtype=np.int64),
            values=np.array([o.value for o in obs], dtype=np.float64),
        )

    def observations(self) -> list[Observation]:
        return [
            Observation(self.index, int(i), int(j), float(y))
            for i, j, y in zip(self.rows, self.cols, self.values)
        ]

    def take(self, idx: np.ndarray) -> "Dataset":
        """Sub-dataset at positions ``idx``, preserving the given order."""
        return Dataset(self.index, self.rows[idx], self.cols[idx], self.values[idx])

    def extend(self, other: "Dataset") -> "Dataset":
        """New dataset with ``other`` appended after ``self``."""
        if other.index != self.index:
            raise ValueError("cannot merge datasets of different matrices")
        return Dataset(
            self.index,
            np.concatenate([self.rows, other.rows]),
            np.concatenate([self.cols, other.cols]),
            np.concatenate([self.values, other.values]),
        )


def named_stream(*name: int) -> np.random.Generator:
    """Counter-based RNG stream keyed by a tuple of integers.

    Distinct names give statistically independent streams; the same name
    always reproduces the same stream. Runs derive one stream per
    (master seed, repetition, strategy, matrix) so that repetitions are
    independent and every run is replayable.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(name)))


def generate_ground_truth(spec: MatrixSpec, seed) -> GroundTruth:
    """Draw a random rank-``r`` truth matrix M = U V.

    U is d x r and V is r x d with i.i.d. centered Gaussian entries of
    variance r^(-1/2), so every entry of M has variance 1 regardless of
    the rank.

    Parameters
    ----------
    spec : MatrixSpec
    seed : int, tuple of int, or numpy Generator

    Returns
    -------
    GroundTruth
        Deterministic given ``seed``; rank(M) <= spec.rank_bound.
    """
    if isinstance(seed, np.random.Generator):
        rng = seed
    else:
        rng = named_stream(*seed) if isinstance(seed, tuple) else named_stream(seed)
    d, r = spec.dim, spec.rank_bound
    entry_std = r ** (-0.25)  # variance r^(-1/2)
    u = rng.normal(0.0, entry_std, size=(d, r))
    v = rng.normal(0.0, entry_std, size=(r, d))
    return GroundTruth(spec=spec, entries=u @ v)


def new_samples(
    gt: GroundTruth,
    noise: NoiseModel,
    T: int,
    rng: np.random.Generator,
) -> Dataset:
    """Draw T fresh observations of one matrix, locations uniform i.i.d.

    Entry locations are sampled with replacement on the d x d grid, so
    multi-sampling of an entry is possible (and, for T >> d, likely);
    the double-sampled entries are what powers the error estimator.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    d = gt.spec.dim
    rows = rng.integers(0, d, size=T)
    cols = rng.integers(0, d, size=T)
    values = gt.entries[rows, cols].astype(np.float64, copy=True)
    if noise.kind == "gaussian" and noise.sigma > 0:
        values += rng.normal(0.0, noise.sigma, size=T)
    return Dataset(index=gt.spec.index, rows=rows, cols=cols, values=values)
