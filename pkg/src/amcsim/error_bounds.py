"""Honest error bands from double-sampled entries.

The eval portion of a sample is scanned for entries observed at least
twice. Each disjoint pair of looks at the same entry gives one unbiased
product-of-residuals term; their average estimates the normalized
squared Frobenius error of an estimate without knowing the noise level.
The band adds a width that shrinks like 1/sqrt(N) in the pair count.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .problem import Dataset

__all__ = [
    "SplitMode",
    "PairedSample",
    "ErrorEstimate",
    "split_dataset",
    "pair_double_samples",
    "paired_arrays",
    "estimate_error",
    "b_value",
    "estimate_error_bound",
]


class SplitMode(enum.Enum):
    """How to divide a dataset into a training and an evaluation part.

    HALVES: first half (insertion order) trains, second half evaluates.
    BY_MULTIPLICITY: entries seen exactly once train; every observation
    of an entry seen twice or more evaluates. The second variant wastes
    no repeat-free observations and is what the experiments use.
    """

    HALVES = "halves"
    BY_MULTIPLICITY = "by_multiplicity"


@dataclass(frozen=True)
class PairedSample:
    """Two independent looks y, y2 at the same entry (row, col)."""

    row: int
    col: int
    y: float
    y2: float


@dataclass(frozen=True)
class ErrorEstimate:
    """Pair count N, unbiased estimate r_n, and upper band b.

    N == 0 carries no information: r_n is None and b is +inf. r_n may
    legitimately be negative for finite N; b is never clamped when used
    in comparisons.
    """

    n_pairs: int
    r_n: float | None
    b: float
    dim: int

    def __post_init__(self):
        if self.n_pairs == 0 and not math.isinf(self.b):
            raise ValueError("zero pairs must give an infinite band")


def split_dataset(data: Dataset, mode: SplitMode) -> tuple[Dataset, Dataset]:
    """Split one dataset into (train, eval) parts.

    HALVES sends the first floor(n/2) observations to train and the rest
    to eval. BY_MULTIPLICITY sends entries observed exactly once to
    train and all observations of repeated entries to eval. Both parts
    keep insertion order, and together they are the original multiset.
    """
    n = len(data)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if mode is SplitMode.HALVES:
        half = n // 2
        order = np.arange(n)
        return data.take(order[:half]), data.take(order[half:])
    key = data.rows * np.int64(max(data.cols.max(initial=0) + 1, 1)) + data.cols
    _, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    once = counts[inverse] == 1
    return data.take(np.flatnonzero(once)), data.take(np.flatnonzero(~once))


def paired_arrays(eval_data: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized pairing of double-sampled entries.

    Returns (rows, cols, y, y2) of the disjoint consecutive pairs formed
    within each repeated entry, in the entry's insertion order. An entry
    seen m times yields floor(m/2) pairs; a leftover odd observation is
    discarded.
    """
    n = len(eval_data)
    if n == 0:
        empty_i = np.empty(0, dtype=np.int64)
        empty_f = np.empty(0, dtype=np.float64)
        return empty_i, empty_i.copy(), empty_f, empty_f.copy()
    width = np.int64(max(eval_data.cols.max(initial=0) + 1, 1))
    key = eval_data.rows * width + eval_data.cols
    # Stable sort groups equal keys while preserving arrival order inside
    # each group, so consecutive positions within a group are consecutive
    # observations of that entry.
    order = np.argsort(key, kind="stable")
    sorted_key = key[order]
    group_start = np.flatnonzero(np.r_[True, sorted_key[1:] != sorted_key[:-1]])
    group_size = np.diff(np.r_[group_start, n])
    offsets = np.arange(n) - np.repeat(group_start, group_size)
    first = (offsets % 2 == 0) & (offsets + 1 < np.repeat(group_size, group_size))
    idx1 = order[first]
    idx2 = order[np.flatnonzero(first) + 1]
    return (
        eval_data.rows[idx1],
        eval_data.cols[idx1],
        eval_data.values[idx1],
        eval_data.values[idx2],
    )


def pair_double_samples(eval_data: Dataset) -> list[PairedSample]:
    """List the disjoint pairs of repeated observations in ``eval_data``."""
    rows, cols, y, y2 = paired_arrays(eval_data)
    return [
        PairedSample(int(i), int(j), float(a), float(b))
        for i, j, a, b in zip(rows, cols, y, y2)
    ]


def _estimate_values(est) -> np.ndarray:
    return est if isinstance(est, np.ndarray) else est.values


def estimate_error(est, pairs: list[PairedSample]) -> float:
    """Unbiased estimate of the normalized squared error of ``est``.

    Averages (y - m)(y2 - m) over the pairs, where m is the estimate's
    value at the pair's entry. The expectation is ||est - M||_F^2 / d^2;
    individual averages may be negative.
    """
    if len(pairs) == 0:
        raise ValueError("need at least one double-sampled pair")
    m = _estimate_values(est)
    total = 0.0
    for p in pairs:
        mij = m[p.row, p.col]
        total += (p.y - mij) * (p.y2 - mij)
    return total / len(pairs)


def b_value(r_n: float, n_pairs: int, dim: int, bound: float, scale: float = 8.0) -> float:
    """Upper confidence band r_n + scale * A^2 * sqrt(ln d / N).

    With scale = 8 this holds with probability at least 1 - 2/d for any
    fixed estimate. The scale is configurable: experiment configs may
    tighten it, trading worst-case honesty for allocation signal.
    """
    if n_pairs < 1:
        raise ValueError("band requires at least one pair")
    if dim < 2:
        raise ValueError("band is degenerate for dim < 2")
    return r_n + scale * bound * bound * math.sqrt(math.log(dim) / n_pairs)


def estimate_error_bound(est, eval_data: Dataset, dim: int, bound: float,
                         scale: float = 8.0) -> ErrorEstimate:
    """Pair the eval sample and bundle (N, r_n, b) for one estimate.

    Vectorized runtime path for the strategies: with no pairs the band
    is +inf and the caller keeps its previous state.
    """
    rows, cols, y, y2 = paired_arrays(eval_data)
    n_pairs = len(y)
    if n_pairs == 0:
        return ErrorEstimate(n_pairs=0, r_n=None, b=math.inf, dim=dim)
    m = _estimate_values(est)[rows, cols]
    r_n = float(np.mean((y - m) * (y2 - m)))
    return ErrorEstimate(
        n_pairs=n_pairs,
        r_n=r_n,
        b=b_value(r_n, n_pairs, dim, bound, scale),
        dim=dim,
    )
