"""Nuclear-norm-regularized completion estimators.

The fitted estimator is SoftImpute: alternate filling unobserved entries
from the current iterate with soft-thresholding the singular values of
the filled matrix. The square-root lasso objective is kept as an
evaluable diagnostic; its regularization schedule sets the SoftImpute
threshold, so the sqrt(ln d / (d T)) dependence carries over.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .error_bounds import SplitMode, split_dataset
from .problem import Dataset, MatrixSpec

__all__ = [
    "EstimatorConfig",
    "MatrixEstimate",
    "lambda_for",
    "sqrt_lasso_objective",
    "svt",
    "soft_impute_fit",
    "get_estimator",
]


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs of the SoftImpute fit.

    ``lambda_scale`` multiplies the regularization schedule; ``tol`` is
    the relative Frobenius change below which iteration stops.
    ``warm_start`` initializes from a previous estimate when one is
    supplied. ``clip_output`` clamps the fit to [-A, A]. ``debug``
    asserts the surrogate objective decreases (checked every 10th
    iteration).
    """

    lambda_scale: float = 1.0
    max_iters: int = 300
    tol: float = 1e-5
    warm_start: bool = True
    clip_output: bool = True
    debug: bool = False

    def __post_init__(self):
        if self.lambda_scale < 0:
            raise ValueError("lambda_scale must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class MatrixEstimate:
    """A completion estimate with the sample count it was trained on."""

    index: int
    values: np.ndarray
    trained_on: int
    lambda_used: float


def lambda_for(dim: int, T: int, bound: float, lambda_scale: float) -> float:
    """Regularization level C' * A * sqrt(ln d / (d T)).

    Decreases in the training size T and is linear in the magnitude
    bound A. Requires d >= 2 (ln d degenerates below that).
    """
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if bound <= 0:
        raise ValueError("bound must be positive")
    if lambda_scale < 0:
        raise ValueError("lambda_scale must be nonnegative")
    return lambda_scale * bound * math.sqrt(math.log(dim) / (dim * T))


def sqrt_lasso_objective(m: np.ndarray, data: Dataset, lam: float) -> float:
    """Square-root lasso objective: RMS residual plus lam * nuclear norm."""
    if len(data) == 0:
        raise ValueError("objective undefined on an empty dataset")
    residuals = data.values - m[data.rows, data.cols]
    rms = math.sqrt(float(np.mean(residuals**2)))
    return rms + lam * float(np.linalg.norm(m, ord="nuc"))


def svt(m: np.ndarray, theta: float) -> np.ndarray:
    """Singular value soft-thresholding: shrink every singular value by theta.

    Output rank is the number of singular values exceeding theta.
    """
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    shrunk = np.maximum(s - theta, 0.0)
    return (u * shrunk) @ vt


def _averaged_targets(train: Dataset, dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Collapse duplicate observations of an entry into their mean."""
    key = train.rows * np.int64(dim) + train.cols
    uniq, inverse = np.unique(key, return_inverse=True)
    sums = np.zeros(len(uniq))
    np.add.at(sums, inverse, train.values)
    counts = np.bincount(inverse, minlength=len(uniq))
    targets = sums / counts
    return uniq // dim, uniq % dim, targets


def soft_impute_fit(
    train: Dataset,
    spec: MatrixSpec,
    cfg: EstimatorConfig,
    warm: MatrixEstimate | None = None,
) -> MatrixEstimate:
    """Fit a completion estimate on one training sample.

    Repeated observations of an entry are averaged first. The iteration

        Z <- svt(fill(Z), theta),   fill(Z) = targets on observed entries,
                                              Z elsewhere

    starts from the warm estimate (if enabled and given) or zero, with
    theta = d * lambda_for(d, |train|, A, C'). Stops when the relative
    Frobenius change drops below ``cfg.tol`` or after ``cfg.max_iters``.
    """
    if len(train) == 0:
        raise ValueError("cannot fit on an empty training set")
    d = spec.dim
    obs_rows, obs_cols, targets = _averaged_targets(train, d)
    lam = lambda_for(d, len(train), spec.bound, cfg.lambda_scale)
    theta = d * lam

    if cfg.warm_start and warm is not None:
        z = warm.values.astype(np.float64, copy=True)
    else:
        z = np.zeros((d, d))

    last_objective = math.inf
    for it in range(cfg.max_iters):
        filled = z.copy()
        filled[obs_rows, obs_cols] = targets
        u, s, vt = np.linalg.svd(filled, full_matrices=False)
        shrunk = np.maximum(s - theta, 0.0)
        z_new = (u * shrunk) @ vt
        if cfg.debug and it % 10 == 0:
            resid = targets - z_new[obs_rows, obs_cols]
            objective = 0.5 * float(resid @ resid) + theta * float(shrunk.sum())
            if objective > last_objective + 1e-9:
                raise AssertionError(
                    f"surrogate objective increased at iteration {it}: "
                    f"{last_objective} -> {objective}"
                )
            last_objective = objective
        delta = np.linalg.norm(z_new - z) / max(np.linalg.norm(z), 1.0)
        z = z_new
        if delta < cfg.tol:
            break

    if cfg.clip_output:
        np.clip(z, -spec.bound, spec.bound, out=z)
    return MatrixEstimate(
        index=spec.index, values=z, trained_on=len(train), lambda_used=lam
    )


def get_estimator(
    spec: MatrixSpec,
    data: Dataset,
    split: SplitMode,
    cfg: EstimatorConfig,
    warm: MatrixEstimate | None = None,
) -> MatrixEstimate:
    """Fit on the training portion of ``data`` under the given split mode.

    The caller evaluates the complementary portion; with BY_MULTIPLICITY
    and no repeated entries the eval part is empty and the caller must
    handle a zero pair count.
    """
    if data.index != spec.index:
        raise ValueError(
            f"dataset belongs to matrix {data.index}, not {spec.index}"
        )
    train, _ = split_dataset(data, split)
    if len(train) == 0:
        raise ValueError("training portion is empty")
    return soft_impute_fit(train, spec, cfg, warm)
