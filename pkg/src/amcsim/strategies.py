"""Active budget allocation over multiple completion problems.

Three strategies share one sequential loop: an adaptive rule that samples
the matrix with the largest band-per-sample criterion, a round-robin
baseline, and an oracle that reads the true errors. Each step requests a
batch of fresh observations for one matrix, refits, re-estimates the
error band, and accepts the new estimate only when its band improves.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .error_bounds import SplitMode, estimate_error_bound, split_dataset
from .estimators import EstimatorConfig, MatrixEstimate, soft_impute_fit
from .problem import Dataset, GroundTruth, NoiseModel, named_stream, new_samples

__all__ = [
    "LossSpec",
    "ArmState",
    "Doubling",
    "Discretized",
    "RunTrace",
    "TraceEvent",
    "AllArmsCapped",
    "initial_batch",
    "select_index",
    "compute_loss",
    "loss_from_errors",
    "malocate_run",
    "uniform_run",
    "oracle_run",
]


class AllArmsCapped(Exception):
    """Every matrix has reached its observation cap; the run is complete."""


@dataclass(frozen=True)
class LossSpec:
    """Loss family parameter p in [1, inf] and optional per-matrix weights.

    p = 1 sums the squared Frobenius errors, p = inf takes the worst
    one; math.inf is the distinguished infinite case. Weights default
    to one for every matrix.
    """

    p: float = math.inf
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
            if any(w <= 0 for w in self.weights):
                raise ValueError("weights must be positive")

    def weight(self, pos: int) -> float:
        return 1.0 if self.weights is None else self.weights[pos]


@dataclass(frozen=True)
class Doubling:
    """Each selection doubles the chosen matrix's cumulative sample count."""


@dataclass(frozen=True)
class Discretized:
    """Fixed time grid: an initialization pass then equal sub-batches.

    Every matrix starts with ``init_multiplier * d`` samples; the
    remaining budget is divided into ``num_batches`` equal sub-batches.
    With ``reuse_samples`` the estimator refits on all data accumulated
    for the chosen matrix instead of the fresh batch alone.
    """

    init_multiplier: int = 8
    num_batches: int = 100
    reuse_samples: bool = True

    def __post_init__(self):
        if self.init_multiplier < 1:
            raise ValueError("init_multiplier must be >= 1")
        if self.num_batches < 1:
            raise ValueError("num_batches must be >= 1")


@dataclass
class ArmState:
    """Per-matrix bookkeeping: samples spent, band, current estimate."""

    truth: GroundTruth
    samples_spent: int = 0
    band: float = math.inf
    current: MatrixEstimate | None = None
    data: Dataset | None = None

    @property
    def dim(self) -> int:
        return self.truth.spec.dim

    @property
    def cap(self) -> int:
        return self.dim * self.dim

    @property
    def at_cap(self) -> bool:
        return self.samples_spent >= self.cap


@dataclass(frozen=True)
class TraceEvent:
    """Snapshot taken after one batch-and-refit step."""

    t: int
    chosen: int
    batch: int
    b_values: tuple[float, ...]
    t_values: tuple[int, ...]
    true_errors: tuple[float, ...]
    loss_p1: float
    loss_pinf: float


@dataclass
class RunTrace:
    """Full event log of one run plus identifying metadata."""

    strategy: str
    events: list[TraceEvent] = field(default_factory=list)
    truth_hashes: tuple[str, ...] = ()
    ended_early: bool = False


def initial_batch(dim: int) -> int:
    """First-visit batch size 4 * ceil((d ln d + 1) / 2).

    Twice the smallest even integer strictly greater than d ln d, so the
    eval half contains a double-sampled entry with high probability for
    d >= 55. Always divisible by 4.
    """
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    return 4 * math.ceil((dim * math.log(dim) + 1) / 2)


def select_index(states: list[ArmState], loss: LossSpec) -> int:
    """Position of the arm the adaptive criterion picks next.

    Arms at their observation cap are excluded. Among the rest, an arm
    with an infinite band (never successfully evaluated) is chosen
    first, lowest position winning. Otherwise the score is
    w^(1/p) * d^2 * B * T^(-1/p) for finite p and w * d^2 * B for
    p = inf; ties break to the lowest position.
    """
    available = [i for i, s in enumerate(states) if not s.at_cap]
    if not available:
        raise AllArmsCapped
    for i in available:
        if math.isinf(states[i].band):
            return i
    best, best_score = -1, -math.inf
    for i in available:
        s = states[i]
        w = loss.weight(i)
        d2b = s.dim * s.dim * s.band
        if math.isinf(loss.p):
            score = w * d2b
        else:
            score = w ** (1.0 / loss.p) * d2b * s.samples_spent ** (-1.0 / loss.p)
        if score > best_score:
            best, best_score = i, score
    return best


def loss_from_errors(errors, loss: LossSpec) -> float:
    """Aggregate per-matrix squared errors into the p-loss."""
    e = np.asarray(errors, dtype=np.float64)
    w = np.ones_like(e) if loss.weights is None else np.asarray(loss.weights)
    if math.isinf(loss.p):
        return float(np.max(w * e))
    return float(np.sum(w * e**loss.p) ** (1.0 / loss.p))


def compute_loss(
    estimates: list[MatrixEstimate],
    truths: list[GroundTruth],
    loss: LossSpec,
) -> float:
    """p-loss of a set of estimates against the ground truths.

    Estimates and truths are aligned by matrix index; a missing estimate
    counts as the zero matrix.
    """
    by_index = {e.index: e for e in estimates if e is not None}
    errors = []
    for gt in truths:
        est = by_index.get(gt.spec.index)
        diff = gt.entries if est is None else est.values - gt.entries
        errors.append(float(np.sum(diff * diff)))
    return loss_from_errors(errors, loss)


def _true_errors(states: list[ArmState]) -> list[float]:
    """Raw squared Frobenius errors of the current estimates."""
    out = []
    for s in states:
        m = s.truth.entries
        diff = m if s.current is None else s.current.values - m
        out.append(float(np.sum(diff * diff)))
    return out


def _resolve_streams(rng, K: int) -> list[np.random.Generator]:
    if isinstance(rng, (int, np.integer)):
        return [named_stream(int(rng), pos) for pos in range(K)]
    streams = list(rng)
    if len(streams) != K:
        raise ValueError(f"need {K} observation streams, got {len(streams)}")
    return streams


def _refit(
    state: ArmState,
    fit_data: Dataset,
    split: SplitMode,
    cfg: EstimatorConfig,
    scale: float,
) -> None:
    """Fit on the train part, band the eval part, accept if not worse."""
    train, eval_part = split_dataset(fit_data, split)
    if len(train) == 0:
        return
    spec = state.truth.spec
    est = soft_impute_fit(train, spec, cfg, warm=state.current)
    bundle = estimate_error_bound(est, eval_part, spec.dim, spec.bound, scale)
    if bundle.b <= state.band:
        state.current = est
        state.band = bundle.b


def _run(
    problem: list[GroundTruth],
    noise: NoiseModel,
    loss: LossSpec,
    budget: int,
    schedule,
    cfg: EstimatorConfig,
    split: SplitMode,
    rng,
    chooser,
    scale: float,
    strategy: str,
) -> tuple[list[MatrixEstimate], RunTrace]:
    K = len(problem)
    if K == 0:
        raise ValueError("problem must contain at least one matrix")
    if loss.weights is not None and len(loss.weights) != K:
        raise ValueError("weights length must match the number of matrices")
    streams = _resolve_streams(rng, K)
    states = [ArmState(truth=gt) for gt in problem]
    trace = RunTrace(
        strategy=strategy,
        truth_hashes=tuple(
            hashlib.sha256(np.ascontiguousarray(gt.entries).tobytes()).hexdigest()
            for gt in problem
        ),
    )

    if isinstance(schedule, Discretized):
        init_sizes = [schedule.init_multiplier * s.dim for s in states]
    else:
        init_sizes = [initial_batch(s.dim) for s in states]
    if budget < sum(init_sizes):
        raise ValueError(
            f"budget {budget} cannot cover initialization ({sum(init_sizes)})"
        )

    spent = 0

    def record(pos: int, batch: int) -> None:
        errors = _true_errors(states)
        norm_errors = tuple(e / s.cap for e, s in zip(errors, states))
        trace.events.append(
            TraceEvent(
                t=spent,
                chosen=states[pos].truth.spec.index,
                batch=batch,
                b_values=tuple(s.band for s in states),
                t_values=tuple(s.samples_spent for s in states),
                true_errors=norm_errors,
                loss_p1=loss_from_errors(errors, LossSpec(p=1, weights=loss.weights)),
                loss_pinf=loss_from_errors(errors, LossSpec(p=math.inf, weights=loss.weights)),
            )
        )

    def spend(pos: int, batch: int, reuse: bool) -> None:
        nonlocal spent
        state = states[pos]
        fresh = new_samples(state.truth, noise, batch, streams[pos])
        state.samples_spent += batch
        spent += batch
        if reuse:
            state.data = fresh if state.data is None else state.data.extend(fresh)
            fit_data = state.data
        else:
            state.data = fresh
            fit_data = fresh
        _refit(state, fit_data, split, cfg, scale)
        record(pos, batch)

    if isinstance(schedule, Discretized):
        for pos in range(K):
            size = min(init_sizes[pos], states[pos].cap)
            spend(pos, size, schedule.reuse_samples)
        free = budget - spent
        sub_batch = max(1, math.ceil(free / schedule.num_batches))
        while spent < budget:
            try:
                pos = chooser(states)
            except AllArmsCapped:
                trace.ended_early = True
                break
            state = states[pos]
            batch = min(sub_batch, budget - spent, state.cap - state.samples_spent)
            spend(pos, batch, schedule.reuse_samples)
    else:
        while spent < budget:
            try:
                pos = chooser(states)
            except AllArmsCapped:
                trace.ended_early = True
                break
            state = states[pos]
            desired = max(state.samples_spent, initial_batch(state.dim))
            batch = min(desired, budget - spent, state.cap - state.samples_spent)
            spend(pos, batch, reuse=False)

    estimates = [
        s.current
        if s.current is not None
        else MatrixEstimate(s.truth.spec.index, np.zeros((s.dim, s.dim)), 0, 0.0)
        for s in states
    ]
    return estimates, trace


def malocate_run(
    problem: list[GroundTruth],
    noise: NoiseModel,
    loss: LossSpec,
    budget: int,
    schedule,
    cfg: EstimatorConfig,
    split: SplitMode,
    rng,
    scale: float = 8.0,
) -> tuple[list[MatrixEstimate], RunTrace]:
    """Adaptive run: each step samples argmax of the band criterion.

    ``rng`` is an integer seed or a list of per-matrix generators.
    Returns the final estimates and the full event trace.
    """
    return _run(
        problem, noise, loss, budget, schedule, cfg, split, rng,
        chooser=lambda states: select_index(states, loss),
        scale=scale, strategy="malocate",
    )


def uniform_run(
    problem: list[GroundTruth],
    noise: NoiseModel,
    loss: LossSpec,
    budget: int,
    schedule,
    cfg: EstimatorConfig,
    split: SplitMode,
    rng,
    scale: float = 8.0,
) -> tuple[list[MatrixEstimate], RunTrace]:
    """Round-robin baseline under the same schedule and update guard."""
    cursor = [0]

    def chooser(states: list[ArmState]) -> int:
        K = len(states)
        for offset in range(K):
            pos = (cursor[0] + offset) % K
            if not states[pos].at_cap:
                cursor[0] = pos + 1
                return pos
        raise AllArmsCapped

    return _run(
        problem, noise, loss, budget, schedule, cfg, split, rng,
        chooser=chooser, scale=scale, strategy="uniform",
    )


def oracle_run(
    problem: list[GroundTruth],
    noise: NoiseModel,
    loss: LossSpec,
    budget: int,
    schedule,
    cfg: EstimatorConfig,
    split: SplitMode,
    rng,
    scale: float = 8.0,
) -> tuple[list[MatrixEstimate], RunTrace]:
    """Baseline that allocates to the largest true error.

    Ground truth is read for selection only, never for fitting. With
    unit weights and equal dimensions the comparison uses raw squared
    errors; otherwise errors are normalized by d^2 and weighted.
    """
    dims_equal = len({gt.spec.dim for gt in problem}) == 1
    normalize = not (loss.weights is None and dims_equal)

    def chooser(states: list[ArmState]) -> int:
        available = [i for i, s in enumerate(states) if not s.at_cap]
        if not available:
            raise AllArmsCapped
        for i in available:
            if states[i].current is None:
                return i
        errors = _true_errors(states)
        best, best_score = -1, -math.inf
        for i in available:
            score = loss.weight(i) * errors[i]
            if normalize:
                score /= states[i].cap
            if score > best_score:
                best, best_score = i, score
        return best

    return _run(
        problem, noise, loss, budget, schedule, cfg, split, rng,
        chooser=chooser, scale=scale, strategy="oracle",
    )
