"""Self-contained invariant suite behind ``amcsim check``.

Each check runs a small deterministic simulation and validates one
structural property of the engine. The suite prints one line per check
and fails loudly on any violation, so it doubles as a smoke test of an
installation.
"""
from __future__ import annotations

import math
import os
import tempfile

import numpy as np

from .error_bounds import SplitMode
from .estimators import EstimatorConfig
from .harness import (
    ExperimentConfig,
    StrategySpec,
    aggregate,
    read_metrics_csv,
    run_experiment,
    write_metrics_csv,
)
from .problem import NoiseModel, generate_ground_truth
from .strategies import (
    ArmState,
    Discretized,
    Doubling,
    LossSpec,
    initial_batch,
    loss_from_errors,
    malocate_run,
    select_index,
)

__all__ = ["run_all_checks", "CHECKS"]


def _tiny_config(**overrides) -> ExperimentConfig:
    base = dict(
        experiment="check",
        dims=(20, 24),
        ranks=(2, 3),
        sigma=0.05,
        bound_a=4.0,
        budget=1400,
        strategies=(
            StrategySpec("malocate", p=math.inf),
            StrategySpec("uniform"),
        ),
        schedule=Discretized(init_multiplier=8, num_batches=10, reuse_samples=True),
        split=SplitMode.BY_MULTIPLICITY,
        estimator=EstimatorConfig(max_iters=80, tol=1e-4),
        confidence_scale=0.0625,
        reps=2,
        seed=7,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def _doubling_trace():
    cfg = _tiny_config(
        schedule=Doubling(),
        budget=4000,
        strategies=(StrategySpec("malocate", p=1.0),),
        split=SplitMode.HALVES,
        reps=1,
    )
    truths = [generate_ground_truth(s, (cfg.seed, 0, 0, pos)) for pos, s in enumerate(cfg.specs())]
    _, trace = malocate_run(
        truths,
        NoiseModel.gaussian(cfg.sigma),
        LossSpec(p=1.0),
        cfg.budget,
        cfg.schedule,
        cfg.estimator,
        cfg.split,
        cfg.seed,
        scale=cfg.confidence_scale,
    )
    return cfg, truths, trace


def check_b_monotonicity() -> str | None:
    cfg = _tiny_config()
    _, traces = run_experiment(cfg, keep_traces=True)
    for (rep, s_idx), trace in traces.items():
        K = cfg.num_matrices
        prev = [math.inf] * K
        for event in trace.events:
            for pos in range(K):
                if event.b_values[pos] > prev[pos]:
                    return (
                        f"B increased for arm {pos} in rep {rep}, "
                        f"strategy {cfg.strategies[s_idx].label}"
                    )
            prev = list(event.b_values)
    return None


def check_doubling_law() -> str | None:
    cfg, truths, trace = _doubling_trace()
    pos_of = {gt.spec.index: i for i, gt in enumerate(truths)}
    prev_t = [0] * len(truths)
    for n_event, event in enumerate(trace.events):
        pos = pos_of[event.chosen]
        before, after = prev_t[pos], event.t_values[pos]
        last = n_event == len(trace.events) - 1
        cap = truths[pos].spec.dim ** 2
        if before == 0:
            if after != min(initial_batch(truths[pos].spec.dim), cap, cfg.budget):
                return f"bad initialization batch for arm {pos}: {after}"
        elif after != 2 * before and not last and after != cap:
            return f"arm {pos} went {before} -> {after} mid-run"
        prev_t = list(event.t_values)
    return None


def check_budget_accounting() -> str | None:
    cfg, truths, trace = _doubling_trace()
    for event in trace.events:
        if sum(event.t_values) != event.t:
            return f"sum T_k = {sum(event.t_values)} but t = {event.t}"
    final = trace.events[-1]
    if final.t > cfg.budget:
        return f"overspent: {final.t} > {cfg.budget}"
    if not trace.ended_early and final.t != cfg.budget:
        return f"underspent without cap: {final.t} < {cfg.budget}"
    return None


def check_argmax_scale_invariance() -> str | None:
    rng = np.random.default_rng(0)
    specs = _tiny_config().specs()
    truths = [generate_ground_truth(s, (1, 2, 0, i)) for i, s in enumerate(specs)]
    for trial in range(200):
        states = []
        for gt in truths:
            states.append(
                ArmState(
                    truth=gt,
                    samples_spent=int(rng.integers(1, gt.spec.dim**2)),
                    band=float(rng.uniform(0.01, 5.0)),
                )
            )
        for p in (1.0, 2.0, math.inf):
            loss = LossSpec(p=p)
            base = select_index(states, loss)
            c = float(rng.uniform(0.1, 10.0))
            scaled_states = [
                ArmState(truth=s.truth, samples_spent=s.samples_spent, band=c * s.band)
                for s in states
            ]
            if select_index(scaled_states, loss) != base:
                return f"choice changed under B -> {c:.3f} B at p={p}"
    return None


def check_loss_p_monotonicity() -> str | None:
    rng = np.random.default_rng(1)
    for trial in range(200):
        errors = rng.uniform(0.0, 10.0, size=rng.integers(1, 8))
        values = [
            loss_from_errors(errors, LossSpec(p=p)) for p in (1.0, 2.0, 4.0, math.inf)
        ]
        for a, b in zip(values, values[1:]):
            if b > a + 1e-12:
                return f"loss increased in p on errors {errors}"
    return None


def check_csv_round_trip() -> str | None:
    cfg = _tiny_config(reps=1)
    rows = run_experiment(cfg)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "metrics.csv")
        write_metrics_csv(rows, path)
        back = read_metrics_csv(path)
    if back != rows:
        return "rows changed across write/read"
    aggregate(rows)  # must not raise
    return None


def check_paired_generation() -> str | None:
    cfg = _tiny_config()
    _, traces = run_experiment(cfg, keep_traces=True)
    for rep in range(cfg.reps):
        hashes = {
            traces[(rep, s_idx)].truth_hashes
            for s_idx in range(len(cfg.strategies))
        }
        if len(hashes) != 1:
            return f"strategies saw different ground truths in rep {rep}"
    return None


def check_determinism() -> str | None:
    with tempfile.TemporaryDirectory() as tmp:
        out1, out2 = os.path.join(tmp, "a"), os.path.join(tmp, "b")
        run_experiment(_tiny_config(reps=1, out_dir=out1))
        run_experiment(_tiny_config(reps=1, out_dir=out2))
        with open(os.path.join(out1, "metrics.csv"), "rb") as fh:
            first = fh.read()
        with open(os.path.join(out2, "metrics.csv"), "rb") as fh:
            second = fh.read()
    if first != second:
        return "identical seeds produced different metrics.csv bytes"
    return None


CHECKS = [
    ("b_monotonicity", check_b_monotonicity),
    ("doubling_law", check_doubling_law),
    ("budget_accounting", check_budget_accounting),
    ("argmax_scale_invariance", check_argmax_scale_invariance),
    ("loss_p_monotonicity", check_loss_p_monotonicity),
    ("csv_round_trip", check_csv_round_trip),
    ("paired_generation", check_paired_generation),
    ("determinism", check_determinism),
]


def run_all_checks(echo=print) -> bool:
    """Run every invariant check; prints PASS/FAIL lines, returns success."""
    ok = True
    for name, check in CHECKS:
        failure = check()
        if failure is None:
            echo(f"PASS {name}")
        else:
            echo(f"FAIL {name}: {failure}")
            ok = False
    return ok
