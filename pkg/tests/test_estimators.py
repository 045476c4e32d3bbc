import math

import numpy as np
import pytest

from amcsim import (
    Dataset,
    EstimatorConfig,
    MatrixSpec,
    NoiseModel,
    SplitMode,
    generate_ground_truth,
    get_estimator,
    lambda_for,
    named_stream,
    new_samples,
    soft_impute_fit,
    sqrt_lasso_objective,
    svt,
)


def full_coverage_dataset(entries, index=1, repeat_first=0):
    d = entries.shape[0]
    rows, cols = np.divmod(np.arange(d * d), d)
    values = entries[rows, cols]
    ds = Dataset(index=index, rows=rows, cols=cols, values=values)
    if repeat_first:
        extra = Dataset(
            index=index,
            rows=np.zeros(repeat_first, dtype=int),
            cols=np.zeros(repeat_first, dtype=int),
            values=np.full(repeat_first, entries[0, 0]),
        )
        ds = ds.extend(extra)
    return ds


class TestLambdaFor:
    def test_hand_value(self):
        assert lambda_for(100, 1000, 1.0, 1.0) == pytest.approx(0.0067861, abs=1e-6)

    def test_linear_in_bound(self):
        assert lambda_for(100, 1000, 2.0, 1.0) == 2 * lambda_for(100, 1000, 1.0, 1.0)

    def test_zero_scale(self):
        assert lambda_for(100, 1000, 1.0, 0.0) == 0.0

    def test_decreasing_in_T(self):
        values = [lambda_for(50, T, 1.0, 1.0) for T in (10, 100, 1000)]
        assert values[0] > values[1] > values[2]

    def test_rejects_degenerate_dim(self):
        with pytest.raises(ValueError):
            lambda_for(1, 100, 1.0, 1.0)


class TestSqrtLassoObjective:
    def test_perfect_fit_no_penalty(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        data = full_coverage_dataset(m)
        assert sqrt_lasso_objective(m, data, 0.0) == pytest.approx(0.0)

    def test_single_residual(self):
        data = Dataset(index=1, rows=[0], cols=[0], values=[1.0])
        assert sqrt_lasso_objective(np.zeros((2, 2)), data, 0.0) == pytest.approx(1.0)

    def test_nuclear_penalty(self):
        m = np.zeros((2, 2))
        m[0, 0] = 1.0
        data = Dataset(index=1, rows=[0], cols=[0], values=[1.0])
        assert sqrt_lasso_objective(m, data, 0.5) == pytest.approx(0.5)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            sqrt_lasso_objective(np.zeros((2, 2)), Dataset(index=1), 0.0)


class TestSvt:
    def test_zero_threshold_is_identity(self):
        rng = np.random.default_rng(0)
        m = rng.normal(size=(8, 8))
        assert np.linalg.norm(svt(m, 0.0) - m) < 1e-10

    def test_diagonal_example(self):
        out = svt(np.diag([3.0, 1.0]), 2.0)
        assert np.allclose(out, np.diag([1.0, 0.0]), atol=1e-12)

    def test_full_shrinkage(self):
        rng = np.random.default_rng(1)
        m = rng.normal(size=(6, 6))
        top = np.linalg.svd(m, compute_uv=False)[0]
        assert np.allclose(svt(m, top + 1.0), 0.0)

    def test_never_increases_singular_values(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            m = rng.normal(size=(7, 7))
            theta = rng.uniform(0, 3)
            before = np.linalg.svd(m, compute_uv=False)
            after = np.linalg.svd(svt(m, theta), compute_uv=False)
            assert np.all(after <= before + 1e-10)
            assert after.sum() <= before.sum() + 1e-10

    def test_output_rank(self):
        m = np.diag([5.0, 3.0, 1.0])
        out = svt(m, 2.0)
        assert np.linalg.matrix_rank(out, tol=1e-10) == 2

    def test_rejects_negative_threshold(self):
        with pytest.raises(ValueError):
            svt(np.eye(2), -0.1)


class TestSoftImpute:
    def test_exact_recovery_rank_one(self):
        # noiseless, full coverage, vanishing regularization: recover exactly
        rng = np.random.default_rng(3)
        d = 20
        truth = np.outer(rng.normal(size=d), rng.normal(size=d))
        data = full_coverage_dataset(truth, repeat_first=3)
        spec = MatrixSpec(index=1, dim=d, rank_bound=1, bound=float(np.abs(truth).max()))
        cfg = EstimatorConfig(lambda_scale=0.0, max_iters=50, tol=1e-12)
        est = soft_impute_fit(data, spec, cfg)
        rel = np.linalg.norm(est.values - truth) / np.linalg.norm(truth)
        assert rel <= 1e-3

    def test_full_shrinkage_fixed_point(self):
        rng = np.random.default_rng(4)
        d = 10
        truth = np.outer(rng.normal(size=d), rng.normal(size=d))
        data = full_coverage_dataset(truth)
        # enormous lambda_scale pushes theta past the top singular value
        spec = MatrixSpec(index=1, dim=d, rank_bound=1, bound=4.0)
        cfg = EstimatorConfig(lambda_scale=1e6, max_iters=10, tol=1e-12)
        est = soft_impute_fit(data, spec, cfg)
        assert np.allclose(est.values, 0.0)

    def test_duplicates_averaged(self):
        # only entry (2,3) observed, twice; theta = 0 keeps the filled value
        d = 5
        data = Dataset(index=1, rows=[2, 2], cols=[3, 3], values=[0.4, 0.6])
        spec = MatrixSpec(index=1, dim=d, rank_bound=1, bound=4.0)
        cfg = EstimatorConfig(lambda_scale=0.0, max_iters=5, tol=1e-12)
        est = soft_impute_fit(data, spec, cfg)
        assert est.values[2, 3] == pytest.approx(0.5)
        assert est.trained_on == 2

    def test_empty_train_rejected(self):
        spec = MatrixSpec(index=1, dim=5, rank_bound=1)
        with pytest.raises(ValueError):
            soft_impute_fit(Dataset(index=1), spec, EstimatorConfig())

    def test_clip_output(self):
        d = 4
        data = Dataset(index=1, rows=[0], cols=[0], values=[10.0])
        spec = MatrixSpec(index=1, dim=d, rank_bound=1, bound=1.0)
        cfg = EstimatorConfig(lambda_scale=0.0, max_iters=3, tol=1e-12, clip_output=True)
        est = soft_impute_fit(data, spec, cfg)
        assert np.all(est.values <= 1.0) and np.all(est.values >= -1.0)
        loose = soft_impute_fit(
            data, spec, EstimatorConfig(lambda_scale=0.0, max_iters=3, tol=1e-12, clip_output=False)
        )
        assert loose.values[0, 0] == pytest.approx(10.0)

    def test_deterministic(self):
        spec = MatrixSpec(index=1, dim=25, rank_bound=2)
        gt = generate_ground_truth(spec, 11)
        data = new_samples(gt, NoiseModel.gaussian(0.1), 500, named_stream(5))
        cfg = EstimatorConfig(max_iters=60, tol=1e-6)
        a = soft_impute_fit(data, spec, cfg)
        b = soft_impute_fit(data, spec, cfg)
        assert np.array_equal(a.values, b.values)
        assert a.lambda_used == b.lambda_used

    def test_warm_start_changes_single_iteration(self):
        spec = MatrixSpec(index=1, dim=15, rank_bound=2)
        gt = generate_ground_truth(spec, 13)
        data = new_samples(gt, NoiseModel.none(), 300, named_stream(6))
        one_step = EstimatorConfig(max_iters=1, tol=1e-15, warm_start=True)
        cold = soft_impute_fit(data, spec, one_step)
        warmed = soft_impute_fit(data, spec, one_step, warm=cold)
        assert not np.array_equal(cold.values, warmed.values)
        ignored = soft_impute_fit(
            data, spec, EstimatorConfig(max_iters=1, tol=1e-15, warm_start=False), warm=cold
        )
        assert np.array_equal(cold.values, ignored.values)

    def test_surrogate_objective_monotone_in_debug(self):
        spec = MatrixSpec(index=1, dim=30, rank_bound=3)
        gt = generate_ground_truth(spec, 17)
        data = new_samples(gt, NoiseModel.gaussian(0.1), 700, named_stream(7))
        cfg = EstimatorConfig(max_iters=200, tol=1e-9, debug=True)
        soft_impute_fit(data, spec, cfg)  # raises AssertionError on violation

    def test_more_data_helps(self):
        # median error over 20 seeds shrinks when the sample quadruples
        d, r = 60, 3
        base = 4 * math.ceil(r * d * math.log(d))
        spec = MatrixSpec(index=1, dim=d, rank_bound=r)
        cfg = EstimatorConfig(max_iters=150, tol=1e-5)
        small, large = [], []
        for seed in range(20):
            gt = generate_ground_truth(spec, seed)
            rng = named_stream(100, seed)
            data = new_samples(gt, NoiseModel.gaussian(0.1), 4 * base, rng)
            sub = data.take(np.arange(base))
            for out, train in ((small, sub), (large, data)):
                est = soft_impute_fit(train, spec, cfg)
                out.append(float(np.sum((est.values - gt.entries) ** 2)))
        assert np.median(small) > np.median(large)


class TestGetEstimator:
    def test_halves_trains_on_half(self):
        spec = MatrixSpec(index=1, dim=20, rank_bound=2)
        gt = generate_ground_truth(spec, 19)
        data = new_samples(gt, NoiseModel.none(), 100, named_stream(8))
        est = get_estimator(spec, data, SplitMode.HALVES, EstimatorConfig(max_iters=20))
        assert est.trained_on == 50

    def test_by_multiplicity_all_distinct(self):
        d = 6
        rows, cols = np.divmod(np.arange(12), d)
        data = Dataset(index=1, rows=rows, cols=cols, values=np.ones(12))
        spec = MatrixSpec(index=1, dim=d, rank_bound=1)
        est = get_estimator(
            spec, data, SplitMode.BY_MULTIPLICITY, EstimatorConfig(max_iters=5)
        )
        assert est.trained_on == 12

    def test_halves_recovery_noiseless(self):
        rng = np.random.default_rng(23)
        d = 20
        truth = np.outer(rng.normal(size=d), rng.normal(size=d))
        # duplicate full coverage so each half still covers every entry
        base = full_coverage_dataset(truth)
        data = base.extend(base)
        spec = MatrixSpec(index=1, dim=d, rank_bound=1, bound=float(np.abs(truth).max()))
        cfg = EstimatorConfig(lambda_scale=0.0, max_iters=50, tol=1e-12)
        est = get_estimator(spec, data, SplitMode.HALVES, cfg)
        rel = np.linalg.norm(est.values - truth) / np.linalg.norm(truth)
        assert rel <= 1e-3
        assert est.trained_on == d * d

    def test_index_mismatch_rejected(self):
        spec = MatrixSpec(index=2, dim=5, rank_bound=1)
        data = Dataset(index=1, rows=[0], cols=[0], values=[1.0])
        with pytest.raises(ValueError):
            get_estimator(spec, data, SplitMode.HALVES, EstimatorConfig())

    def test_empty_train_portion_rejected(self):
        spec = MatrixSpec(index=1, dim=5, rank_bound=1)
        data = Dataset(index=1, rows=[0], cols=[0], values=[1.0])
        with pytest.raises(ValueError):
            get_estimator(spec, data, SplitMode.HALVES, EstimatorConfig())
