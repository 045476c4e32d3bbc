"""Active multiple matrix completion: adaptive allocation with honest bands."""

from .error_bounds import (
    ErrorEstimate,
    PairedSample,
    SplitMode,
    b_value,
    estimate_error,
    estimate_error_bound,
    pair_double_samples,
    split_dataset,
)
from .estimators import (
    EstimatorConfig,
    MatrixEstimate,
    get_estimator,
    lambda_for,
    soft_impute_fit,
    sqrt_lasso_objective,
    svt,
)
from .harness import (
    ExperimentConfig,
    MetricsRow,
    StrategySpec,
    aggregate,
    config_from_dict,
    config_to_dict,
    load_config,
    preset_experiment_1,
    preset_experiment_2,
    read_metrics_csv,
    run_experiment,
    scaled,
    write_metrics_csv,
    write_summary_csv,
)
from .problem import (
    Dataset,
    GroundTruth,
    MatrixSpec,
    NoiseModel,
    Observation,
    generate_ground_truth,
    named_stream,
    new_samples,
)
from .strategies import (
    AllArmsCapped,
    ArmState,
    Discretized,
    Doubling,
    LossSpec,
    RunTrace,
    TraceEvent,
    compute_loss,
    initial_batch,
    loss_from_errors,
    malocate_run,
    oracle_run,
    select_index,
    uniform_run,
)

__version__ = "0.1.0"
