from .train import (
    DESK_ROUTER_DEFAULTS, DETECTOR_DEFAULTS, ROUTER_DEFAULTS, DeltaOffset, DivergenceError, TrainConfig, TrainHistory,
    calibrate_delta, input_scale, loss_curve_report, lower_median, router_samples, train_detectors_joint, train_router,
)
from .ablation import STRATEGIES, AblationConfig, train_router_ablation
from .inference import (
    RoutingDecision, ThresholdCalibration, calibrate_threshold, compute_k, infer_dynamic, measure_route_latency,
    score_scenes, threshold_for_budget,
)
from .evaluate import EvalResult, average_precision, evaluate_ap
from .studies import difficulty_report, flops_summary, sweep_tradeoff, threshold_robustness
from .run import RunConfig, StageError, load_run_config, run_pipeline, run_stage
