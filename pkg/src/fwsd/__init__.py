"""Stochastic Frank-Wolfe / steepest-descent hybrid over l1-ball blocks.

The optimizer treats some coordinate blocks with projection-free
Frank-Wolfe steps on l1 balls (plus optional in-face away steps that
drive coordinates exactly to zero) and the remaining variables with
normalized steepest descent, all from one shared stochastic gradient
batch per iteration. A certified duality-gap estimator drives the
convergence diagnostics.
"""

from .gap import (
    GapConstants,
    GapEstimate,
    InternalConsistencyError,
    dual_norm,
    exact_gap,
    gap_estimate,
)
from .geometry import (
    Face,
    L1Ball,
    Norm,
    Vertex,
    away_direction,
    in_face_lmo,
    in_face_step_cap,
    lmo,
    max_feasible_step,
    minimal_face,
)
from .optimizer import (
    AltStepInfo,
    BatchSchedule,
    GradientEstimate,
    Iterate,
    OptimizerConfig,
    RngStreams,
    RunResult,
    TraceRecord,
    alt_step,
    derive_rng_streams,
    fw_step,
    iterates_digest,
    run,
    sample_gradient_batch,
    sd_step,
)
from .problems import (
    QuadraticInstance,
    StochasticProblem,
    finite_difference_check,
    make_quadratic,
)
from .sparse_net import (
    Activation,
    Dataset,
    LayerParams,
    Loss,
    MLPProblem,
    MLPSpec,
    ParamLayout,
    SynthSpec,
    evaluate,
    forward,
    generate_synthetic,
    hard_threshold,
    init_params,
    load_dataset_bin,
    load_dataset_csv,
    loss_value,
    nnz_metrics,
    per_sample_gradient,
    save_dataset_bin,
    save_dataset_csv,
)

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "AltStepInfo",
    "BatchSchedule",
    "Dataset",
    "Face",
    "GapConstants",
    "GapEstimate",
    "GradientEstimate",
    "InternalConsistencyError",
    "Iterate",
    "L1Ball",
    "LayerParams",
    "Loss",
    "MLPProblem",
    "MLPSpec",
    "Norm",
    "OptimizerConfig",
    "ParamLayout",
    "QuadraticInstance",
    "RngStreams",
    "RunResult",
    "StochasticProblem",
    "SynthSpec",
    "TraceRecord",
    "Vertex",
    "alt_step",
    "away_direction",
    "derive_rng_streams",
    "dual_norm",
    "evaluate",
    "exact_gap",
    "finite_difference_check",
    "forward",
    "fw_step",
    "gap_estimate",
    "generate_synthetic",
    "hard_threshold",
    "in_face_lmo",
    "in_face_step_cap",
    "init_params",
    "iterates_digest",
    "lmo",
    "load_dataset_bin",
    "load_dataset_csv",
    "loss_value",
    "make_quadratic",
    "max_feasible_step",
    "minimal_face",
    "nnz_metrics",
    "per_sample_gradient",
    "run",
    "sample_gradient_batch",
    "save_dataset_bin",
    "save_dataset_csv",
    "sd_step",
    "__version__",
]
