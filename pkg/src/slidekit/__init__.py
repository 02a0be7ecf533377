"""Slide-level fine-tuning toolkit over precomputed patch-embedding bags.

Classify whole slides from frozen patch features: mean pooling with a
two-layer MLP head, a linear probe, and gated-attention MIL, plus the
experiment harness (multi-seed benchmark, few-shot curves, cross-cohort
transfer, pooling/activation ablation) and bootstrap-CI metrics.
"""

from .aggregate import (
    GatedAttentionParams,
    SlideBag,
    canonical_row_order,
    gated_attention_pool,
    max_pool,
    mean_pool,
)
from .data import (
    DatasetManifest,
    ManifestEntry,
    SynthConfig,
    TransferSplit,
    few_shot_sample,
    generate_synthetic_corpus,
    load_bags,
    read_embedding,
    read_manifest,
    split_by_cohort,
    validate_manifest_files,
    write_embedding,
    write_manifest,
)
from .errors import (
    ConfigError,
    DegenerateDataError,
    EmptyBagError,
    FormatError,
    ManifestError,
    NumericError,
    ShapeError,
    SlidekitError,
    StateError,
    UndefinedMetricError,
)
from .gradcore import (
    GradCheckReport,
    LayerParams,
    finite_difference_check,
    softmax_cross_entropy,
)
from .harness import (
    ExperimentPlan,
    Protocol,
    RunRecord,
    ablation_grid,
    load_records,
    plan_hash,
    run_plan,
    write_summaries,
)
from .heads import (
    ModelSpec,
    SlideModel,
    build_model,
    check_model_gradients,
    gradcheck_suite,
    load_checkpoint,
    predict,
    save_checkpoint,
    spec_for_method,
)
from .metrics import (
    EvalReport,
    SeedSummary,
    aggregate_seeds,
    balanced_accuracy,
    bootstrap_ci,
    evaluate_predictions,
    roc_auc,
    weighted_f1,
)
from .optim import AdamWState, TrainConfig, TrainResult, adamw_step, train
from .rngs import make_rng

__version__ = "0.1.0"

__all__ = [
    "AdamWState",
    "ConfigError",
    "DatasetManifest",
    "DegenerateDataError",
    "EmptyBagError",
    "EvalReport",
    "ExperimentPlan",
    "FormatError",
    "GatedAttentionParams",
    "GradCheckReport",
    "LayerParams",
    "ManifestEntry",
    "ManifestError",
    "ModelSpec",
    "NumericError",
    "Protocol",
    "RunRecord",
    "SeedSummary",
    "ShapeError",
    "SlideBag",
    "SlideModel",
    "SlidekitError",
    "StateError",
    "SynthConfig",
    "TrainConfig",
    "TrainResult",
    "TransferSplit",
    "UndefinedMetricError",
    "ablation_grid",
    "aggregate_seeds",
    "balanced_accuracy",
    "bootstrap_ci",
    "build_model",
    "canonical_row_order",
    "check_model_gradients",
    "evaluate_predictions",
    "few_shot_sample",
    "finite_difference_check",
    "gated_attention_pool",
    "generate_synthetic_corpus",
    "gradcheck_suite",
    "load_bags",
    "load_checkpoint",
    "load_records",
    "make_rng",
    "max_pool",
    "mean_pool",
    "plan_hash",
    "predict",
    "read_embedding",
    "read_manifest",
    "roc_auc",
    "run_plan",
    "save_checkpoint",
    "softmax_cross_entropy",
    "spec_for_method",
    "split_by_cohort",
    "train",
    "validate_manifest_files",
    "weighted_f1",
    "write_embedding",
    "write_manifest",
    "write_summaries",
]
