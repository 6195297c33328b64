"""Finite-mixture synchronization analysis for categorical data.

Fits a mixture whose per-feature adversarial multinomial pairs separate
coordinated (synchronized) values from background randomness, then scores
rows and groups for fraud-like structure.
"""

__version__ = "0.1.0"

from .data import (
    DataError,
    EncodedDataset,
    FeatureSchema,
    FeatureSpec,
    RawTable,
    UNK_CODE,
    bin_continuous,
    decode,
    encode,
    encode_with_vocab,
    load_csv,
)
from .detect import (
    DetectionReport,
    GroupScores,
    anomaly_scores,
    build_report,
    cluster_entropy,
    filter_outliers,
    fraud_group_scores,
    infer_labels,
    row_information,
)
from .em import (
    FitConfig,
    FitResult,
    FitTrace,
    NumericFailure,
    Responsibilities,
    e_step,
    fit,
    fit_annealed,
    m_step_closed,
    m_step_fixed_point,
    objective,
)
from .metrics import (
    ClusteringScore,
    CurvePoints,
    MetricError,
    clustering_scores,
    pr_curve,
    roc_auc,
    roc_points,
)
from .model import (
    LoadedModel,
    ModelFormatError,
    ModelParams,
    RegWeights,
    init_params,
    load_model,
    log_feature_terms,
    normalize_lambda,
    save_model,
)
from .synth import (
    GenConfig,
    GroundTruth,
    generate,
    paper_analysis_preset,
)

__all__ = [
    "__version__",
    "UNK_CODE",
    "DataError",
    "EncodedDataset",
    "FeatureSchema",
    "FeatureSpec",
    "RawTable",
    "bin_continuous",
    "decode",
    "encode",
    "encode_with_vocab",
    "load_csv",
    "DetectionReport",
    "GroupScores",
    "anomaly_scores",
    "build_report",
    "cluster_entropy",
    "filter_outliers",
    "fraud_group_scores",
    "infer_labels",
    "row_information",
    "FitConfig",
    "FitResult",
    "FitTrace",
    "NumericFailure",
    "Responsibilities",
    "e_step",
    "fit",
    "fit_annealed",
    "m_step_closed",
    "m_step_fixed_point",
    "objective",
    "ClusteringScore",
    "CurvePoints",
    "MetricError",
    "clustering_scores",
    "pr_curve",
    "roc_auc",
    "roc_points",
    "LoadedModel",
    "ModelFormatError",
    "ModelParams",
    "RegWeights",
    "init_params",
    "load_model",
    "log_feature_terms",
    "normalize_lambda",
    "save_model",
    "GenConfig",
    "GroundTruth",
    "generate",
    "paper_analysis_preset",
]
