"""Hypergraph-convolution patient-similarity model for ICU mortality risk.

Patients' hourly vitals run through a GRU; the final hidden state is fused
with binary diagnosis codes.  Diagnosis codes define per-batch hyperedges,
and a stacked residual hypergraph convolution mixes the representations of
co-diagnosed patients.  A learnable-threshold similarity graph then drives a
GCN aggregation step, and an attention-gated FFN ensemble predicts
in-hospital mortality.  All gradients are hand-derived and verified against
finite differences; training is fully deterministic given a seed.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (DEFAULT_SCHEMA, Cohort, NormStats, PatientRecord, filter_by_code,
                   impute_mean, load_cohort, split, standardize)
from .errors import (CheckpointError, CheckpointVersionError, ConfigError,
                     GradientCheckError, ParseError, ShapeError, TrainingError,
                     UndefinedMetricError)
from .metrics import (MetricsReport, auprc, auroc, compute_report, confusion_metrics,
                      min_se_pplus)
from .model import Batch, ModelConfig, ModelParams, forward_eval, forward_train, init_params
from .numeric import AdamState, Rng, adam_step, finite_diff_check
from .synthetic import SyntheticSpec, gen_synthetic, null_spec, write_cohort_files
from .train import (Checkpoint, TrainConfig, derive_rng_streams, evaluate,
                    export_embeddings, predict_scores, train)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "Batch", "Checkpoint", "CheckpointError", "CheckpointVersionError",
    "Cohort", "ConfigError", "DEFAULT_SCHEMA", "GradientCheckError", "MetricsReport",
    "ModelConfig", "ModelParams", "NormStats", "ParseError", "PatientRecord", "Rng",
    "ShapeError", "SyntheticSpec", "TrainConfig", "TrainingError",
    "UndefinedMetricError", "adam_step", "auprc", "auroc", "compute_report",
    "confusion_metrics", "derive_rng_streams", "evaluate", "export_embeddings",
    "filter_by_code", "finite_diff_check", "forward_eval", "forward_train",
    "gen_synthetic", "impute_mean", "init_params", "load_checkpoint", "load_cohort",
    "min_se_pplus", "null_spec", "predict_scores", "save_checkpoint", "split",
    "standardize", "train", "write_cohort_files",
]
