"""Stationary representations on a fixed simplex classifier and cross-model compatibility tools."""

__version__ = "0.1.0"

from .errors import CapacityError, DivergenceError, NumericalError, ValidationError
from .simplex import FINETUNE, PRETRAIN, SimplexClassifier, assign_classes, build_simplex, verify_etf
from .hyperball import (
    HyperballSpec,
    cap_probability,
    expected_nn_angle,
    mc_expected_distance,
    theorem_experiment,
)
from .losses import hoc_loss, nce_loss, sce_loss
from .network import RepresentationModel
from .training import HOCConfig, train_model
from .sequence import TaskSequence, run_sequence
from .features import FeatureSet, extract_features
from .evaluation import (
    CompatibilityReport,
    build_report,
    def1_check,
    retrieval_accuracy,
)
from .harness import ExperimentConfig, run_ablation, run_experiment, verify_manifest
from .estimator import SimplexEmbedder

__all__ = [
    "CapacityError",
    "CompatibilityReport",
    "DivergenceError",
    "ExperimentConfig",
    "FINETUNE",
    "FeatureSet",
    "HOCConfig",
    "HyperballSpec",
    "NumericalError",
    "PRETRAIN",
    "RepresentationModel",
    "SimplexClassifier",
    "SimplexEmbedder",
    "TaskSequence",
    "ValidationError",
    "assign_classes",
    "build_report",
    "build_simplex",
    "cap_probability",
    "def1_check",
    "expected_nn_angle",
    "extract_features",
    "hoc_loss",
    "mc_expected_distance",
    "nce_loss",
    "retrieval_accuracy",
    "run_ablation",
    "run_experiment",
    "run_sequence",
    "sce_loss",
    "theorem_experiment",
    "train_model",
    "verify_etf",
    "verify_manifest",
]
