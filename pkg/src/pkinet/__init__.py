"""Projector-ensemble few-shot class-incremental learning on feature streams."""

from .data import (
    FeatureDataset,
    SessionLayout,
    SessionStream,
    SynthSpec,
    load_feature_file,
    make_synthetic_stream,
    save_feature_file,
    validate_stream,
)
from .ensemble import (
    ProjectorEnsemble,
    add_projector,
    effective_weight_groups,
    ensemble_forward,
    freeze_current,
    new_ensemble,
)
from .errors import (
    DegenerateVectorError,
    FeatureFileError,
    FrozenParameterError,
    PkinetError,
    ProtocolError,
)
from .estimator import PKIClassifier
from .evaluate import (
    AccuracyMatrix,
    Report,
    average_accuracy,
    emit_table,
    evaluate_joint,
    evaluate_sessions,
)
from .memory import ClassMeanMemory, class_means, memory_update
from .model import Classifier, ModelState, expand_classifier, forward_logits
from .nn import (
    Projector,
    cosine_lr,
    init_projector,
    l2_normalize,
    mlp_backward,
    mlp_forward,
    sgd_momentum_step,
    softmax_cross_entropy,
)
from .trainer import TrainConfig, base_train, incremental_train, run_protocol
from .checkpoint import load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "AccuracyMatrix",
    "ClassMeanMemory",
    "Classifier",
    "DegenerateVectorError",
    "FeatureDataset",
    "FeatureFileError",
    "FrozenParameterError",
    "ModelState",
    "PKIClassifier",
    "PkinetError",
    "Projector",
    "ProjectorEnsemble",
    "ProtocolError",
    "Report",
    "SessionLayout",
    "SessionStream",
    "SynthSpec",
    "TrainConfig",
    "add_projector",
    "average_accuracy",
    "base_train",
    "class_means",
    "cosine_lr",
    "effective_weight_groups",
    "emit_table",
    "ensemble_forward",
    "evaluate_joint",
    "evaluate_sessions",
    "expand_classifier",
    "forward_logits",
    "freeze_current",
    "incremental_train",
    "init_projector",
    "l2_normalize",
    "load_checkpoint",
    "load_feature_file",
    "make_synthetic_stream",
    "memory_update",
    "mlp_backward",
    "mlp_forward",
    "new_ensemble",
    "run_protocol",
    "save_checkpoint",
    "save_feature_file",
    "sgd_momentum_step",
    "softmax_cross_entropy",
    "validate_stream",
]
