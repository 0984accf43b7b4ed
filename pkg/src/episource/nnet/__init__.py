"""Message-passing source detector with a from-scratch autodiff backend."""

from .autodiff import Tensor
from .layers import BatchNorm, DenseLayer, LayerStack, MessagePassingLayer, OutputHead
from .model import (AUGMENTED_FEATURES, BASE_FEATURES, ModelBundle, ModelConfig,
                    TrainMeta, adjacency_matrix, build_stack, forward_log_probs,
                    input_features, predict)
from .optim import Adam, AdamConfig, AdamState, adam_step
from .training import (SearchSpace, TrainConfig, TrainResult, TrainingDiverged,
                       TrialLog, gradient_check, nll_loss, stratified_split,
                       train, tune)

__all__ = [
    "Tensor", "BatchNorm", "DenseLayer", "LayerStack", "MessagePassingLayer",
    "OutputHead", "ModelBundle", "ModelConfig", "TrainMeta", "adjacency_matrix",
    "build_stack", "forward_log_probs", "input_features", "predict",
    "Adam", "AdamConfig", "AdamState", "adam_step", "SearchSpace", "TrainConfig",
    "TrainResult", "TrainingDiverged", "TrialLog", "gradient_check", "nll_loss",
    "stratified_split", "train", "tune",
    "BASE_FEATURES", "AUGMENTED_FEATURES",
]
