"""Predictable concept-drift adaptation by learned resampling of the training window."""

from .baselines import ForgettingSpec, baseline_weights
from .drift import AbruptDriftSpec, GradualDriftSpec, generate_abrupt, generate_gradual
from .kl import kl_normal
from .proxy import DesignMatrix, ProxySolution, SampleWeights, hypergradient_q, solve_wls, wls_loss
from .resampler import ResamplerModel, SimilarityFeatures, compute_weights, extract_features, weight_jacobian
from .stream import AdaptationTask, TaskSplit, TimeIndexedStream, generate_tasks, split_tasks
from .trainer import TrainConfig, TrainedResampler, forecast, task_loss, train

__all__ = [
    "AbruptDriftSpec", "AdaptationTask", "DesignMatrix", "ForgettingSpec", "GradualDriftSpec",
    "ProxySolution", "ResamplerModel", "SampleWeights", "SimilarityFeatures", "TaskSplit",
    "TimeIndexedStream", "TrainConfig", "TrainedResampler", "baseline_weights", "compute_weights",
    "extract_features", "forecast", "generate_abrupt", "generate_gradual", "generate_tasks",
    "hypergradient_q", "kl_normal", "solve_wls", "split_tasks", "task_loss", "train",
    "weight_jacobian", "wls_loss",
]
