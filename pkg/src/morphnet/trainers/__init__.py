"""Joint multi-morphology trainers."""

from .common import (EvalReport, MetricsWriter, ReplayBuffer, TrainingDivergence, evaluate,
                     gae_advantages, random_policy_report, sampling_prob_update)
from .ppo import PpoConfig, ppo_train
from .td3 import Td3Config, TrainResult, td3_train

__all__ = [
    "EvalReport", "MetricsWriter", "PpoConfig", "ReplayBuffer", "Td3Config", "TrainResult",
    "TrainingDivergence", "evaluate", "gae_advantages", "ppo_train", "random_policy_report",
    "sampling_prob_update", "td3_train",
]
