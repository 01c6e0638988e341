"""Diffusion-refined decision sequence modelling on toy offline-RL tasks."""

from .autodiff import DArray, backward, check_gradients
from .config import EvalConfig, TrainConfig
from .diffusion import (DiffusionSchedule, NoiseApproximatorParams,
                        denoise_step, diffusion_loss, forward_noise,
                        predict_noise, sample_action, vp_schedule)
from .dt3 import (AttentionTTTBlock, ContextBatch, ContextWindow, DT3Params,
                  TTTLinearLayer, predict_coarse_actions,
                  predict_coarse_actions_batch, ttt_forward)
from .envs import (EnvSpec, Trajectory, TrajectoryStore, compute_rtg,
                   generate_dataset, initial_rtg, make_env, make_env_spec,
                   normalized_score, rollout)
from .training import AdamW, MetricsLog, dt3_loss, train, unified_loss

__all__ = [
    "DArray", "backward", "check_gradients",
    "TrainConfig", "EvalConfig",
    "DiffusionSchedule", "NoiseApproximatorParams", "vp_schedule",
    "forward_noise", "predict_noise", "denoise_step", "sample_action",
    "diffusion_loss",
    "ContextWindow", "ContextBatch", "TTTLinearLayer", "AttentionTTTBlock",
    "DT3Params", "ttt_forward", "predict_coarse_actions",
    "predict_coarse_actions_batch",
    "EnvSpec", "Trajectory", "TrajectoryStore", "compute_rtg", "initial_rtg",
    "normalized_score", "make_env", "make_env_spec", "generate_dataset",
    "rollout",
    "dt3_loss", "unified_loss", "AdamW", "MetricsLog", "train",
]
