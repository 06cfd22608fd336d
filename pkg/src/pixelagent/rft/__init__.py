"""Reward fine-tuning: reward assembly, GRPO updates, PID KL control."""

from .grpo import (GrpoConfig, GrpoStats, apply_policy_gradient,
                   group_advantages, grpo_update, kl_grad, logprob_grads)
from .pid import PidState, pid_step
from .rewards import (RewardContext, RewardWeights, argument_vector,
                      assemble_rewards, l2_smoothness, pen, trajectory_reward)

__all__ = [
    "GrpoConfig", "GrpoStats", "PidState", "RewardContext", "RewardWeights",
    "apply_policy_gradient", "argument_vector", "assemble_rewards",
    "group_advantages", "grpo_update", "kl_grad", "l2_smoothness",
    "logprob_grads", "pen", "pid_step", "trajectory_reward",
]
