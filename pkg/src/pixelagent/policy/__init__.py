"""Featurized toolchain policy, rollout sampling and imitation training."""

from .features import (ATTR_KEYS, ActionAlphabet, EvidenceState, FeatureSpec,
                       answer_features, census, featurize_state)
from .model import (EmaPolicy, PolicyParams, RolloutCaps, TrajStep,
                    Trajectory, entropy, sample_trajectory, score_trajectory,
                    softmax, step_kl)
from .sft import (AuxHeads, SftConfig, SftExample, SftResult, TokenStats,
                  TrainingError, build_example, clip_gradients,
                  sft_loss_and_grad, sft_train)

__all__ = [
    "ATTR_KEYS", "ActionAlphabet", "AuxHeads", "EmaPolicy", "EvidenceState",
    "FeatureSpec", "PolicyParams", "RolloutCaps", "SftConfig", "SftExample",
    "SftResult", "TokenStats", "TrainingError", "TrajStep", "Trajectory",
    "answer_features", "build_example", "census", "clip_gradients", "entropy",
    "featurize_state", "sample_trajectory", "score_trajectory",
    "sft_loss_and_grad", "sft_train", "softmax", "step_kl",
]
