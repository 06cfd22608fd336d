"""Step embeddings, coherence standardization and curiosity machinery."""

from .dynamics import (DynamicsConfig, DynamicsHead, curiosity,
                       curiosity_batch, dynamics_loss_and_grad,
                       dynamics_transitions, prediction_error, train_dynamics)
from .embed import (EMBED_DIM, Projector, StepEmbedding, adjacent_cosines,
                    embed_step, embed_trajectory, gelu, tool_features,
                    visual_summary)
from .zstats import ZStats, ZStatsError, coherence_reward

__all__ = [
    "EMBED_DIM", "DynamicsConfig", "DynamicsHead", "Projector",
    "StepEmbedding", "ZStats", "ZStatsError", "adjacent_cosines",
    "coherence_reward", "curiosity", "curiosity_batch",
    "dynamics_loss_and_grad", "dynamics_transitions", "embed_step",
    "embed_trajectory", "gelu", "prediction_error", "tool_features",
    "train_dynamics", "visual_summary",
]
