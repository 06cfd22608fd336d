"""Online test-time RL: retrieval, voting, masked updates, drift control."""

from ..rft.rewards import pen
from .loop import (VARIANTS, CorpusItem, Neighborhood, StepReport, TtrlConfig,
                   TtrlRuntime, dedup_rollouts, neighborhood_value_update,
                   query_digest, retrieve, rollout_similarity, ttrl_step)
from .runner import (RunReport, build_runtime, make_shifted_stream,
                     probe_accuracy, run_online, trace_references)

__all__ = [
    "VARIANTS", "CorpusItem", "Neighborhood", "RunReport", "StepReport",
    "TtrlConfig", "TtrlRuntime", "build_runtime", "dedup_rollouts",
    "make_shifted_stream", "neighborhood_value_update", "pen",
    "probe_accuracy", "query_digest", "retrieve", "rollout_similarity",
    "run_online", "trace_references", "ttrl_step",
]
