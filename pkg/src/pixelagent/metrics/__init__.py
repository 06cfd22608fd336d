"""Process metrics, fidelity scoring, alignment and risk-coverage."""

from .align import (GAMMA_DEFAULT, alignment_score, edit_similarity,
                    hard_dtw_exhaustive, sim_behav, soft_dtw, step_fidelity)
from .fidelity import (ReferenceStep, attribute_f1, interval_f1,
                       reference_steps, visfid)
from .process import (ChainCandidate, RcprConfig, chain_quality,
                      gate_positions, qualified_chains, racpr,
                      racpr_from_trajectory, rapr)
from .risk import RiskPoint, VoteRecord, bootstrap_ci, err_at_sel, risk_coverage

__all__ = [
    "GAMMA_DEFAULT", "ChainCandidate", "RcprConfig", "ReferenceStep",
    "RiskPoint", "VoteRecord", "alignment_score", "attribute_f1",
    "bootstrap_ci", "chain_quality", "edit_similarity", "err_at_sel",
    "gate_positions", "hard_dtw_exhaustive", "interval_f1",
    "qualified_chains", "racpr", "racpr_from_trajectory", "rapr",
    "reference_steps", "risk_coverage", "sim_behav", "soft_dtw",
    "step_fidelity", "visfid",
]
