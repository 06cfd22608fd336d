"""Voting stack: calibration, annotator reliability, weighted consensus."""

from .calibrate import (CalibrationError, Calibrator, IsotonicCalibrator,
                        PlattCalibrator, ece, fit_isotonic, fit_platt,
                        fit_temperature, nll)
from .dawid_skene import DsModel, ds_em, majority_vote
from .voting import (ConformalConfig, ConsensusResult, RolloutBallot,
                     fit_conformal, hard_majority, normalize_weights,
                     select_exemplar, weighted_consensus)

__all__ = [
    "CalibrationError", "Calibrator", "ConformalConfig", "ConsensusResult",
    "DsModel", "IsotonicCalibrator", "PlattCalibrator", "RolloutBallot",
    "ds_em", "ece", "fit_conformal", "fit_isotonic", "fit_platt",
    "fit_temperature", "hard_majority", "majority_vote", "nll",
    "normalize_weights", "select_exemplar", "weighted_consensus",
]
