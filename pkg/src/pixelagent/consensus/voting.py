"""Uncertainty-weighted consensus with conformal abstention and exemplar
selection.

Ballot weights follow w_j proportional to exp(-H_j) * Cal_j * VisFid_j *
r_j, normalized over the rollouts.  The consensus margin is the top-2 gap
of class scores normalized by total weight; the conformal set collects
classes whose nonconformity (1 - normalized class score) stays within a
threshold fit as the (1 - lambda) empirical quantile on a dev-cal split.
A query abstains when the margin is below delta or the set is not a
singleton.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class RolloutBallot:
    answer: int
    entropy: float            # decisive-step entropy H_j
    calibrated: float         # Cal_j in (0, 1]
    visfid: float             # VisFid in [0, 1]
    reliability: float = 1.0  # DS reliability r_j
    weight: float = 0.0

    def raw_weight(self) -> float:
        return float(np.exp(-self.entropy) * self.calibrated * self.visfid
                     * self.reliability)


def normalize_weights(ballots: list[RolloutBallot]) -> None:
    """Fill normalized weights in place.  An all-zero raw pattern (e.g.
    every VisFid zero) falls back to uniform weights, which reproduces hard
    majority; this is logged."""
    raw = np.array([b.raw_weight() for b in ballots])
    total = raw.sum()
    if total <= 0.0:
        log.warning("all ballot weights zero; falling back to uniform")
        raw = np.ones(len(ballots))
        total = float(len(ballots))
    for b, w in zip(ballots, raw / total):
        b.weight = float(w)


@dataclass(frozen=True)
class ConformalConfig:
    """Threshold for nonconformity = 1 - normalized class score.

    ``lambda_risk`` is the miscoverage budget used when fitting on dev-cal.
    The default threshold 0.5 applies when no calibration data exists yet.
    """

    threshold: float = 0.5
    lambda_risk: float = 0.1


def fit_conformal(margins_scores: list[tuple[np.ndarray, int]],
                  lambda_risk: float = 0.1) -> ConformalConfig:
    """Fit the threshold from (normalized class-score vector, true class)
    pairs as the finite-sample (1 - lambda) quantile of true-class
    nonconformity."""
    if not margins_scores:
        return ConformalConfig(lambda_risk=lambda_risk)
    scores = np.array([1.0 - s[y] for s, y in margins_scores])
    n = len(scores)
    level = min(np.ceil((n + 1) * (1.0 - lambda_risk)) / n, 1.0)
    q = float(np.quantile(scores, level, method="higher"))
    # a threshold of exactly 1 would admit zero-score classes; stay inside
    return ConformalConfig(threshold=min(q, 1.0 - 1e-9),
                           lambda_risk=lambda_risk)


@dataclass
class ConsensusResult:
    answer: int
    margin: float
    conformal_set: list[int]
    abstain: bool
    weights: list[float]
    class_scores: dict[int, float]
    exemplar_index: int | None = None

    @property
    def mask(self) -> int:
        """m(q): 1 when the update may proceed."""
        return 0 if self.abstain else 1


def weighted_consensus(ballots: list[RolloutBallot], delta: float,
                       conformal: ConformalConfig | None = None,
                       n_classes: int | None = None) -> ConsensusResult:
    """Aggregate ballots into a consensus answer with abstention.

    Class scores sum normalized ballot weights; margin is the top-2 score
    gap over the total.  Abstains when margin < delta or the conformal set
    has more than one class.
    """
    if not ballots:
        raise ValueError("need at least one ballot")
    conformal = conformal or ConformalConfig()
    normalize_weights(ballots)

    scores: dict[int, float] = {}
    for b in ballots:
        scores[b.answer] = scores.get(b.answer, 0.0) + b.weight
    total = sum(scores.values())
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    top_class, top_score = ranked[0]
    second = ranked[1][1] if len(ranked) > 1 else 0.0
    margin = (top_score - second) / total if total > 0 else 0.0

    universe = range(n_classes) if n_classes else scores.keys()
    cset = sorted(c for c in universe
                  if 1.0 - scores.get(c, 0.0) / total <= conformal.threshold)
    abstain = margin < delta or len(cset) != 1
    return ConsensusResult(answer=top_class, margin=float(margin),
                           conformal_set=cset, abstain=bool(abstain),
                           weights=[b.weight for b in ballots],
                           class_scores={k: float(v) for k, v in scores.items()})


def hard_majority(ballots: list[RolloutBallot]) -> ConsensusResult:
    """Plurality vote, never abstains; the no-safety voting baseline."""
    flat = [RolloutBallot(answer=b.answer, entropy=0.0, calibrated=1.0,
                          visfid=1.0, reliability=1.0) for b in ballots]
    res = weighted_consensus(flat, delta=0.0,
                             conformal=ConformalConfig(threshold=1.0 - 1e-9))
    res.abstain = False
    res.conformal_set = [res.answer]
    return res


def select_exemplar(lengths: list[int], cur_coh: list[float],
                    visfid: list[float], eta: float = 1.0,
                    xi: float = 1.0) -> int | None:
    """argmin over the successful set of |tau| - eta*(Cur+Coh) - xi*VisFid.

    Ties break to the lowest length, then the lowest index.  Returns None
    for an empty set: the caller must abstain.
    """
    if not lengths:
        return None
    scores = [l - eta * cc - xi * vf
              for l, cc, vf in zip(lengths, cur_coh, visfid)]
    order = sorted(range(len(scores)),
                   key=lambda i: (scores[i], lengths[i], i))
    return order[0]
