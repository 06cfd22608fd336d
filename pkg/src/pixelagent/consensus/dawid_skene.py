"""Dawid-Skene EM over rollout ballots.

Rollout slots play the annotator role: slot j's answers across a query
batch estimate a C x C confusion matrix whose diagonal mean is the
reliability r_j that multiplies vote weights.  Initialization follows the
standard recipe: majority-vote labels and Laplace-smoothed diagonal
confusions (eps = 1e-2); iteration stops when the relative log-likelihood
improvement drops below 1e-6 or after 50 rounds.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

LAPLACE_EPS = 1e-2
LL_REL_TOL = 1e-6
MAX_ITERS = 50
_LOG_FLOOR = 1e-300


@dataclass
class DsModel:
    prior: np.ndarray            # (C,)
    confusion: np.ndarray        # (N, C, C), row-stochastic per annotator
    log_likelihoods: list        # per-iteration observed-data LL
    degenerate: bool = False

    @property
    def reliabilities(self) -> np.ndarray:
        """Per-annotator mean diagonal of the confusion matrix."""
        return self.confusion.diagonal(axis1=1, axis2=2).mean(axis=1)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({
            "version": 1,
            "prior": self.prior.tolist(),
            "confusion": self.confusion.tolist(),
            "log_likelihoods": [float(x) for x in self.log_likelihoods],
            "degenerate": self.degenerate,
        }))

    @classmethod
    def load(cls, path: str | Path) -> "DsModel":
        d = json.loads(Path(path).read_text())
        return cls(prior=np.asarray(d["prior"]),
                   confusion=np.asarray(d["confusion"]),
                   log_likelihoods=d["log_likelihoods"],
                   degenerate=d["degenerate"])


def majority_vote(ballots: np.ndarray, C: int) -> np.ndarray:
    """Per-query plurality labels; ties break to the lowest class id."""
    counts = np.zeros((ballots.shape[0], C))
    for j in range(ballots.shape[1]):
        counts[np.arange(ballots.shape[0]), ballots[:, j]] += 1.0
    return counts.argmax(axis=1)


def _log_likelihood(ballots: np.ndarray, prior: np.ndarray,
                    confusion: np.ndarray) -> tuple[float, np.ndarray]:
    """Observed-data LL plus per-query class responsibilities."""
    Q, N = ballots.shape
    C = prior.shape[0]
    logp = np.log(np.maximum(prior, _LOG_FLOOR))[None, :].repeat(Q, axis=0)
    for j in range(N):
        logp += np.log(np.maximum(confusion[j][:, ballots[:, j]].T, _LOG_FLOOR))
    m = logp.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logp - m).sum(axis=1, keepdims=True))
    resp = np.exp(logp - lse)
    return float(lse.sum()), resp


def ds_em(ballots: np.ndarray, C: int) -> tuple[DsModel, np.ndarray]:
    """Fit the latent-truth model on a (queries x annotators) answer matrix.

    Returns the model and per-annotator reliabilities.  A fully degenerate
    batch (one answer everywhere) yields a prior-dominated model whose
    unobserved confusion rows are uniform; this is logged, not an error.
    """
    ballots = np.asarray(ballots, dtype=int)
    if ballots.ndim != 2:
        raise ValueError("ballots must be (queries, annotators)")
    Q, N = ballots.shape
    if N < 2 or C < 2:
        raise ValueError("need at least 2 annotators and 2 classes")
    if ballots.min() < 0 or ballots.max() >= C:
        raise ValueError("ballot classes out of range")

    degenerate = np.unique(ballots).size == 1
    if degenerate:
        log.warning("ds_em: all ballots identical; returning prior-dominated model")

    mv = majority_vote(ballots, C)
    resp = np.zeros((Q, C))
    resp[np.arange(Q), mv] = 1.0

    # init: Laplace-smoothed diagonal confusions, empirical prior
    prior = (np.bincount(mv, minlength=C) + LAPLACE_EPS) / (Q + C * LAPLACE_EPS)
    confusion = np.tile((np.eye(C) + LAPLACE_EPS) / (1.0 + C * LAPLACE_EPS),
                        (N, 1, 1))

    lls: list[float] = []
    for it in range(MAX_ITERS):
        # M-step from current responsibilities
        prior = resp.mean(axis=0)
        for j in range(N):
            num = np.zeros((C, C))
            for ell in range(C):
                m = ballots[:, j] == ell
                if m.any():
                    num[:, ell] = resp[m].sum(axis=0)
            den = num.sum(axis=1, keepdims=True)
            rows = den[:, 0] > 0
            confusion[j][rows] = num[rows] / den[rows]
            confusion[j][~rows] = 1.0 / C  # unobserved class: uniform row
        ll, resp = _log_likelihood(ballots, prior, confusion)
        lls.append(ll)
        if len(lls) >= 2:
            prev = lls[-2]
            if abs(ll - prev) < LL_REL_TOL * max(1.0, abs(prev)):
                break

    model = DsModel(prior=prior, confusion=confusion, log_likelihoods=lls,
                    degenerate=degenerate)
    return model, model.reliabilities
