"""Risk-coverage curves and percentile-bootstrap confidence intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VoteRecord:
    """Per-query voting outcome sufficient to sweep abstention margins."""

    margin: float
    set_size: int
    correct: bool


@dataclass(frozen=True)
class RiskPoint:
    delta: float
    coverage: float
    err_at_sel: float | None   # None flags the zero-answered gap
    n_answered: int


def err_at_sel(decisions: list[tuple[bool, bool]]) -> tuple[float, float | None]:
    """(coverage, error among answered) for fixed abstention decisions.

    ``decisions`` holds (abstained, correct) pairs; the error is None when
    everything abstained.
    """
    if not decisions:
        raise ValueError("need at least one decision")
    answered = [correct for abstained, correct in decisions if not abstained]
    coverage = len(answered) / len(decisions)
    if not answered:
        return coverage, None
    return coverage, 1.0 - float(np.mean(answered))


def risk_coverage(records: list[VoteRecord],
                  deltas: np.ndarray) -> list[RiskPoint]:
    """Sweep the margin threshold; a query is answered when its margin
    clears delta and its conformal set is a singleton.  Coverage is
    monotone non-increasing in delta and answered sets are nested."""
    if not records:
        raise ValueError("need at least one vote record")
    points = []
    for d in np.asarray(deltas, dtype=float):
        decisions = [(r.margin < d or r.set_size != 1, r.correct)
                     for r in records]
        cov, err = err_at_sel(decisions)
        points.append(RiskPoint(delta=float(d), coverage=cov, err_at_sel=err,
                                n_answered=sum(1 for a, _ in decisions if not a)))
    return points


def bootstrap_ci(samples: np.ndarray, statistic, B: int = 1000,
                 level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile-bootstrap interval of a statistic; deterministic per seed.

    Requires B >= 100 resamples and a nonempty sample.
    """
    samples = np.asarray(samples)
    if samples.size == 0:
        raise ValueError("bootstrap needs a nonempty sample")
    if B < 100:
        raise ValueError("need B >= 100 resamples")
    rng = np.random.default_rng(seed)
    n = samples.shape[0]
    stats = np.array([
        statistic(samples[rng.integers(0, n, size=n)]) for _ in range(B)
    ])
    alpha = (1.0 - level) / 2.0
    return (float(np.quantile(stats, alpha)),
            float(np.quantile(stats, 1.0 - alpha)))
