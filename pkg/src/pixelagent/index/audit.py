"""Leakage audit: exact overlaps, near-duplicate candidates, exact binomial
residual bounds."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.stats import beta

from ..world.clip import Clip
from .dedup import DedupThresholds, dedup_pair


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Exact binomial CI [BetaInv(a; k, n-k+1), BetaInv(1-a; k+1, n-k)]."""
    if n <= 0:
        raise ValueError("need n > 0 inspected pairs")
    if not 0 <= k <= n:
        raise ValueError("k must lie in [0, n]")
    a = (1.0 - level) / 2.0
    lo = 0.0 if k == 0 else float(beta.ppf(a, k, n - k + 1))
    hi = 1.0 if k == n else float(beta.ppf(1.0 - a, k + 1, n - k))
    return lo, hi


def media_digest(media) -> str:
    frames = media.frames if isinstance(media, Clip) else np.asarray(media)
    return hashlib.sha256(np.ascontiguousarray(frames).tobytes()
                          + str(frames.shape).encode()).hexdigest()


@dataclass
class AuditReport:
    exact_overlaps: int
    candidates: int
    inspected: int
    confirmed: int
    residual_ci: tuple[float, float]
    pairs_checked: int

    def summary(self) -> str:
        lo, hi = self.residual_ci
        return (f"exact={self.exact_overlaps}/{self.pairs_checked} "
                f"candidates={self.candidates}/{self.pairs_checked} "
                f"residual 95% CI [{lo:.5f}, {hi:.5f}] "
                f"({self.confirmed}/{self.inspected} inspected)")


def audit_leakage(index_media: list[tuple[int, object]],
                  eval_media: list[tuple[int, object]],
                  sample_n: int, rng: np.random.Generator,
                  thresholds: DedupThresholds | None = None,
                  embed_fn=None) -> AuditReport:
    """Compare evaluation media against ingested index media.

    Exact overlaps use content digests; candidates use the two-stage
    near-duplicate rule.  The residual rate is estimated from ``sample_n``
    uniformly inspected cross pairs with a Clopper-Pearson 95% interval.
    """
    if sample_n <= 0:
        raise ValueError("sample_n must be > 0")
    th = thresholds or DedupThresholds()

    index_digests = {media_digest(m) for _, m in index_media}
    exact = sum(1 for _, m in eval_media if media_digest(m) in index_digests)

    candidates = 0
    all_pairs = [(i, j) for i in range(len(eval_media))
                 for j in range(len(index_media))]
    for i, j in all_pairs:
        v = dedup_pair(eval_media[i][1], index_media[j][1], th, embed_fn,
                       pair_ids=(eval_media[i][0], index_media[j][0]))
        if v.duplicate:
            candidates += 1

    n = min(sample_n, len(all_pairs))
    pick = rng.choice(len(all_pairs), size=n, replace=False)
    confirmed = 0
    for p in pick:
        i, j = all_pairs[p]
        v = dedup_pair(eval_media[i][1], index_media[j][1], th, embed_fn,
                       pair_ids=(eval_media[i][0], index_media[j][0]))
        if v.duplicate:
            confirmed += 1
    ci = clopper_pearson(confirmed, n)
    return AuditReport(exact_overlaps=exact, candidates=candidates,
                       inspected=n, confirmed=confirmed, residual_ci=ci,
                       pairs_checked=len(all_pairs))
