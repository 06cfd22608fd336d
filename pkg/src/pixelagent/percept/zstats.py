"""Per-task-family standardization stats for adjacent-step cosines.

Stats are fit on a dev split, frozen, and reused at test time so the
coherence reward and the composite-chain metric see identical scaling
across runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SIGMA_FLOOR = 1e-6


class ZStatsError(ValueError):
    """Raised when a family has too few adjacent pairs to fit."""


@dataclass
class ZStats:
    """Frozen mean/std of adjacent cosines, keyed by task family.

    Population std with a 1e-6 floor; degenerate dev pools standardize to
    large-but-finite z-scores instead of dividing by zero.
    """

    stats: dict[str, tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def fit(cls, cosines_by_family: dict[str, np.ndarray]) -> "ZStats":
        out = {}
        for family, cos in cosines_by_family.items():
            cos = np.asarray(cos, dtype=float)
            if cos.size < 2:
                raise ZStatsError(
                    f"family {family!r} has {cos.size} adjacent pairs; need >= 2")
            out[family] = (float(cos.mean()),
                           float(max(cos.std(), SIGMA_FLOOR)))
        return cls(stats=out)

    def zscore(self, cos: np.ndarray, family: str) -> np.ndarray:
        mu, sd = self.lookup(family)
        return (np.asarray(cos, dtype=float) - mu) / sd

    def lookup(self, family: str) -> tuple[float, float]:
        if family in self.stats:
            return self.stats[family]
        if self.stats:  # unseen family: fall back to the pooled stats
            mus, sds = zip(*self.stats.values())
            return (float(np.mean(mus)), float(np.mean(sds)))
        return (0.0, 1.0)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(
            {"version": 1, "stats": {k: list(v) for k, v in self.stats.items()}},
            sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "ZStats":
        data = json.loads(Path(path).read_text())
        return cls(stats={k: (float(v[0]), float(v[1]))
                          for k, v in data["stats"].items()})


def coherence_reward(embeddings: np.ndarray, stats: ZStats, family: str) -> float:
    """Sum of standardized adjacent cosines; 0.0 when there are no pairs."""
    from .embed import adjacent_cosines

    cos = adjacent_cosines(np.asarray(embeddings))
    if cos.size == 0:
        return 0.0
    return float(stats.zscore(cos, family).sum())
