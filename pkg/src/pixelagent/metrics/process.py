"""Process metrics: valid-step rate and gated composite-chain quality.

The composite metric standardizes adjacent cosines of frozen-encoder step
embeddings with dev-split stats, gates positions on validity of both
endpoints plus a cosine threshold, and scores contiguous all-gated windows

    q(C) = mean_t [c_t - tau]_+  -  alpha_len * (|C| - L0)_+ / |C|
                                 -  alpha_inv * sum_t (1 - u_t) / |C|

reporting the maximum over qualified windows (length >= L_min in gate
positions).  The search enumerates subwindows of maximal gated runs via
prefix sums; the brute-force oracle in the tests enumerates every window
of the raw sequence independently.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RcprConfig:
    tau: float = 0.30
    l_min: int = 3
    l0: int = 6
    alpha_len: float = 0.02
    alpha_inv: float = 0.30
    gamma: float = 0.20   # soft-DTW temperature, shared with behavioral sim

    def __post_init__(self):
        if not np.isfinite(self.tau):
            raise ValueError("tau must be finite")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")


@dataclass
class ChainCandidate:
    start: int                 # first gate position (cosine index)
    stop: int                  # exclusive
    gated_cosines: np.ndarray  # standardized cosines within the window
    validity: np.ndarray       # u_t bits for positions in the window

    @property
    def length(self) -> int:
        return self.stop - self.start


def rapr(validity: np.ndarray) -> float:
    """Mean of the per-step validity bits; 0.0 for empty trajectories
    (logged degenerate case)."""
    u = np.asarray(validity, dtype=float)
    if u.size == 0:
        log.info("rapr on empty trajectory; defining as 0.0")
        return 0.0
    return float(u.mean())


def chain_quality(cosines: np.ndarray, validity: np.ndarray,
                  cfg: RcprConfig) -> float:
    """q(C) for one window of standardized cosines and validity bits."""
    c = np.asarray(cosines, dtype=float)
    u = np.asarray(validity, dtype=float)
    n = c.size
    if n == 0:
        return 0.0
    hinge = np.maximum(c - cfg.tau, 0.0).mean()
    len_pen = cfg.alpha_len * max(0, n - cfg.l0) / n
    inv_pen = cfg.alpha_inv * (1.0 - u).sum() / n
    return float(hinge - len_pen - inv_pen)


def gate_positions(z_cosines: np.ndarray, validity: np.ndarray,
                   cfg: RcprConfig) -> np.ndarray:
    """g_t = 1 iff u_{t-1} = 1, u_t = 1 and the standardized cosine clears
    tau.  Position t pairs steps (t-1, t); there are T-1 positions."""
    z = np.asarray(z_cosines, dtype=float)
    u = np.asarray(validity, dtype=float)
    if z.size != u.size - 1:
        raise ValueError("need one cosine per adjacent step pair")
    return (u[:-1] >= 1.0) & (u[1:] >= 1.0) & (z >= cfg.tau)


def qualified_chains(z_cosines: np.ndarray, validity: np.ndarray,
                     cfg: RcprConfig) -> list[ChainCandidate]:
    """Maximal runs of gated positions with length >= L_min."""
    g = gate_positions(z_cosines, validity, cfg)
    chains = []
    start = None
    for t, flag in enumerate(list(g) + [False]):
        if flag and start is None:
            start = t
        elif not flag and start is not None:
            if t - start >= cfg.l_min:
                chains.append(ChainCandidate(
                    start=start, stop=t,
                    gated_cosines=np.asarray(z_cosines[start:t], dtype=float),
                    validity=np.asarray(validity[start + 1:t + 1], dtype=float)))
            start = None
    return chains


def racpr(z_cosines: np.ndarray, validity: np.ndarray,
          cfg: RcprConfig | None = None) -> float:
    """Best q(C) over qualified contiguous chains; 0.0 when none qualify.

    ``z_cosines`` must come from the frozen external encoder standardized
    with frozen dev stats, not from the trained coherence embeddings.
    Within each maximal gated run, all subwindows of length >= L_min are
    searched with prefix sums, so short high-quality cores are not dragged
    down by weak tails.
    """
    cfg = cfg or RcprConfig()
    z = np.asarray(z_cosines, dtype=float)
    if z.size == 0 or np.asarray(validity).size < 2:
        return 0.0
    best = 0.0
    for chain in qualified_chains(z, validity, cfg):
        hinge = np.maximum(chain.gated_cosines - cfg.tau, 0.0)
        ph = np.concatenate([[0.0], np.cumsum(hinge)])
        pinv = np.concatenate([[0.0], np.cumsum(1.0 - chain.validity)])
        n = chain.length
        for i in range(n - cfg.l_min + 1):
            for j in range(i + cfg.l_min, n + 1):
                m = j - i
                q = ((ph[j] - ph[i]) / m
                     - cfg.alpha_len * max(0, m - cfg.l0) / m
                     - cfg.alpha_inv * (pinv[j] - pinv[i]) / m)
                best = max(best, q)
    return float(best)


def racpr_from_trajectory(traj, clip, encoder, zstats, spec,
                          cfg: RcprConfig | None = None) -> float:
    """Convenience wrapper: embed with the frozen external encoder, verify
    steps against ground truth, standardize and score."""
    from ..percept.embed import adjacent_cosines, embed_trajectory
    from ..world.verify import verify_step

    if len(traj.steps) < 2:
        return 0.0
    embs = embed_trajectory(traj, clip, encoder, spec)
    cos = adjacent_cosines(embs)
    z = zstats.zscore(cos, traj.query.kind)
    u = np.array([1.0 if verify_step(s.obs, clip)[0] else 0.0
                  for s in traj.steps])
    return racpr(z, u, cfg)
