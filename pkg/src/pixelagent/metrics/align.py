"""Sequence alignment: soft-DTW over step costs and behavioral similarity.

Behavioral similarity mixes two terms at equal weight: a normalized edit
similarity on action-name sequences and a soft-DTW alignment score over
pairwise step costs 1 - fidelity(i, j).  The alignment score maps the DTW
cost through exp(-cost / (gamma_scale * path_normalizer)) and is clamped
into [0, 1]; fully disjoint trajectories land within ~1e-2 of zero rather
than exactly zero because the exponential never vanishes.
"""

from __future__ import annotations

import numpy as np

from ..world.tools import OCR, TEMP, footprint_iou
from ..world.verify import anls

GAMMA_DEFAULT = 0.20


def soft_dtw(cost: np.ndarray, gamma: float) -> float:
    """Soft-minimum dynamic time warping cost of a pairwise cost matrix.

    gamma -> 0 recovers hard DTW from below (the soft cost is a lower
    bound that tightens as gamma shrinks).
    """
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    if n == 0 or m == 0:
        return 0.0
    R = np.full((n + 1, m + 1), np.inf)
    R[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            prev = np.array([R[i - 1, j - 1], R[i - 1, j], R[i, j - 1]])
            lo = prev.min()
            soft = (lo - gamma * np.log(np.exp(-(prev - lo) / gamma).sum())
                    if np.isfinite(lo) else np.inf)
            R[i, j] = cost[i - 1, j - 1] + soft
    return float(R[n, m])


def hard_dtw_exhaustive(cost: np.ndarray) -> float:
    """Minimum path cost by explicit enumeration of all monotone paths.

    Exponential; oracle for small instances only.
    """
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape

    def rec(i, j):
        base = cost[i, j]
        if i == n - 1 and j == m - 1:
            return base
        cands = []
        if i + 1 < n and j + 1 < m:
            cands.append(rec(i + 1, j + 1))
        if i + 1 < n:
            cands.append(rec(i + 1, j))
        if j + 1 < m:
            cands.append(rec(i, j + 1))
        return base + min(cands)

    return float(rec(0, 0))


def step_fidelity(op_a: str, fp_a, payload_a, op_b: str, fp_b, payload_b) -> float:
    """Cross-trajectory step agreement: 0 for mismatched tools, else the
    tool's native comparison (ANLS for OCR, tIoU for TEMP, footprint IoU
    otherwise)."""
    if op_a != op_b:
        return 0.0
    if op_a == OCR and payload_a is not None and payload_b is not None:
        return anls(payload_a.get("text", ()), payload_b.get("text", ()))
    if op_a == TEMP and payload_a is not None and payload_b is not None:
        from ..world.tools import temporal_iou
        return temporal_iou(payload_a["interval"], payload_b["interval"])
    return footprint_iou(fp_a, fp_b)


def _levenshtein_names(a: list[str], b: list[str]) -> int:
    from ..world.verify import levenshtein
    return levenshtein(a, b)


def edit_similarity(names_a: list[str], names_b: list[str]) -> float:
    m = max(len(names_a), len(names_b))
    if m == 0:
        return 1.0
    return 1.0 - _levenshtein_names(names_a, names_b) / m


def alignment_score(cost: np.ndarray, gamma: float = GAMMA_DEFAULT) -> float:
    """Bounded monotone transform of the soft-DTW cost into [0, 1]."""
    n, m = cost.shape
    if n == 0 or m == 0:
        return 0.0
    normalizer = (n + m) / 2.0
    raw = soft_dtw(cost, gamma)
    return float(np.clip(np.exp(-raw / (gamma * normalizer)), 0.0, 1.0))


def sim_behav(traj_a, traj_b, weights: tuple[float, float] = (0.5, 0.5),
              gamma: float = GAMMA_DEFAULT) -> float:
    """Behavioral similarity of two trajectories in [0, 1].

    Term 1: normalized edit similarity of action-name sequences.  Term 2:
    soft-DTW alignment over step costs 1 - fidelity.  Both trajectories
    must be nonempty.
    """
    w_edit, w_align = weights
    steps_a = [(s.call.op, s.obs.footprint,
                s.obs.payload if isinstance(s.obs.payload, dict) else None)
               for s in traj_a.steps]
    steps_b = [(s.call.op, s.obs.footprint,
                s.obs.payload if isinstance(s.obs.payload, dict) else None)
               for s in traj_b.steps]
    if not steps_a or not steps_b:
        raise ValueError("sim_behav needs nonempty trajectories")

    term1 = edit_similarity([s[0] for s in steps_a], [s[0] for s in steps_b])
    cost = np.empty((len(steps_a), len(steps_b)))
    for i, (op_a, fp_a, pl_a) in enumerate(steps_a):
        for j, (op_b, fp_b, pl_b) in enumerate(steps_b):
            cost[i, j] = 1.0 - step_fidelity(op_a, fp_a, pl_a, op_b, fp_b, pl_b)
    term2 = alignment_score(cost, gamma)
    return float(np.clip(w_edit * term1 + w_align * term2, 0.0, 1.0))
