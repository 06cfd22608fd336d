"""Visual fidelity against pseudo-references.

Each decisive step is matched to the best same-tool reference whose
footprint overlaps it (greedy by descending overlap, one reference per
step, references not reused); the matched pair scores with the tool's
native metric and the per-step scores are averaged.  Steps with no
available reference score 0, which keeps the weighting conservative.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..world.tools import (OCR, PROP, SEG, TEMP, TRK, ZOOM, Footprint,
                           box_iou, footprint_iou, temporal_iou)
from ..world.verify import anls

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReferenceStep:
    op: str
    footprint: Footprint
    payload: dict | None


def reference_steps(trajs, decisive_only: bool = True) -> list[ReferenceStep]:
    """Flatten trajectories into a pseudo-reference pool."""
    refs = []
    for traj in trajs:
        for step in traj.steps:
            if not step.obs.success:
                continue
            if decisive_only and not step.decisive:
                continue
            payload = step.obs.payload if isinstance(step.obs.payload, dict) else None
            refs.append(ReferenceStep(op=step.call.op,
                                      footprint=step.obs.footprint,
                                      payload=payload))
    return refs


def interval_f1(a: tuple[int, int], b: tuple[int, int]) -> float:
    """F1 of closed-interval frame-membership sets."""
    sa = set(range(a[0], a[1] + 1))
    sb = set(range(b[0], b[1] + 1))
    if not sa and not sb:
        return 1.0
    inter = len(sa & sb)
    if inter == 0:
        return 0.0
    return 2.0 * inter / (len(sa) + len(sb))


def attribute_f1(a: dict, b: dict) -> float:
    """F1 over attribute key-value pairs."""
    pa = set(a.items())
    pb = set(b.items())
    if not pa and not pb:
        return 1.0
    inter = len(pa & pb)
    if inter == 0:
        return 0.0
    return 2.0 * inter / (len(pa) + len(pb))


def _tracklet_mean_iou(pl_a: dict, pl_b: dict) -> float:
    f0a, boxes_a = pl_a["f0"], pl_a["boxes"]
    f0b, boxes_b = pl_b["f0"], pl_b["boxes"]
    lo = max(f0a, f0b)
    hi = min(f0a + len(boxes_a), f0b + len(boxes_b))
    if hi <= lo:
        return 0.0
    ious = [box_iou(boxes_a[f - f0a], boxes_b[f - f0b]) for f in range(lo, hi)]
    return float(np.mean(ious))


def _pair_score(op: str, fp: Footprint, payload: dict | None,
                ref: ReferenceStep) -> float:
    if op in (SEG, ZOOM):
        return footprint_iou(fp, ref.footprint)
    if op == TRK:
        if payload is not None and ref.payload is not None and \
                "boxes" in payload and "boxes" in ref.payload:
            return _tracklet_mean_iou(payload, ref.payload)
        return footprint_iou(fp, ref.footprint)
    if op == OCR:
        if payload is not None and ref.payload is not None:
            return anls(payload.get("text", ()), ref.payload.get("text", ()))
        return 0.0
    if op == TEMP:
        if payload is not None and ref.payload is not None:
            return interval_f1(payload["interval"], ref.payload["interval"])
        return 0.0
    if op == PROP:
        if payload is not None and ref.payload is not None:
            return attribute_f1(payload.get("attributes", {}),
                                ref.payload.get("attributes", {}))
        return 0.0
    return 0.0


def visfid(traj, references: list[ReferenceStep]) -> float:
    """Mean per-decisive-step agreement with the best-matched references.

    A trajectory without decisive steps scores 0.0 (logged); so does a
    decisive step with no same-tool overlapping reference.
    """
    steps = [(i, s) for i, s in enumerate(traj.steps)
             if s.decisive and s.obs.success]
    if not steps:
        log.info("visfid: no decisive steps; scoring 0.0")
        return 0.0

    candidates = []
    for si, (_, step) in enumerate(steps):
        for ri, ref in enumerate(references):
            if ref.op != step.call.op:
                continue
            ov = footprint_iou(step.obs.footprint, ref.footprint)
            if ov > 0.0:
                candidates.append((ov, si, ri))
    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))

    matched_step: dict[int, int] = {}
    used_ref: set[int] = set()
    for ov, si, ri in candidates:
        if si in matched_step or ri in used_ref:
            continue
        matched_step[si] = ri
        used_ref.add(ri)

    scores = []
    for si, (_, step) in enumerate(steps):
        if si not in matched_step:
            log.debug("visfid: step %d (%s) has no reference; scoring 0",
                      si, step.call.op)
            scores.append(0.0)
            continue
        ref = references[matched_step[si]]
        payload = step.obs.payload if isinstance(step.obs.payload, dict) else None
        scores.append(_pair_score(step.call.op, step.obs.footprint, payload, ref))
    return float(np.mean(scores))
