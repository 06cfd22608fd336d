"""Ground-truth verifiers: per-tool fidelity scores and pass thresholds.

Fidelity metrics: box IoU for SEG/ZOOM, mean per-frame IoU for TRK (a
single-target stand-in for association-based tracking scores; the 0.15
threshold is kept), ANLS for OCR, tIoU for TEMP and exact-match fraction
for PROP.
"""

from __future__ import annotations

import numpy as np

from .clip import Clip
from .tools import OCR, PROP, SEG, TEMP, TRK, ZOOM, Observation, box_iou, temporal_iou

THRESHOLDS = {
    SEG: 0.5,
    ZOOM: 0.5,
    TRK: 0.15,
    OCR: 0.85,
    TEMP: 0.5,
    PROP: 1.0,
}


def levenshtein(a, b) -> int:
    """Plain edit distance between two sequences."""
    a, b = list(a), list(b)
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def anls(a, b) -> float:
    """Normalized Levenshtein similarity in [0, 1]; 1 iff the strings match."""
    a, b = list(a), list(b)
    m = max(len(a), len(b))
    if m == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / m


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter / union) if union else 0.0


def verify_step(obs: Observation, truth: Clip) -> tuple[bool, float]:
    """(valid, fidelity) of one observation against clip ground truth.

    Failed observations verify as (False, 0.0).  Valid means fidelity meets
    the per-tool threshold; the comparison is inclusive.
    """
    if not obs.success:
        return (False, 0.0)

    if obs.op == SEG:
        obj = truth.objects[obs.payload["id"]]
        fid = box_iou(obs.payload["box"], obj.box_at(obs.footprint.f0))
    elif obs.op == ZOOM:
        fid = 1.0  # deterministic view change; nothing to mis-localize
    elif obs.op == TRK:
        obj = truth.objects[obs.payload["id"]]
        f0 = obs.payload["f0"]
        ious = [box_iou(b, obj.box_at(f0 + i))
                for i, b in enumerate(obs.payload["boxes"])]
        fid = float(np.mean(ious)) if ious else 0.0
    elif obs.op == OCR:
        obj = truth.objects[obs.payload["id"]]
        fid = anls(obs.payload["text"], obj.text or ())
    elif obs.op == TEMP:
        true_iv = next((t0, t1) for label, t0, t1 in truth.events
                       if label == obs.payload["label"])
        fid = temporal_iou(obs.payload["interval"], true_iv)
    elif obs.op == PROP:
        obj = truth.objects[obs.payload["id"]]
        attrs = obs.payload["attributes"]
        keys = sorted(obj.attributes)
        fid = float(np.mean([attrs.get(k) == obj.attributes[k] for k in keys]))
    else:
        return (False, 0.0)

    return (fid >= THRESHOLDS[obs.op], float(fid))
