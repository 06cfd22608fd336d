"""Executable pixel tools over synthetic clips.

The seven-symbol action alphabet is {SEG, ZOOM, TRK, OCR, TEMP, PROP,
ANSWER}.  ANSWER terminates trajectories in the policy layer and is a
protocol error here.  Every tool call either succeeds with a typed payload
and a footprint, or fails with an empty payload (success=False); failures
are what the reward layer counts as invalid actions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .clip import Clip, ObjectSpec
from .config import NoiseConfig

SEG, ZOOM, TRK, OCR, TEMP, PROP, ANSWER = "SEG", "ZOOM", "TRK", "OCR", "TEMP", "PROP", "ANSWER"
TOOL_OPS = (SEG, ZOOM, TRK, OCR, TEMP, PROP)
REGION_OPS = (SEG, ZOOM, TRK, OCR, PROP)
ALL_OPS = TOOL_OPS + (ANSWER,)


class ProtocolError(RuntimeError):
    """Raised when a call violates the tool protocol (e.g. executing ANSWER)."""


@dataclass(frozen=True)
class ViewState:
    """Current spatial rect and frame window the agent is looking at."""

    x: int
    y: int
    w: int
    h: int
    f0: int
    f1: int  # exclusive

    @classmethod
    def full(cls, clip: Clip) -> "ViewState":
        F, H, W = clip.frames.shape
        return cls(0, 0, W, H, 0, F)

    def rect(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class ToolCall:
    op: str
    arg: int
    step_index: int = 0


@dataclass(frozen=True)
class Footprint:
    """Region plus frame span a payload covers."""

    x: int
    y: int
    w: int
    h: int
    f0: int
    f1: int  # exclusive

    @property
    def area(self) -> int:
        return max(0, self.w) * max(0, self.h)

    @property
    def volume(self) -> int:
        return self.area * max(0, self.f1 - self.f0)


EMPTY_FOOTPRINT = Footprint(0, 0, 0, 0, 0, 0)


@dataclass
class Observation:
    op: str
    payload: object
    success: bool
    footprint: Footprint
    confidence: float
    object_id: int | None = None

    @classmethod
    def failure(cls, op: str) -> "Observation":
        return cls(op=op, payload=None, success=False,
                   footprint=EMPTY_FOOTPRINT, confidence=0.0)


def intersect_rect(a: tuple[int, int, int, int],
                   b: tuple[int, int, int, int]) -> tuple[int, int, int, int]:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    x0, y0 = max(ax, bx), max(ay, by)
    x1, y1 = min(ax + aw, bx + bw), min(ay + ah, by + bh)
    return (x0, y0, max(0, x1 - x0), max(0, y1 - y0))


def _overlap_area(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> int:
    _, _, w, h = intersect_rect(a, b)
    return w * h


def _best_object(clip: Clip, rect: tuple[int, int, int, int], frame: int,
                 require_text: bool = False) -> ObjectSpec | None:
    best, best_ov = None, 0
    for obj in clip.objects:
        if require_text and obj.text is None:
            continue
        ov = _overlap_area(obj.box_at(frame), rect)
        if ov > best_ov:
            best, best_ov = obj, ov
    return best


def _jitter_box(box: tuple[int, int, int, int], p: float,
                rng: np.random.Generator, W: int, H: int) -> tuple[int, int, int, int]:
    x, y, w, h = box
    if p > 0 and rng.random() < p:
        dx, dy = int(rng.integers(-1, 2)), int(rng.integers(-1, 2))
        x = int(np.clip(x + dx, 0, W - w))
        y = int(np.clip(y + dy, 0, H - h))
    return (x, y, w, h)


def execute_tool(clip: Clip, view: ViewState, call: ToolCall,
                 noise: NoiseConfig, rng: np.random.Generator) -> Observation:
    """Execute one tool call within the current view.

    Returns a failed observation (success=False, empty payload) whenever no
    target exists in view; raises ProtocolError for ANSWER.
    """
    if call.op == ANSWER:
        raise ProtocolError("ANSWER terminates trajectories; it is not executable")
    if call.op not in TOOL_OPS:
        raise ProtocolError(f"unknown op {call.op!r}")

    cfg = clip.config
    F, H, W = clip.frames.shape
    frame = view.f0

    if call.op == ZOOM:
        # zoom re-targets to an absolute bin; the new view is always a
        # narrowing of the full frame
        bx, by, bw, bh = cfg.bin_rect(call.arg)
        return Observation(
            op=ZOOM, payload={"view": (bx, by, bw, bh)},
            success=True, footprint=Footprint(bx, by, bw, bh, view.f0, view.f1),
            confidence=1.0)

    if call.op in REGION_OPS:
        target = intersect_rect(cfg.bin_rect(call.arg), view.rect())
        if target[2] == 0 or target[3] == 0:
            return Observation.failure(call.op)

    if call.op == SEG:
        obj = _best_object(clip, target, frame)
        if obj is None:
            return Observation.failure(SEG)
        box = _jitter_box(obj.box_at(frame), noise.seg_jitter, rng, W, H)
        return Observation(
            op=SEG, payload={"box": box, "mask": obj.mask.copy(), "id": obj.id},
            success=True, footprint=Footprint(*box, frame, frame + 1),
            confidence=1.0 - noise.seg_jitter, object_id=obj.id)

    if call.op == OCR:
        obj = _best_object(clip, target, frame, require_text=True)
        if obj is None:
            return Observation.failure(OCR)
        glyphs = list(obj.text)
        for i in range(len(glyphs)):
            if noise.p_ocr > 0 and rng.random() < noise.p_ocr:
                alt = int(rng.integers(0, cfg.alphabet - 1))
                glyphs[i] = alt if alt < glyphs[i] else alt + 1
        x, y, w, h = obj.box_at(frame)
        return Observation(
            op=OCR, payload={"text": tuple(glyphs), "id": obj.id},
            success=True, footprint=Footprint(x, y, w, h, frame, frame + 1),
            confidence=(1.0 - noise.p_ocr) ** len(glyphs), object_id=obj.id)

    if call.op == TRK:
        if view.f1 - view.f0 < 2:
            return Observation.failure(TRK)
        obj = _best_object(clip, target, frame)
        if obj is None:
            return Observation.failure(TRK)
        boxes = [_jitter_box(obj.box_at(f), noise.trk_jitter, rng, W, H)
                 for f in range(view.f0, view.f1)]
        xs = [b[0] for b in boxes]; ys = [b[1] for b in boxes]
        x1 = max(b[0] + b[2] for b in boxes); y1 = max(b[1] + b[3] for b in boxes)
        return Observation(
            op=TRK, payload={"boxes": boxes, "id": obj.id, "f0": view.f0},
            success=True,
            footprint=Footprint(min(xs), min(ys), x1 - min(xs), y1 - min(ys),
                                view.f0, view.f1),
            confidence=1.0 - noise.trk_jitter, object_id=obj.id)

    if call.op == TEMP:
        win0 = int(np.clip(call.arg, 0, F - 1))
        win1 = min(F - 1, win0 + max(1, F // 2) - 1)
        win0 = max(win0, view.f0)
        win1 = min(win1, view.f1 - 1)
        if win1 < win0 or not clip.events:
            return Observation.failure(TEMP)
        best, best_t = None, 0.0
        for label, t0, t1 in clip.events:
            t = temporal_iou((win0, win1), (t0, t1))
            if t > best_t:
                best, best_t = (label, t0, t1), t
        if best is None:
            return Observation.failure(TEMP)
        label, t0, t1 = best
        if noise.temp_jitter > 0 and rng.random() < noise.temp_jitter:
            shift = int(rng.choice((-1, 1)))
            t0 = int(np.clip(t0 + shift, 0, F - 1))
            t1 = int(np.clip(t1 + shift, t0, F - 1))
        return Observation(
            op=TEMP, payload={"label": label, "interval": (t0, t1)},
            success=True, footprint=Footprint(0, 0, W, H, t0, t1 + 1),
            confidence=1.0 - noise.temp_jitter)

    if call.op == PROP:
        obj = _best_object(clip, target, frame)
        if obj is None:
            return Observation.failure(PROP)
        attrs = dict(obj.attributes)
        if noise.prop_flip > 0:
            for key in attrs:
                if rng.random() < noise.prop_flip:
                    attrs[key] = int(rng.integers(0, cfg.alphabet))
        x, y, w, h = obj.box_at(frame)
        return Observation(
            op=PROP, payload={"attributes": attrs, "id": obj.id},
            success=True, footprint=Footprint(x, y, w, h, frame, frame + 1),
            confidence=(1.0 - noise.prop_flip), object_id=obj.id)

    raise ProtocolError(f"unhandled op {call.op!r}")  # pragma: no cover


def apply_zoom(view: ViewState, obs: Observation) -> ViewState:
    """New view after a successful ZOOM; other ops leave the view unchanged."""
    if obs.op != ZOOM or not obs.success:
        return view
    bx, by, bw, bh = obs.payload["view"]
    return ViewState(bx, by, bw, bh, view.f0, view.f1)


def temporal_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    """tIoU of two closed integer frame intervals."""
    a0, a1 = a
    b0, b1 = b
    inter = max(0, min(a1, b1) - max(a0, b0) + 1)
    union = (a1 - a0 + 1) + (b1 - b0 + 1) - inter
    return inter / union if union > 0 else 0.0


def box_iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    inter = _overlap_area(a, b)
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def footprint_iou(a: Footprint, b: Footprint) -> float:
    """Volume IoU of two footprints (area x frame span)."""
    _, _, iw, ih = intersect_rect((a.x, a.y, a.w, a.h), (b.x, b.y, b.w, b.h))
    tf = max(0, min(a.f1, b.f1) - max(a.f0, b.f0))
    inter = iw * ih * tf
    union = a.volume + b.volume - inter
    return inter / union if union > 0 else 0.0
