"""State featurization and the discrete action alphabet.

The policy acts over a flat alphabet of (op, argument-bin) pairs plus a
terminal ANSWER symbol; region arguments index the world's region-bin grid
and TEMP arguments index frame bins, so the alphabet is finite and
trajectories are exactly enumerable.

State features are blocks: bias, per-class object census of the view, view
geometry, last-action one-hot, evidence-buffer summary, normalized step
index, and query descriptors.  The evidence summary doubles as the answer
head's input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..world.clip import Clip
from ..world.config import WorldConfig
from ..world.teacher import QUERY_KINDS, Query
from ..world.tools import (ANSWER, OCR, PROP, REGION_OPS, SEG, TEMP, TOOL_OPS,
                           TRK, ZOOM, Observation, ToolCall, ViewState,
                           intersect_rect)

ATTR_KEYS = ("hue", "tone")


@dataclass(frozen=True)
class ActionAlphabet:
    """Flat discrete action space derived from a world config."""

    actions: tuple[tuple[str, int], ...]
    index: dict[tuple[str, int], int]

    @classmethod
    def from_config(cls, cfg: WorldConfig) -> "ActionAlphabet":
        actions: list[tuple[str, int]] = []
        for op in REGION_OPS:
            actions.extend((op, b) for b in range(cfg.n_region_bins))
        actions.extend((TEMP, f) for f in range(cfg.frames))
        actions.append((ANSWER, 0))
        return cls(actions=tuple(actions),
                   index={a: i for i, a in enumerate(actions)})

    @property
    def size(self) -> int:
        return len(self.actions)

    @property
    def answer_index(self) -> int:
        return len(self.actions) - 1

    def encode(self, call: ToolCall) -> int:
        return self.index[(call.op, call.arg if call.op != ANSWER else 0)]

    def decode(self, idx: int) -> tuple[str, int]:
        return self.actions[idx]


class EvidenceState:
    """Mutable evidence buffer accumulated during a rollout."""

    __slots__ = ("success", "fail", "seen_by_class", "ocr_glyph",
                 "prop_attrs", "temp_interval", "trk_final_box")

    def __init__(self):
        self.success = {op: 0 for op in TOOL_OPS}
        self.fail = {op: 0 for op in TOOL_OPS}
        self.seen_by_class: dict[int, set[int]] = {}
        self.ocr_glyph: int | None = None
        self.prop_attrs: dict[str, int] | None = None
        self.temp_interval: tuple[int, int] | None = None
        self.trk_final_box: tuple[int, int, int, int] | None = None

    def update(self, obs: Observation, clip: Clip) -> None:
        if obs.op not in TOOL_OPS:
            return
        if not obs.success:
            self.fail[obs.op] += 1
            return
        self.success[obs.op] += 1
        if obs.op in (SEG, TRK, PROP) and obs.object_id is not None:
            klass = clip.objects[obs.object_id].klass
            self.seen_by_class.setdefault(klass, set()).add(obs.object_id)
        if obs.op == OCR:
            text = obs.payload["text"]
            self.ocr_glyph = int(text[0]) if text else None
        elif obs.op == PROP:
            self.prop_attrs = dict(obs.payload["attributes"])
        elif obs.op == TEMP:
            self.temp_interval = tuple(obs.payload["interval"])
        elif obs.op == TRK:
            self.trk_final_box = tuple(obs.payload["boxes"][-1])


@dataclass(frozen=True)
class FeatureSpec:
    """Precomputed feature layout for one world config."""

    cfg: WorldConfig
    alphabet: ActionAlphabet

    @classmethod
    def from_config(cls, cfg: WorldConfig) -> "FeatureSpec":
        return cls(cfg=cfg, alphabet=ActionAlphabet.from_config(cfg))

    # block dims ------------------------------------------------------------
    @property
    def census_dim(self) -> int:
        return self.cfg.n_classes

    @property
    def spatial_dim(self) -> int:
        # per-bin occupancy: any-class and query-target-class counts
        return 2 * self.cfg.n_region_bins

    @property
    def view_dim(self) -> int:
        return 6

    @property
    def evidence_dim(self) -> int:
        cfg = self.cfg
        return (6 + 6
                + cfg.n_classes * (cfg.n_objects + 1)
                + cfg.alphabet          # OCR first glyph
                + cfg.alphabet          # PROP value for the queried key
                + cfg.frames            # TEMP interval start
                + cfg.n_region_bins)    # TRK final-center bin

    @property
    def query_dim(self) -> int:
        cfg = self.cfg
        return len(QUERY_KINDS) + cfg.n_region_bins + cfg.n_classes + len(ATTR_KEYS) + cfg.frames

    @property
    def state_dim(self) -> int:
        return (1 + self.census_dim + self.spatial_dim + self.view_dim
                + self.alphabet.size + self.evidence_dim + 1 + self.query_dim)

    @property
    def answer_dim(self) -> int:
        return 1 + self.evidence_dim + self.query_dim

    # block slices within the state vector ----------------------------------
    @property
    def last_action_slice(self) -> slice:
        start = 1 + self.census_dim + self.spatial_dim + self.view_dim
        return slice(start, start + self.alphabet.size)

    @property
    def evidence_slice(self) -> slice:
        start = (1 + self.census_dim + self.spatial_dim + self.view_dim
                 + self.alphabet.size)
        return slice(start, start + self.evidence_dim)

    @property
    def answer_evidence_slice(self) -> slice:
        return slice(1, 1 + self.evidence_dim)


def census(clip: Clip, view: ViewState) -> np.ndarray:
    """Per-class count of objects overlapping the view at its first frame."""
    counts = np.zeros(clip.config.n_classes)
    for obj in clip.objects:
        _, _, w, h = intersect_rect(obj.box_at(view.f0), view.rect())
        if w > 0 and h > 0:
            counts[obj.klass] += 1
    return counts


def spatial_census(clip: Clip, view: ViewState, target_class: int) -> np.ndarray:
    """Per-region-bin occupancy (any class, then the query's target class)
    restricted to the view at its first frame."""
    cfg = clip.config
    nb = cfg.n_region_bins
    out = np.zeros(2 * nb)
    for obj in clip.objects:
        box = obj.box_at(view.f0)
        for b in range(nb):
            target = intersect_rect(cfg.bin_rect(b), view.rect())
            if target[2] == 0 or target[3] == 0:
                continue
            _, _, w, h = intersect_rect(box, target)
            if w > 0 and h > 0:
                out[b] += 1.0
                if obj.klass == target_class:
                    out[nb + b] += 1.0
    return out


def _evidence_vector(spec: FeatureSpec, ev: EvidenceState, query: Query) -> np.ndarray:
    cfg = spec.cfg
    out = np.zeros(spec.evidence_dim)
    i = 0
    for op in TOOL_OPS:
        out[i] = ev.success[op] / 4.0
        i += 1
    for op in TOOL_OPS:
        out[i] = ev.fail[op] / 4.0
        i += 1
    width = cfg.n_objects + 1
    for klass in range(cfg.n_classes):
        n = min(len(ev.seen_by_class.get(klass, ())), cfg.n_objects)
        out[i + klass * width + n] = 1.0
    i += cfg.n_classes * width
    if ev.ocr_glyph is not None:
        out[i + ev.ocr_glyph] = 1.0
    i += cfg.alphabet
    if ev.prop_attrs is not None and query.attr_key in ev.prop_attrs:
        val = ev.prop_attrs[query.attr_key]
        if 0 <= val < cfg.alphabet:
            out[i + val] = 1.0
    i += cfg.alphabet
    if ev.temp_interval is not None:
        out[i + min(ev.temp_interval[0], cfg.frames - 1)] = 1.0
    i += cfg.frames
    if ev.trk_final_box is not None:
        x, y, w, h = ev.trk_final_box
        out[i + cfg.bin_of_point(x + w / 2, y + h / 2)] = 1.0
    return out


def _query_vector(spec: FeatureSpec, query: Query) -> np.ndarray:
    cfg = spec.cfg
    out = np.zeros(spec.query_dim)
    i = 0
    out[i + QUERY_KINDS.index(query.kind)] = 1.0
    i += len(QUERY_KINDS)
    out[i + query.region] = 1.0
    i += cfg.n_region_bins
    out[i + query.target_class] = 1.0
    i += cfg.n_classes
    out[i + ATTR_KEYS.index(query.attr_key)] = 1.0
    i += len(ATTR_KEYS)
    out[i + min(query.frame, cfg.frames - 1)] = 1.0
    return out


def featurize_state(clip: Clip, view: ViewState,
                    history: list[tuple[ToolCall, Observation]],
                    query: Query, spec: FeatureSpec,
                    evidence: EvidenceState | None = None,
                    step_index: int = 0, max_steps: int = 8) -> np.ndarray:
    """Fixed-dimension state vector for the tool policy.

    ``evidence`` may be passed to avoid replaying the history; when omitted
    it is rebuilt from scratch.
    """
    cfg = clip.config
    if evidence is None:
        evidence = EvidenceState()
        for _, obs in history:
            evidence.update(obs, clip)

    out = np.zeros(spec.state_dim)
    out[0] = 1.0
    i = 1
    out[i:i + spec.census_dim] = census(clip, view)
    i += spec.census_dim
    out[i:i + spec.spatial_dim] = spatial_census(clip, view, query.target_class)
    i += spec.spatial_dim
    out[i:i + 6] = (view.x / cfg.width, view.y / cfg.height,
                    view.w / cfg.width, view.h / cfg.height,
                    view.f0 / cfg.frames, (view.f1 - view.f0) / cfg.frames)
    i += 6
    if history:
        out[i + spec.alphabet.encode(history[-1][0])] = 1.0
    i += spec.alphabet.size
    out[i:i + spec.evidence_dim] = _evidence_vector(spec, evidence, query)
    i += spec.evidence_dim
    out[i] = step_index / max(1, max_steps)
    i += 1
    out[i:i + spec.query_dim] = _query_vector(spec, query)
    return out


def answer_features(spec: FeatureSpec, evidence: EvidenceState,
                    query: Query) -> np.ndarray:
    """Evidence-plus-query vector consumed by the answer head."""
    out = np.zeros(spec.answer_dim)
    out[0] = 1.0
    out[1:1 + spec.evidence_dim] = _evidence_vector(spec, evidence, query)
    out[1 + spec.evidence_dim:] = _query_vector(spec, query)
    return out
