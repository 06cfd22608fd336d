"""Scripted teacher: ground-truth-guided tool plans with injected suboptimality.

The teacher replaces an external planner.  It emits the shortest plan that
answers a query from ground truth, then injects detours (novel zooms) and
redundant repeats at configurable rates.  Repeats succeed without changing
state, so the decisive-step rate of the pool is tunable via
``repeat_frac``; the defaults land near 0.86 over succeeded calls.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .clip import Clip, ObjectSpec
from .config import ConfigurationError, NoiseConfig, WorldConfig
from .tools import (ANSWER, OCR, PROP, SEG, TEMP, TRK, ZOOM, Observation,
                    ToolCall, ViewState, apply_zoom, execute_tool)
from .verify import verify_step

log = logging.getLogger(__name__)

QUERY_KINDS = ("count", "read", "property", "temporal", "track")


class GenerationError(RuntimeError):
    """Raised when a query cannot be answered from clip ground truth."""


@dataclass(frozen=True)
class Query:
    """An answerable question about a clip.

    ``answer`` is the ground-truth class id; policies never see it through
    features, only through rewards and verifiers.
    """

    kind: str
    clip_seed: int
    region: int = 0        # target region bin (read/property/track)
    target_class: int = 0  # object class (count)
    attr_key: str = "hue"  # attribute name (property)
    frame: int = 0         # window anchor (temporal)
    answer: int = 0


@dataclass
class TeacherTrace:
    query: Query
    steps: list[tuple[ToolCall, Observation]]
    answer: int
    decisive: list[bool]
    valid: list[bool]            # per-step operator checks
    components: tuple[float, float, float] = (0.0, 0.0, 0.0)
    shortest_len: int = 0

    @property
    def ops_pass(self) -> bool:
        return all(self.valid)

    @property
    def n_succeeded(self) -> int:
        return sum(1 for _, obs in self.steps if obs.success)

    @property
    def n_decisive(self) -> int:
        return sum(self.decisive)


def _object_bin(cfg: WorldConfig, obj: ObjectSpec, frame: int = 0) -> int:
    x, y, w, h = obj.box_at(frame)
    return cfg.bin_of_point(x + w / 2, y + h / 2)


def make_queries(clip: Clip, rng: np.random.Generator, n: int,
                 kinds: tuple[str, ...] = QUERY_KINDS) -> list[Query]:
    """Sample ``n`` answerable queries, cycling kinds so families stay
    balanced."""
    queries: list[Query] = []
    offset = int(rng.integers(0, len(kinds)))
    guard = 0
    while len(queries) < n and guard < 50 * n:
        kind = kinds[(offset + guard) % len(kinds)]
        guard += 1
        try:
            queries.append(_make_query(clip, kind, rng))
        except GenerationError:
            continue
    if len(queries) < n:
        raise GenerationError(f"could not build {n} answerable queries")
    return queries


def _make_query(clip: Clip, kind: str, rng: np.random.Generator) -> Query:
    cfg = clip.config
    if kind == "count":
        counts = np.bincount([o.klass for o in clip.objects], minlength=cfg.n_classes)
        present = np.flatnonzero(counts)
        if present.size == 0:
            raise GenerationError("count: no objects")
        k = int(rng.choice(present))
        return Query(kind="count", clip_seed=clip.seed, target_class=k,
                     answer=int(counts[k]))
    if kind == "read":
        cands = [o for o in clip.objects if o.text is not None]
        if not cands:
            raise GenerationError("read: no textful object")
        obj = cands[int(rng.integers(0, len(cands)))]
        return Query(kind="read", clip_seed=clip.seed,
                     region=_object_bin(cfg, obj), answer=int(obj.text[0]))
    if kind == "property":
        if not clip.objects:
            raise GenerationError("property: no objects")
        obj = clip.objects[int(rng.integers(0, len(clip.objects)))]
        key = ("hue", "tone")[int(rng.integers(0, 2))]
        return Query(kind="property", clip_seed=clip.seed,
                     region=_object_bin(cfg, obj), attr_key=key,
                     answer=int(obj.attributes[key]))
    if kind == "temporal":
        if not clip.events:
            raise GenerationError("temporal: no events")
        # anchor first; the answer is the start of whichever event the
        # anchored window retrieves, so the tool is required but exact
        from .tools import temporal_iou
        F = clip.n_frames
        anchor = int(rng.integers(0, F))
        w0, w1 = anchor, min(F - 1, anchor + max(1, F // 2) - 1)
        best, best_t = None, 0.0
        for label, t0, t1 in clip.events:
            t = temporal_iou((w0, w1), (t0, t1))
            if t > best_t:
                best, best_t = t0, t
        if best is None:
            raise GenerationError("temporal: anchored window misses all events")
        return Query(kind="temporal", clip_seed=clip.seed, frame=anchor,
                     answer=int(best))
    if kind == "track":
        if clip.n_frames < 2 or not clip.objects:
            raise GenerationError("track: need frames and objects")
        obj = clip.objects[int(rng.integers(0, len(clip.objects)))]
        x, y, w, h = obj.box_at(clip.n_frames - 1)
        return Query(kind="track", clip_seed=clip.seed,
                     region=_object_bin(cfg, obj, 0),
                     answer=cfg.bin_of_point(x + w / 2, y + h / 2))
    raise GenerationError(f"unknown query kind {kind!r}")


def shortest_plan(clip: Clip, query: Query) -> list[ToolCall]:
    """Minimal tool plan reaching the correct answer from ground truth."""
    cfg = clip.config
    if query.kind == "count":
        bins = sorted(_object_bin(cfg, o) for o in clip.objects
                      if o.klass == query.target_class)
        if not bins:
            raise GenerationError("count target class absent")
        return [ToolCall(SEG, b) for b in bins]
    if query.kind == "read":
        return [ToolCall(ZOOM, query.region), ToolCall(OCR, query.region)]
    if query.kind == "property":
        return [ToolCall(SEG, query.region), ToolCall(PROP, query.region)]
    if query.kind == "temporal":
        anchor = min(query.frame, clip.n_frames - 1)
        return [ToolCall(TEMP, anchor)]
    if query.kind == "track":
        return [ToolCall(TRK, query.region)]
    raise GenerationError(f"unknown query kind {query.kind!r}")


@dataclass(frozen=True)
class TeacherConfig:
    """Imperfection knobs for the scripted teacher.

    The execution noise and answer-error rate give the acceptance score's
    logic/visual components real spread, so the z-scored gate separates
    good traces from bad ones instead of degenerating to length selection.
    """

    detour_rate: float = 0.70   # chance of a detour at each insertion point
    repeat_frac: float = 0.65   # fraction of detours that are redundant repeats
    answer_error_rate: float = 0.08
    k_per_query: int = 1
    noise: NoiseConfig = field(default_factory=lambda: NoiseConfig(
        p_ocr=0.04, seg_jitter=0.08, trk_jitter=0.08, temp_jitter=0.10,
        prop_flip=0.04))


def is_decisive(obs: Observation, view_before: ViewState, view_after: ViewState,
                evidence_before: tuple, evidence_after: tuple) -> bool:
    """A succeeded call that changes the view or the evidence buffer."""
    if not obs.success:
        return False
    return view_before != view_after or evidence_before != evidence_after


def _evidence_key(steps: list[tuple[ToolCall, Observation]]) -> tuple:
    """Hashable summary of what the agent has learned so far."""
    seen = []
    for call, obs in steps:
        if not obs.success or obs.op == ZOOM:
            continue
        if obs.op == OCR:
            seen.append((OCR, obs.payload["text"]))
        elif obs.op == SEG:
            seen.append((SEG, obs.payload["id"]))
        elif obs.op == TRK:
            seen.append((TRK, obs.payload["id"], tuple(obs.payload["boxes"][-1])))
        elif obs.op == TEMP:
            seen.append((TEMP, obs.payload["interval"]))
        elif obs.op == PROP:
            seen.append((PROP, obs.payload["id"], tuple(sorted(obs.payload["attributes"].items()))))
    return tuple(sorted(set(seen), key=repr))


def generate_teacher_traces(clip: Clip, query: Query, k: int,
                            rng: np.random.Generator,
                            teacher_cfg: TeacherConfig | None = None) -> list[TeacherTrace]:
    """k traces that reach the correct answer via ground-truth-guided plans.

    Detours are novel zooms to other bins (decisive but useless); repeats
    re-issue the previous successful call (succeeded, non-decisive).  Each
    trace carries decisive flags and per-step operator checks.
    """
    tc = teacher_cfg or TeacherConfig()
    plan = shortest_plan(clip, query)
    traces = []
    for _ in range(k):
        traces.append(_roll_trace(clip, query, plan, tc, rng))
    return traces


def _roll_trace(clip: Clip, query: Query, plan: list[ToolCall],
                tc: TeacherConfig, rng: np.random.Generator) -> TeacherTrace:
    from .tools import intersect_rect

    cfg = clip.config
    view = ViewState.full(clip)
    steps: list[tuple[ToolCall, Observation]] = []
    decisive: list[bool] = []
    valid: list[bool] = []

    def run(call: ToolCall):
        nonlocal view
        ev_before = _evidence_key(steps)
        view_before = view
        obs = execute_tool(clip, view, call, tc.noise, rng)
        view = apply_zoom(view, obs)
        steps.append((ToolCall(call.op, call.arg, len(steps)), obs))
        decisive.append(is_decisive(obs, view_before, view, ev_before, _evidence_key(steps)))
        valid.append(verify_step(obs, clip)[0])

    def target_hidden(core: ToolCall) -> bool:
        if core.op in (TEMP, ZOOM):
            return False
        tgt = intersect_rect(cfg.bin_rect(core.arg), view.rect())
        return tgt[2] == 0 or tgt[3] == 0

    def detour():
        if steps and steps[-1][1].success and rng.random() < tc.repeat_frac:
            run(steps[-1][0])  # redundant repeat: succeeds, changes nothing
        else:
            run(ToolCall(ZOOM, int(rng.integers(0, cfg.n_region_bins))))

    for core in plan:
        if rng.random() < tc.detour_rate:
            detour()
        if target_hidden(core):
            # a detour zoom hid the target bin; zoom back onto it
            run(ToolCall(ZOOM, core.arg))
        run(core)
    if rng.random() < tc.detour_rate:
        detour()  # trailing dawdle before answering

    answer = query.answer
    if rng.random() < tc.answer_error_rate:
        wrong = int(rng.integers(0, cfg.answer_classes - 1))
        answer = wrong if wrong < query.answer else wrong + 1

    return TeacherTrace(query=query, steps=steps, answer=answer,
                        decisive=decisive, valid=valid, shortest_len=len(plan) + 1)


# --- trajectory acceptance ---------------------------------------------------

def default_components(trace: TeacherTrace, clip: Clip) -> tuple[float, float, float]:
    """Raw (logic, structure, visual) scores before per-family z-scoring.

    Defaults: answer-correctness indicator, inverse normalized length, and
    mean step fidelity.  Pluggable; callers may substitute their own.
    """
    logic = 1.0 if trace.answer == trace.query.answer else 0.0
    struct = trace.shortest_len / max(1, len(trace.steps) + 1)
    fids = [verify_step(obs, clip)[1] for _, obs in trace.steps]
    visual = float(np.mean(fids)) if fids else 0.0
    return (logic, struct, visual)


def zscore_components(traces: list[TeacherTrace],
                      raw: list[tuple[float, float, float]]) -> None:
    """Z-score raw components per task family (query kind), in place."""
    arr = np.asarray(raw, dtype=float)
    kinds = np.asarray([t.query.kind for t in traces])
    out = np.zeros_like(arr)
    for kind in np.unique(kinds):
        m = kinds == kind
        mu = arr[m].mean(axis=0)
        sd = np.maximum(arr[m].std(axis=0), 1e-6)
        out[m] = (arr[m] - mu) / sd
    for t, z in zip(traces, out):
        t.components = tuple(float(v) for v in z)


def accept_trace(trace: TeacherTrace,
                 weights: tuple[float, float, float] = (0.4, 0.3, 0.3),
                 tau0: float = 0.65) -> bool:
    """Accept iff every operator check passes and the weighted score clears
    tau0 (boundary inclusive).  Components must already be z-scored per task
    family."""
    a, b, g = weights
    if abs(a + b + g - 1.0) > 1e-9:
        raise ConfigurationError("acceptance weights must sum to 1")
    if not trace.ops_pass:
        return False
    s = a * trace.components[0] + b * trace.components[1] + g * trace.components[2]
    return s >= tau0


def build_accepted_pool(clips: list[Clip], queries_per_clip: int,
                        rng: np.random.Generator,
                        teacher_cfg: TeacherConfig | None = None,
                        weights: tuple[float, float, float] = (0.4, 0.3, 0.3),
                        tau0: float = 0.65) -> list[tuple[Clip, TeacherTrace]]:
    """Generate, score and filter a teacher pool across clips."""
    tc = teacher_cfg or TeacherConfig()
    pairs: list[tuple[Clip, TeacherTrace]] = []
    for clip in clips:
        for query in make_queries(clip, rng, queries_per_clip):
            for tr in generate_teacher_traces(clip, query, tc.k_per_query, rng, tc):
                pairs.append((clip, tr))
    raw = [default_components(tr, clip) for clip, tr in pairs]
    zscore_components([tr for _, tr in pairs], raw)
    accepted = [(clip, tr) for clip, tr in pairs if accept_trace(tr, weights, tau0)]
    log.info("teacher pool: %d/%d traces accepted", len(accepted), len(pairs))
    return accepted
