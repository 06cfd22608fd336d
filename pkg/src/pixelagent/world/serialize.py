"""Line-delimited structured-text serialization for clips and teacher traces.

Each file starts with a schema header record; every following line is one
record.  Round-trips are exact: integer grids and seeds reproduce
bit-identically, and config dicts re-validate on load.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np

from .clip import Clip, ObjectSpec
from .config import NoiseConfig, WorldConfig, dataclass_from_dict
from .teacher import Query, TeacherTrace
from .tools import Footprint, Observation, ToolCall

CLIP_SCHEMA = "pixelagent.clip/1"
TRACE_SCHEMA = "pixelagent.trace/1"


def _config_dict(cfg: WorldConfig) -> dict:
    d = dataclasses.asdict(cfg)
    return d


def clip_to_record(clip: Clip) -> dict:
    return {
        "seed": clip.seed,
        "config": _config_dict(clip.config),
        "frames": clip.frames.tolist(),
        "objects": [
            {
                "id": o.id, "klass": o.klass, "boxes": o.boxes.tolist(),
                "mask": o.mask.astype(int).tolist(),
                "text": list(o.text) if o.text is not None else None,
                "attributes": o.attributes,
            }
            for o in clip.objects
        ],
        "events": [[label, t0, t1] for label, t0, t1 in clip.events],
    }


def clip_from_record(rec: dict) -> Clip:
    cfg = dataclass_from_dict(WorldConfig, rec["config"])
    objects = [
        ObjectSpec(
            id=o["id"], klass=o["klass"],
            boxes=np.asarray(o["boxes"], dtype=np.int64),
            mask=np.asarray(o["mask"], dtype=bool),
            text=tuple(o["text"]) if o["text"] is not None else None,
            attributes={k: int(v) for k, v in o["attributes"].items()},
        )
        for o in rec["objects"]
    ]
    clip = Clip(
        frames=np.asarray(rec["frames"], dtype=np.int16),
        objects=objects,
        events=[(e[0], int(e[1]), int(e[2])) for e in rec["events"]],
        seed=rec["seed"], config=cfg,
    )
    clip.validate()
    return clip


def _obs_to_dict(obs: Observation) -> dict:
    payload = obs.payload
    if isinstance(payload, dict) and "mask" in payload:
        payload = dict(payload)
        payload["mask"] = np.asarray(payload["mask"]).astype(int).tolist()
    if isinstance(payload, dict) and "text" in payload:
        payload = dict(payload)
        payload["text"] = list(payload["text"])
    if isinstance(payload, dict) and "boxes" in payload:
        payload = dict(payload)
        payload["boxes"] = [list(b) for b in payload["boxes"]]
    return {
        "op": obs.op, "payload": payload, "success": obs.success,
        "footprint": list(dataclasses.astuple(obs.footprint)),
        "confidence": obs.confidence, "object_id": obs.object_id,
    }


def _obs_from_dict(d: dict) -> Observation:
    payload = d["payload"]
    if isinstance(payload, dict) and "mask" in payload:
        payload = dict(payload)
        payload["mask"] = np.asarray(payload["mask"], dtype=bool)
    if isinstance(payload, dict) and "text" in payload:
        payload = dict(payload)
        payload["text"] = tuple(payload["text"])
    if isinstance(payload, dict) and "boxes" in payload:
        payload = dict(payload)
        payload["boxes"] = [tuple(b) for b in payload["boxes"]]
    if isinstance(payload, dict) and "box" in payload:
        payload = dict(payload)
        payload["box"] = tuple(payload["box"])
    if isinstance(payload, dict) and "interval" in payload:
        payload = dict(payload)
        payload["interval"] = tuple(payload["interval"])
    if isinstance(payload, dict) and "view" in payload:
        payload = dict(payload)
        payload["view"] = tuple(payload["view"])
    return Observation(
        op=d["op"], payload=payload, success=d["success"],
        footprint=Footprint(*d["footprint"]), confidence=d["confidence"],
        object_id=d["object_id"],
    )


def trace_to_record(trace: TeacherTrace) -> dict:
    return {
        "query": dataclasses.asdict(trace.query),
        "steps": [
            {"call": [c.op, c.arg, c.step_index], "obs": _obs_to_dict(o)}
            for c, o in trace.steps
        ],
        "answer": trace.answer,
        "decisive": [bool(b) for b in trace.decisive],
        "valid": [bool(b) for b in trace.valid],
        "components": list(trace.components),
        "shortest_len": trace.shortest_len,
    }


def trace_from_record(rec: dict) -> TeacherTrace:
    return TeacherTrace(
        query=Query(**rec["query"]),
        steps=[(ToolCall(s["call"][0], s["call"][1], s["call"][2]),
                _obs_from_dict(s["obs"])) for s in rec["steps"]],
        answer=rec["answer"],
        decisive=list(rec["decisive"]),
        valid=list(rec["valid"]),
        components=tuple(rec["components"]),
        shortest_len=rec["shortest_len"],
    )


def write_records(path: str | Path, schema: str, records: list[dict]) -> None:
    path = Path(path)
    with path.open("w") as fh:
        fh.write(json.dumps({"schema": schema}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_records(path: str | Path, schema: str) -> list[dict]:
    path = Path(path)
    with path.open() as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != schema:
            raise ValueError(f"schema mismatch: {header.get('schema')!r} != {schema!r}")
        return [json.loads(line) for line in fh if line.strip()]


def save_clips(path: str | Path, clips: list[Clip]) -> None:
    write_records(path, CLIP_SCHEMA, [clip_to_record(c) for c in clips])


def load_clips(path: str | Path) -> list[Clip]:
    return [clip_from_record(r) for r in read_records(path, CLIP_SCHEMA)]


def save_traces(path: str | Path, traces: list[TeacherTrace]) -> None:
    write_records(path, TRACE_SCHEMA, [trace_to_record(t) for t in traces])


def load_traces(path: str | Path) -> list[TeacherTrace]:
    return [trace_from_record(r) for r in read_records(path, TRACE_SCHEMA)]


def corpus_digest(clips: list[Clip]) -> str:
    """Stable content hash of a clip corpus; used for determinism checks."""
    h = hashlib.sha256()
    for clip in clips:
        h.update(json.dumps(clip_to_record(clip), sort_keys=True).encode())
    return h.hexdigest()
