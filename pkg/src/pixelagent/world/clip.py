"""Seeded synthetic clips: multi-frame cell grids with objects, glyphs and events."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import ConfigurationError, WorldConfig


@dataclass
class ObjectSpec:
    """A tracked object with per-frame boxes, a mask patch and metadata."""

    id: int
    klass: int
    boxes: np.ndarray            # (F, 4) int boxes (x, y, w, h)
    mask: np.ndarray             # (h, w) bool patch, applied inside each frame's box
    text: tuple[int, ...] | None  # glyph codes, or None for textless objects
    attributes: dict[str, int]

    def box_at(self, frame: int) -> tuple[int, int, int, int]:
        x, y, w, h = self.boxes[frame]
        return int(x), int(y), int(w), int(h)


@dataclass
class Clip:
    """Ground-truth scene: frames of cell codes plus the objects and events
    that produced them."""

    frames: np.ndarray                         # (F, H, W) int16 cell codes
    objects: list[ObjectSpec]
    events: list[tuple[str, int, int]]         # (label, start, end) closed frame interval
    seed: int
    config: WorldConfig

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    def validate(self) -> None:
        F, H, W = self.frames.shape
        if F < 1:
            raise ConfigurationError("clip must have at least one frame")
        for obj in self.objects:
            mh, mw = obj.mask.shape
            if not obj.mask.any():
                raise ConfigurationError(f"object {obj.id} has empty mask")
            for f in range(F):
                x, y, w, h = obj.box_at(f)
                if x < 0 or y < 0 or x + w > W or y + h > H or w < mw or h < mh:
                    raise ConfigurationError(
                        f"object {obj.id} footprint escapes grid at frame {f}"
                    )
        for label, t0, t1 in self.events:
            if not (0 <= t0 <= t1 < F):
                raise ConfigurationError(f"event {label} interval [{t0},{t1}] invalid")


def _make_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Rectangle with randomly notched corners; always nonempty."""
    mask = np.ones((h, w), dtype=bool)
    for cy in (0, h - 1):
        for cx in (0, w - 1):
            if rng.random() < 0.5:
                mask[cy, cx] = False
    if not mask.any():
        mask[h // 2, w // 2] = True
    return mask


def generate_clip(config: WorldConfig, seed: int) -> Clip:
    """Deterministically generate a clip; identical (config, seed) pairs
    yield bit-identical clips.

    Objects start in distinct region bins, move with per-frame velocity
    capped at ``velocity_cap`` and stay inside the grid.  Each object body
    is rendered with its class code; glyph text, when present, overwrites
    the top row of the box.
    """
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))

    F, H, W = config.frames, config.height, config.width
    background = rng.integers(0, config.background_codes, size=(H, W), dtype=np.int16)
    if config.brightness_shift:
        background = (background + config.brightness_shift) % config.background_codes
        background = background.astype(np.int16)

    start_bins = rng.choice(config.n_region_bins, size=config.n_objects, replace=False)
    objects: list[ObjectSpec] = []
    for oid in range(config.n_objects):
        klass = int(rng.integers(0, config.n_classes))
        bx, by, bw, bh = config.bin_rect(int(start_bins[oid]))
        mh = int(rng.integers(3, min(6, bh) + 1))
        mw = int(rng.integers(max(3, config.text_len), min(7, bw) + 1))
        x = int(rng.integers(bx, bx + max(1, bw - mw)))
        y = int(rng.integers(by, by + max(1, bh - mh)))
        raw_v = rng.integers(-config.velocity_cap, config.velocity_cap + 1, size=2)
        v = np.clip(np.round(raw_v * config.velocity_shift), -config.velocity_cap,
                    config.velocity_cap).astype(int)
        boxes = np.zeros((F, 4), dtype=np.int64)
        cx, cy = x, y
        for f in range(F):
            boxes[f] = (cx, cy, mw, mh)
            cx = int(np.clip(cx + v[0], 0, W - mw))
            cy = int(np.clip(cy + v[1], 0, H - mh))
        text = None
        if rng.random() < 0.8:
            text = tuple(int(g) for g in rng.integers(0, config.alphabet,
                                                      size=config.text_len))
        attributes = {
            "hue": int(rng.integers(0, config.alphabet)),
            "tone": int(rng.integers(0, config.alphabet)),
        }
        objects.append(ObjectSpec(
            id=oid, klass=klass, boxes=boxes,
            mask=_make_mask(rng, mh, mw), text=text, attributes=attributes,
        ))

    events: list[tuple[str, int, int]] = []
    for k in range(config.n_events):
        t0 = int(rng.integers(0, F))
        t1 = int(rng.integers(t0, F))
        events.append((f"evt{k}", t0, t1))

    frames = np.tile(background, (F, 1, 1)).astype(np.int16)
    for f in range(F):
        for obj in objects:
            x, y, w, h = obj.box_at(f)
            patch = frames[f, y:y + h, x:x + w]
            patch[obj.mask] = config.body_code_base + obj.klass
            if obj.text is not None:
                for i, g in enumerate(obj.text[:w]):
                    frames[f, y, x + i] = config.glyph_code_base + g

    clip = Clip(frames=frames, objects=objects, events=events, seed=seed, config=config)
    clip.validate()
    return clip
