"""Hybrid text+pixel retrieval keys.

Text keys hash prompt tokens into fixed pseudo-random embeddings and sum
them; pixel keys pool visual summaries over tool-output footprints, pass
the frozen external encoder, and project down to the configured dimension.
Both halves are unit L2 norm so that inner products are cosines.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..percept.embed import Projector, visual_summary
from ..world.clip import Clip
from ..world.teacher import Query
from ..world.tools import EMPTY_FOOTPRINT, Footprint, Observation


@dataclass(frozen=True)
class KeyConfig:
    d_txt: int = 32
    d_pix: int = 32
    seed: int = 0

    @property
    def dim(self) -> int:
        return self.d_txt + self.d_pix


@dataclass
class HybridKey:
    text: np.ndarray
    pixel: np.ndarray
    source_id: int
    footprints: list[Footprint]

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.text, self.pixel])


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < 1e-12:
        out = np.zeros_like(v)
        out[0] = 1.0
        return out
    return v / n


def _token_embedding(token: str, dim: int, seed: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{token}".encode()).digest()
    ent = int.from_bytes(digest[:8], "little")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=ent))
    return rng.normal(size=dim)


def prompt_tokens(query: Query) -> list[str]:
    return [f"kind:{query.kind}", f"region:{query.region}",
            f"class:{query.target_class}", f"attr:{query.attr_key}",
            f"frame:{query.frame}"]


class KeyBuilder:
    """Deterministic key construction shared by corpus ingest and queries."""

    def __init__(self, encoder: Projector, cfg: KeyConfig):
        self.encoder = encoder
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, 0xF1)))
        out_dim = encoder.w2.shape[0]
        self._reduce = rng.normal(0, 1.0 / np.sqrt(out_dim),
                                  size=(cfg.d_pix, out_dim))

    def text_key(self, query: Query) -> np.ndarray:
        vec = np.zeros(self.cfg.d_txt)
        for tok in prompt_tokens(query):
            vec += _token_embedding(tok, self.cfg.d_txt, self.cfg.seed)
        return _unit(vec)

    def pixel_key(self, clip: Clip, tool_outputs: list[Observation]) -> np.ndarray:
        fps = [o.footprint for o in tool_outputs if o.success and
               o.footprint.volume > 0]
        if not fps:
            fps = [EMPTY_FOOTPRINT]  # visual_summary falls back to full frame
        pooled = np.mean([visual_summary(clip, fp) for fp in fps], axis=0)
        x = np.zeros(self.encoder.w_text.shape[0])
        prev = np.zeros(self.encoder.w1.shape[1] - 2 * len(pooled))
        emb = self.encoder(pooled, x, prev)
        return _unit(self._reduce @ emb)

    def build(self, clip: Clip, query: Query,
              tool_outputs: list[Observation], source_id: int) -> HybridKey:
        fps = [o.footprint for o in tool_outputs if o.success]
        return HybridKey(text=self.text_key(query),
                         pixel=self.pixel_key(clip, tool_outputs),
                         source_id=source_id, footprints=fps)


def combined_similarity(a: np.ndarray, b: np.ndarray, d_txt: int,
                        lambda_pix: float) -> float:
    """Convex text/pixel mix of sub-key cosines (keys are unit per block)."""
    return float((1.0 - lambda_pix) * (a[:d_txt] @ b[:d_txt])
                 + lambda_pix * (a[d_txt:] @ b[d_txt:]))
