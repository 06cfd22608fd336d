"""Step embeddings: pooled visual summaries projected to the unit sphere.

The visual summary is a masked mean of cell-code indicator features over
the step's footprint (with a 3x3 dilation fallback for tiny footprints);
tool-output features go through a fixed linear map; the concatenation with
the previous-action one-hot passes a two-layer MLP and is L2-normalized to
512 dims.

Projectors are seeded, never trained here: the coherence projector and the
frozen external encoder (used by evaluation metrics and pixel keys) are
two instances with different seeds, so evaluation embeddings stay decoupled
from the ones the reward sees.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from ..world.clip import Clip
from ..world.config import WorldConfig
from ..world.tools import OCR, TOOL_OPS, Footprint, Observation
from ..policy.features import FeatureSpec
from ..policy.model import Trajectory

log = logging.getLogger(__name__)

EMBED_DIM = 512
HIDDEN_DIM = 768


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0))) + x * phi


@dataclass(frozen=True)
class StepEmbedding:
    vector: np.ndarray
    step_index: int


def visual_summary(clip: Clip, footprint: Footprint) -> np.ndarray:
    """Mean cell-code indicator over the footprint.

    Footprints smaller than 9 cells are dilated by one cell on each side;
    empty footprints fall back to the full frame.
    """
    cfg = clip.config
    F, H, W = clip.frames.shape
    x, y, w, h, f0, f1 = (footprint.x, footprint.y, footprint.w, footprint.h,
                          footprint.f0, footprint.f1)
    if footprint.volume == 0:
        x, y, w, h, f0, f1 = 0, 0, W, H, 0, F
    elif footprint.area < 9:
        x0, y0 = max(0, x - 1), max(0, y - 1)
        x1, y1 = min(W, x + w + 1), min(H, y + h + 1)
        x, y, w, h = x0, y0, x1 - x0, y1 - y0
    patch = clip.frames[f0:f1, y:y + h, x:x + w]
    counts = np.bincount(patch.ravel(), minlength=cfg.code_count).astype(float)
    return counts / max(1, patch.size)


def tool_features(obs: Observation, cfg: WorldConfig) -> np.ndarray:
    """Raw serialized tool-output features before the fixed projection."""
    out = np.zeros(7 + 2 + 6 + cfg.alphabet)
    if obs.op in TOOL_OPS:
        out[TOOL_OPS.index(obs.op)] = 1.0
    out[7] = 1.0 if obs.success else 0.0
    out[8] = obs.confidence
    fp = obs.footprint
    out[9:15] = (fp.x / cfg.width, fp.y / cfg.height, fp.w / cfg.width,
                 fp.h / cfg.height, fp.f0 / cfg.frames,
                 (fp.f1 - fp.f0) / cfg.frames)
    if obs.op == OCR and obs.success:
        text = obs.payload["text"]
        if text:
            out[15 + int(text[0])] = 1.0
    return out


@dataclass
class Projector:
    """Two-layer MLP onto the unit sphere.  Parameters are fixed at
    construction; the fallback basis vector handles degenerate zero
    activations deterministically."""

    w_text: np.ndarray   # (d, raw_tool_dim) fixed map for tool features
    w1: np.ndarray       # (hidden, in_dim)
    b1: np.ndarray
    w2: np.ndarray       # (out, hidden)
    b2: np.ndarray

    @classmethod
    def create(cls, spec: FeatureSpec, seed: int, out_dim: int = EMBED_DIM,
               hidden: int = HIDDEN_DIM) -> "Projector":
        cfg = spec.cfg
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 0xE)))
        d = cfg.code_count
        raw = 7 + 2 + 6 + cfg.alphabet
        in_dim = 2 * d + spec.alphabet.size
        s = 1.0 / np.sqrt(in_dim)
        return cls(
            w_text=rng.normal(0, 1.0 / np.sqrt(raw), size=(d, raw)),
            w1=rng.normal(0, s, size=(hidden, in_dim)),
            b1=rng.normal(0, 0.01, size=hidden),
            w2=rng.normal(0, 1.0 / np.sqrt(hidden), size=(out_dim, hidden)),
            b2=rng.normal(0, 0.01, size=out_dim),
        )

    @property
    def visual_dim(self) -> int:
        return self.w_text.shape[0]

    def project_tool(self, raw: np.ndarray) -> np.ndarray:
        return self.w_text @ raw

    def __call__(self, v: np.ndarray, x: np.ndarray,
                 prev_action: np.ndarray) -> np.ndarray:
        return embed_step(v, x, prev_action, self).vector


def embed_step(v: np.ndarray, x: np.ndarray, prev_action: np.ndarray,
               proj: Projector, step_index: int = 0) -> StepEmbedding:
    """Nonlinear projection of [v || x || onehot(prev action)] to unit norm.

    A zero pre-normalization vector falls back to a fixed unit basis vector
    (logged); inputs are treated as constants.
    """
    z = np.concatenate([v, x, prev_action])
    if z.shape[0] != proj.w1.shape[1]:
        raise ValueError(f"input dim {z.shape[0]} != projector dim {proj.w1.shape[1]}")
    h = gelu(proj.w1 @ z + proj.b1)
    out = proj.w2 @ h + proj.b2
    norm = np.linalg.norm(out)
    if norm < 1e-12:
        log.warning("zero pre-normalization embedding at step %d; using basis fallback",
                    step_index)
        out = np.zeros(proj.w2.shape[0])
        out[0] = 1.0
        return StepEmbedding(vector=out, step_index=step_index)
    return StepEmbedding(vector=out / norm, step_index=step_index)


def embed_trajectory(traj: Trajectory, clip: Clip, proj: Projector,
                     spec: FeatureSpec) -> np.ndarray:
    """(T, 512) unit-norm embeddings for a rollout's tool steps."""
    A = spec.alphabet.size
    rows = []
    prev = np.zeros(A)
    for t, step in enumerate(traj.steps):
        v = visual_summary(clip, step.obs.footprint)
        x = proj.project_tool(tool_features(step.obs, clip.config))
        rows.append(embed_step(v, x, prev, proj, step_index=t).vector)
        prev = np.zeros(A)
        prev[step.action_index] = 1.0
    return np.stack(rows) if rows else np.zeros((0, proj.w2.shape[0]))


def adjacent_cosines(embeddings: np.ndarray) -> np.ndarray:
    """cos(E_t, E_{t-1}) for t = 1..T-1; unit-norm rows assumed."""
    if len(embeddings) < 2:
        return np.zeros(0)
    return np.clip((embeddings[1:] * embeddings[:-1]).sum(axis=1), -1.0, 1.0)
