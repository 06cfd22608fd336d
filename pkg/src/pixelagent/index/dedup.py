"""Two-stage near-duplicate detection with a structural tie-break.

Stage 1 is the perceptual hash: any pair within Hamming 8 is a duplicate
outright, no embedding check.  Stage 2 applies embedding cosine >= 0.93,
resolved by a windowed structural-similarity tie-break (> 0.92), with a
template-overlap exemption: high cosine but low structural similarity and
low localized foreground overlap stays distinct.  Clips compare aligned
frames and need >= 70% frame positives.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..world.clip import Clip
from .hashing import clip_hashes, hamming, phash

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DedupThresholds:
    hamming_max: int = 8
    cosine_min: float = 0.93
    ssim_tie: float = 0.92
    ssim_video: float = 0.90
    frame_frac: float = 0.70
    template_ssim: float = 0.75
    template_overlap: float = 0.20
    frame_stride: int = 1


@dataclass
class DedupVerdict:
    pair: tuple[int, int]
    hamming: int
    cosine: float
    ssim: float
    duplicate: bool
    stage: str                    # "phash" | "embedding" | "template" | "none"
    frame_positive_frac: float = 1.0


def ssim_grid(a: np.ndarray, b: np.ndarray, window: int = 8) -> float:
    """Windowed mean/variance/covariance similarity on cell grids.

    The usual two-moment structural similarity with constants scaled to the
    grid's dynamic range, averaged over non-overlapping windows.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("ssim needs same-shape grids")
    rng = max(a.max() - a.min(), b.max() - b.min(), 1.0)
    c1 = (0.01 * rng) ** 2
    c2 = (0.03 * rng) ** 2
    h, w = a.shape
    vals = []
    for y in range(0, h - window + 1, window):
        for x in range(0, w - window + 1, window):
            pa = a[y:y + window, x:x + window]
            pb = b[y:y + window, x:x + window]
            mu_a, mu_b = pa.mean(), pb.mean()
            va, vb = pa.var(), pb.var()
            cov = ((pa - mu_a) * (pb - mu_b)).mean()
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                        / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals)) if vals else 0.0


def _erode(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] &= mask[:-1, :]
    out[:-1, :] &= mask[1:, :]
    out[:, 1:] &= mask[:, :-1]
    out[:, :-1] &= mask[:, 1:]
    return out


def localized_overlap(a: np.ndarray, b: np.ndarray, fg_threshold: float) -> float:
    """IoU of eroded foreground masks; low overlap marks template pairs."""
    ma = _erode(np.asarray(a) >= fg_threshold)
    mb = _erode(np.asarray(b) >= fg_threshold)
    union = np.logical_or(ma, mb).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(ma, mb).sum() / union)


def _frame_of(media) -> np.ndarray:
    return media.frames[0] if isinstance(media, Clip) else np.asarray(media)


def _default_embed(frame: np.ndarray) -> np.ndarray:
    """Fallback frame embedding: normalized code histogram."""
    frame = np.asarray(frame)
    hist = np.bincount(frame.ravel().astype(int), minlength=32).astype(float)
    n = np.linalg.norm(hist)
    return hist / n if n > 0 else hist


def dedup_pair(a, b, thresholds: DedupThresholds | None = None,
               embed_fn=None, pair_ids: tuple[int, int] = (0, 0),
               fg_threshold: float = 4.0) -> DedupVerdict:
    """Duplicate-or-distinct decision for two media of the same kind."""
    th = thresholds or DedupThresholds()
    embed_fn = embed_fn or _default_embed
    a_is_clip = isinstance(a, Clip)
    b_is_clip = isinstance(b, Clip)
    if a_is_clip != b_is_clip:
        raise ValueError("dedup_pair compares media of the same kind")

    if a_is_clip and a.frames.shape[0] > 1:
        return _dedup_clip(a, b, th, embed_fn, pair_ids, fg_threshold)

    fa, fb = _frame_of(a), _frame_of(b)
    d_h = hamming(phash(fa), phash(fb))
    ea, eb = embed_fn(fa), embed_fn(fb)
    cos = float(ea @ eb)
    sim = ssim_grid(fa, fb)

    if d_h <= th.hamming_max:
        # pHash positive is removed without invoking the embedding re-check
        return DedupVerdict(pair=pair_ids, hamming=d_h, cosine=cos, ssim=sim,
                            duplicate=True, stage="phash")
    if cos >= th.cosine_min:
        if sim < th.template_ssim and \
                localized_overlap(fa, fb, fg_threshold) < th.template_overlap:
            log.info("dedup: pair %s exempted as benign template overlap", pair_ids)
            return DedupVerdict(pair=pair_ids, hamming=d_h, cosine=cos,
                                ssim=sim, duplicate=False, stage="template")
        if sim > th.ssim_tie:
            return DedupVerdict(pair=pair_ids, hamming=d_h, cosine=cos,
                                ssim=sim, duplicate=True, stage="embedding")
    return DedupVerdict(pair=pair_ids, hamming=d_h, cosine=cos, ssim=sim,
                        duplicate=False, stage="none")


def _dedup_clip(a: Clip, b: Clip, th: DedupThresholds, embed_fn,
                pair_ids, fg_threshold) -> DedupVerdict:
    ha = clip_hashes(a.frames, th.frame_stride)
    hb = clip_hashes(b.frames, th.frame_stride)
    n = min(len(ha), len(hb))
    if n == 0:
        return DedupVerdict(pair=pair_ids, hamming=64, cosine=0.0, ssim=0.0,
                            duplicate=False, stage="none", frame_positive_frac=0.0)
    positives = 0
    hs, cs, ss = [], [], []
    stride = max(1, th.frame_stride)
    for i in range(n):
        fa, fb = a.frames[i * stride], b.frames[i * stride]
        d_h = hamming(ha[i], hb[i])
        cos = float(embed_fn(fa) @ embed_fn(fb))
        sim = ssim_grid(fa, fb)
        hs.append(d_h); cs.append(cos); ss.append(sim)
        if d_h <= th.hamming_max or (cos >= th.cosine_min and sim > th.ssim_video):
            positives += 1
    frac = positives / n
    return DedupVerdict(pair=pair_ids, hamming=int(np.median(hs)),
                        cosine=float(np.median(cs)), ssim=float(np.median(ss)),
                        duplicate=frac >= th.frame_frac, stage="phash" if frac >= th.frame_frac else "none",
                        frame_positive_frac=float(frac))


def dedup_corpus(media: list, thresholds: DedupThresholds | None = None,
                 embed_fn=None) -> tuple[list[int], set[int], list[DedupVerdict]]:
    """Earliest-ingest-wins filtering over an ordered corpus.

    Returns (kept indices, blocklisted indices, verdicts for flagged pairs).
    """
    th = thresholds or DedupThresholds()
    kept: list[int] = []
    blocked: set[int] = set()
    verdicts: list[DedupVerdict] = []
    for i, item in enumerate(media):
        dup = False
        for j in kept:
            v = dedup_pair(media[j], item, th, embed_fn, pair_ids=(j, i))
            if v.duplicate:
                verdicts.append(v)
                dup = True
                break
        if dup:
            blocked.add(i)
        else:
            kept.append(i)
    return kept, blocked, verdicts
