"""Hybrid retrieval, quantized search, perceptual hashing and hygiene."""

from .audit import AuditReport, audit_leakage, clopper_pearson, media_digest
from .dedup import (DedupThresholds, DedupVerdict, dedup_corpus, dedup_pair,
                    localized_overlap, ssim_grid)
from .hashing import clip_hashes, hamming, phash
from .ivfpq import IndexConfig, IvfPqIndex, exact_search, kmeans
from .keys import (HybridKey, KeyBuilder, KeyConfig, combined_similarity,
                   prompt_tokens)

__all__ = [
    "AuditReport", "DedupThresholds", "DedupVerdict", "HybridKey",
    "IndexConfig", "IvfPqIndex", "KeyBuilder", "KeyConfig", "audit_leakage",
    "clip_hashes", "clopper_pearson", "combined_similarity", "dedup_corpus",
    "dedup_pair", "exact_search", "hamming", "kmeans", "localized_overlap",
    "media_digest", "phash", "prompt_tokens", "ssim_grid",
]
