"""Inverted-file product-quantization index with exact re-ranking.

Coarse k-means routes vectors to posting lists; each list stores product-
quantization codes (m subvectors, b bits).  Search scans the n_probe best
lists with asymmetric-distance lookup tables under the convex text/pixel
weighting, re-ranks a candidate pool by exact weighted cosine, and never
returns whitelisted ids.  k-means runs 20 seeded iterations with
empty-cluster reseeding to the farthest point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .keys import HybridKey

log = logging.getLogger(__name__)

INDEX_VERSION = 1


@dataclass(frozen=True)
class IndexConfig:
    d_txt: int = 32
    d_pix: int = 32
    n_list: int = 64
    m: int = 8
    b: int = 8
    n_probe: int = 8
    rerank: int = 64
    kmeans_iters: int = 20
    seed: int = 0

    @property
    def dim(self) -> int:
        return self.d_txt + self.d_pix

    @property
    def sub_dim(self) -> int:
        return self.dim // self.m

    def validate(self) -> None:
        if self.dim % self.m:
            raise ValueError("key dim must be divisible by m")
        if self.d_txt % self.sub_dim or self.d_pix % self.sub_dim:
            raise ValueError("subvectors must not straddle the text/pixel split")
        if not 1 <= self.b <= 8:
            raise ValueError("b must be in [1, 8]")


def kmeans(X: np.ndarray, k: int, iters: int,
           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Seeded Lloyd iterations; empty clusters reseed to the point farthest
    from its assigned centroid."""
    n = len(X)
    k = min(k, n)
    centroids = X[rng.choice(n, size=k, replace=False)].copy()
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        dist_own = d2[np.arange(n), assign]
        for c in range(k):
            mask = assign == c
            if mask.any():
                centroids[c] = X[mask].mean(axis=0)
            else:
                far = int(dist_own.argmax())
                centroids[c] = X[far]
                assign[far] = c
                dist_own[far] = 0.0
    return centroids, assign


@dataclass
class IvfPqIndex:
    cfg: IndexConfig
    coarse: np.ndarray                  # (n_list, dim)
    codebooks: np.ndarray               # (m, 2^b, sub_dim)
    codes: np.ndarray                   # (n, m) uint8
    list_of: np.ndarray                 # (n,) coarse assignment
    ids: np.ndarray                     # (n,) external ids
    vectors: np.ndarray                 # (n, dim) raw keys for exact rerank
    whitelist: set = field(default_factory=set)
    blocklist: set = field(default_factory=set)
    radii: np.ndarray | None = None     # (m, 2^b) max sub-distance seen at add

    @property
    def size(self) -> int:
        return len(self.ids)

    # -- build ---------------------------------------------------------------

    @classmethod
    def build(cls, keys: list[HybridKey], cfg: IndexConfig,
              whitelist: set | None = None) -> "IvfPqIndex":
        cfg.validate()
        whitelist = set(whitelist or ())
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, 0x1D)))
        train = np.stack([k.vector for k in keys if k.source_id not in whitelist])
        if len(train) == 0:
            raise ValueError("cannot build an index with zero admissible keys")

        n_list = min(cfg.n_list, len(train))
        coarse, _ = kmeans(train, n_list, cfg.kmeans_iters, rng)
        n_codes = 2 ** cfg.b
        codebooks = np.zeros((cfg.m, min(n_codes, len(train)), cfg.sub_dim))
        books = []
        for s in range(cfg.m):
            sub = train[:, s * cfg.sub_dim:(s + 1) * cfg.sub_dim]
            cents, _ = kmeans(sub, n_codes, cfg.kmeans_iters, rng)
            books.append(cents)
        codebooks = np.stack(books)

        index = cls(cfg=cfg, coarse=coarse, codebooks=codebooks,
                    codes=np.zeros((0, cfg.m), dtype=np.uint8),
                    list_of=np.zeros(0, dtype=np.int64),
                    ids=np.zeros(0, dtype=np.int64),
                    vectors=np.zeros((0, cfg.dim)),
                    whitelist=whitelist,
                    radii=np.zeros((cfg.m, codebooks.shape[1])))
        for key in keys:
            index.add(key)
        return index

    def encode(self, vec: np.ndarray) -> np.ndarray:
        code = np.empty(self.cfg.m, dtype=np.uint8)
        for s in range(self.cfg.m):
            sub = vec[s * self.cfg.sub_dim:(s + 1) * self.cfg.sub_dim]
            d2 = ((self.codebooks[s] - sub) ** 2).sum(axis=1)
            code[s] = int(d2.argmin())
        return code

    def decode(self, code: np.ndarray) -> np.ndarray:
        return np.concatenate([self.codebooks[s][code[s]]
                               for s in range(self.cfg.m)])

    def add(self, key: HybridKey) -> bool:
        """Ingest one key; whitelisted and blocklisted ids are masked."""
        if key.source_id in self.whitelist:
            log.info("index: id %s is whitelisted; rejected at ingest",
                     key.source_id)
            return False
        if key.source_id in self.blocklist:
            log.info("index: id %s is blocklisted (duplicate); skipped",
                     key.source_id)
            return False
        vec = key.vector
        code = self.encode(vec)
        for s in range(self.cfg.m):
            sub = vec[s * self.cfg.sub_dim:(s + 1) * self.cfg.sub_dim]
            d = float(np.linalg.norm(sub - self.codebooks[s][code[s]]))
            self.radii[s, code[s]] = max(self.radii[s, code[s]], d)
        d2 = ((self.coarse - vec) ** 2).sum(axis=1)
        self.codes = np.vstack([self.codes, code[None]])
        self.list_of = np.append(self.list_of, int(d2.argmin()))
        self.ids = np.append(self.ids, key.source_id)
        self.vectors = np.vstack([self.vectors, vec[None]])
        return True

    # -- search ---------------------------------------------------------------

    def _weights(self, lambda_pix: float) -> np.ndarray:
        w = np.empty(self.cfg.dim)
        w[:self.cfg.d_txt] = 1.0 - lambda_pix
        w[self.cfg.d_txt:] = lambda_pix
        return w

    def search(self, query: np.ndarray, lambda_pix: float = 0.5,
               k: int = 8, n_probe: int | None = None) -> list[tuple[int, float]]:
        """Top-k (id, similarity) under the convex text/pixel cosine mix.

        Scans the best n_probe coarse lists by table lookup, re-ranks the
        candidate pool exactly, and masks whitelisted ids.  Asking for more
        than the index holds returns everything (logged).
        """
        if not 0.0 <= lambda_pix <= 1.0:
            raise ValueError("lambda_pix must lie in [0, 1]")
        if self.size == 0:
            raise ValueError("index is empty")
        if k > self.size:
            log.info("index: k=%d exceeds size %d; returning all", k, self.size)
            k = self.size
        n_probe = min(n_probe or self.cfg.n_probe, len(self.coarse))
        w = self._weights(lambda_pix)
        wq = query * w

        coarse_sim = self.coarse @ wq
        probe = np.argsort(-coarse_sim)[:n_probe]
        cand = np.flatnonzero(np.isin(self.list_of, probe))
        if cand.size == 0:
            cand = np.arange(self.size)

        tables = np.stack([
            self.codebooks[s] @ wq[s * self.cfg.sub_dim:(s + 1) * self.cfg.sub_dim]
            for s in range(self.cfg.m)
        ])  # (m, 2^b)
        approx = np.zeros(cand.size)
        for s in range(self.cfg.m):
            approx += tables[s][self.codes[cand, s]]

        pool = cand[np.argsort(-approx)[:max(self.cfg.rerank, k)]]
        exact = self.vectors[pool] @ wq
        order = pool[np.argsort(-exact)]
        out = []
        for idx in order:
            sid = int(self.ids[idx])
            if sid in self.whitelist:  # defense in depth; never stored anyway
                continue
            out.append((sid, float(self.vectors[idx] @ wq)))
            if len(out) == k:
                break
        return out

    # -- integrity ------------------------------------------------------------

    def check_invariants(self) -> None:
        """Whitelist absence and PQ round-trip soundness."""
        stored = set(int(i) for i in self.ids)
        leaked = stored & self.whitelist
        if leaked:
            raise AssertionError(f"whitelisted ids stored in index: {leaked}")
        for i in range(self.size):
            dec = self.decode(self.codes[i])
            for s in range(self.cfg.m):
                sl = slice(s * self.cfg.sub_dim, (s + 1) * self.cfg.sub_dim)
                d = float(np.linalg.norm(self.vectors[i, sl] - dec[sl]))
                if d > self.radii[s, self.codes[i, s]] + 1e-9:
                    raise AssertionError(
                        f"PQ round-trip error beyond centroid radius at item {i}")

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        np.savez(path, version=INDEX_VERSION,
                 d_txt=self.cfg.d_txt, d_pix=self.cfg.d_pix,
                 n_list=self.cfg.n_list, m=self.cfg.m, b=self.cfg.b,
                 n_probe=self.cfg.n_probe, rerank=self.cfg.rerank,
                 kmeans_iters=self.cfg.kmeans_iters, seed=self.cfg.seed,
                 coarse=self.coarse, codebooks=self.codebooks,
                 codes=self.codes, list_of=self.list_of, ids=self.ids,
                 vectors=self.vectors,
                 whitelist=np.asarray(sorted(self.whitelist), dtype=np.int64),
                 blocklist=np.asarray(sorted(self.blocklist), dtype=np.int64),
                 radii=self.radii)

    @classmethod
    def load(cls, path: str | Path) -> "IvfPqIndex":
        with np.load(path) as d:
            if int(d["version"]) != INDEX_VERSION:
                raise ValueError(f"index version {d['version']} unsupported")
            cfg = IndexConfig(d_txt=int(d["d_txt"]), d_pix=int(d["d_pix"]),
                              n_list=int(d["n_list"]), m=int(d["m"]),
                              b=int(d["b"]), n_probe=int(d["n_probe"]),
                              rerank=int(d["rerank"]),
                              kmeans_iters=int(d["kmeans_iters"]),
                              seed=int(d["seed"]))
            return cls(cfg=cfg, coarse=d["coarse"], codebooks=d["codebooks"],
                       codes=d["codes"], list_of=d["list_of"], ids=d["ids"],
                       vectors=d["vectors"],
                       whitelist=set(int(x) for x in d["whitelist"]),
                       blocklist=set(int(x) for x in d["blocklist"]),
                       radii=d["radii"])


def exact_search(vectors: np.ndarray, ids: np.ndarray, query: np.ndarray,
                 d_txt: int, lambda_pix: float, k: int) -> list[tuple[int, float]]:
    """Exhaustive oracle under the same weighted cosine."""
    w = np.empty(vectors.shape[1])
    w[:d_txt] = 1.0 - lambda_pix
    w[d_txt:] = lambda_pix
    sims = vectors @ (query * w)
    order = np.argsort(-sims)[:k]
    return [(int(ids[i]), float(sims[i])) for i in order]
