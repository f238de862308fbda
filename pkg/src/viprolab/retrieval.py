"""Ranking, recall metrics, retrieval-boundary analysis, and similarity
histograms over a fixed index of pooled video embeddings.

Ties in similarity are broken by ascending video id, always; every ranking
in the lab is therefore a deterministic permutation of the corpus.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .model import EncoderParams, QueryEmbedding, encode_video, query_side_vector


@dataclass(frozen=True)
class RetrievalIndex:
    pooled: np.ndarray  # (n, d) unit rows (zero where degenerate)
    ids: np.ndarray  # (n,) unique video ids
    model_id: str
    mode: str  # interaction used when ranking: "white" | "grey"

    def __post_init__(self):
        if len(set(self.ids.tolist())) != len(self.ids):
            raise ValueError("video ids must be unique")

    @property
    def n(self) -> int:
        return self.pooled.shape[0]

    def replace(self, video_id: int, pooled: np.ndarray) -> "RetrievalIndex":
        """New index with one video's embedding swapped (post-attack eval)."""
        pos = int(np.nonzero(self.ids == video_id)[0][0])
        new = self.pooled.copy()
        new[pos] = pooled
        return RetrievalIndex(pooled=new, ids=self.ids, model_id=self.model_id, mode=self.mode)


def build_index(params: EncoderParams, corpus, mode: str = "white",
                transform=None) -> RetrievalIndex:
    """Embed every corpus video; ``transform`` (if any) is the victim-side
    input defense applied before encoding."""
    pooled = np.empty((corpus.n, params.d))
    for i in range(corpus.n):
        video = corpus.videos[i]
        if transform is not None:
            video = transform(video, i)
        pooled[i] = encode_video(params, video).pooled
    return RetrievalIndex(
        pooled=pooled,
        ids=np.arange(corpus.n, dtype=np.int64),
        model_id=params.model_id,
        mode=mode,
    )


def _scores(index: RetrievalIndex, params: EncoderParams, query: QueryEmbedding) -> np.ndarray:
    w = query_side_vector(params, query, index.mode)
    return index.pooled @ w


def rank(index: RetrievalIndex, params: EncoderParams, query: QueryEmbedding, top: int) -> np.ndarray:
    """ids of the top videos, similarity descending, ties by ascending id."""
    if top > index.n:
        raise ValueError(f"top={top} exceeds corpus size {index.n}")
    scores = _scores(index, params, query)
    order = np.lexsort((index.ids, -scores))
    return index.ids[order[:top]]


def rank_of(index: RetrievalIndex, params: EncoderParams, query: QueryEmbedding, video_id: int) -> int:
    """1-based rank of one video under the documented tie rule."""
    scores = _scores(index, params, query)
    pos = int(np.nonzero(index.ids == video_id)[0][0])
    s = scores[pos]
    better = np.sum(scores > s) + np.sum((scores == s) & (index.ids < video_id))
    return int(better) + 1


def recall_at_k(index: RetrievalIndex, params: EncoderParams, query_set, k: int) -> float:
    """Fraction of (query, gold id) pairs whose gold id lands in the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(query_set) == 0:
        warnings.warn("recall over an empty query set is defined as 0")
        return 0.0
    hits = sum(1 for query, gold in query_set if rank_of(index, params, query, gold) <= k)
    return hits / len(query_set)


def delta_recall(pre: float, post: float) -> float:
    return post - pre


def r_precision(index: RetrievalIndex, params: EncoderParams, category_queries: dict,
                membership: dict) -> dict:
    """Per-category fraction of the top-m results that are members (m = |category|)."""
    out = {}
    for cat, query in category_queries.items():
        members = membership[cat]
        m = len(members)
        if m == 0:
            raise ValueError(f"category {cat} has no members")
        top = rank(index, params, query, min(m, index.n))
        member_set = set(int(v) for v in members)
        out[cat] = sum(1 for v in top if int(v) in member_set) / m
    return out


@dataclass(frozen=True)
class BoundaryReport:
    """Top-1 similarity as the inverse-radius proxy of the query's
    retrieval boundary, plus the margin to rank 2."""

    top1_sim: float
    top1_id: int
    margin: float  # top1 - top2, >= 0


def boundary_report(index: RetrievalIndex, params: EncoderParams, query: QueryEmbedding) -> BoundaryReport:
    if index.n < 2:
        raise ValueError("boundary analysis needs at least 2 videos")
    scores = _scores(index, params, query)
    order = np.lexsort((index.ids, -scores))
    s1, s2 = scores[order[0]], scores[order[1]]
    return BoundaryReport(top1_sim=float(s1), top1_id=int(index.ids[order[0]]), margin=float(s1 - s2))


@dataclass(frozen=True)
class Top1Histogram:
    mass: np.ndarray  # (bins,), sums to 1
    edges: np.ndarray  # (bins + 1,) over the min-max normalized [0, 1] axis
    mean_top1: float  # mean of the raw (unnormalized) top-1 similarities
    raw: np.ndarray  # raw top-1 similarities, one per query


def top1_histogram(index: RetrievalIndex, params: EncoderParams, queries, bins: int) -> Top1Histogram:
    """Histogram of per-query top-1 similarities, min-max normalized to [0,1]."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    raw = np.array([boundary_report(index, params, q).top1_sim for q in queries])
    lo, hi = float(raw.min()), float(raw.max())
    scaled = np.zeros_like(raw) if hi - lo <= 0 else (raw - lo) / (hi - lo)
    counts, edges = np.histogram(scaled, bins=bins, range=(0.0, 1.0))
    return Top1Histogram(mass=counts / counts.sum(), edges=edges, mean_top1=float(raw.mean()), raw=raw)


def write_boundary_csv(path, params: EncoderParams, index: RetrievalIndex, queries) -> None:
    """One row per query: top-1 id, top-1 similarity, margin to rank 2."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query", "top1_id", "top1_sim", "margin"])
        for qi, query in enumerate(queries):
            rep = boundary_report(index, params, query)
            writer.writerow([qi, rep.top1_id, repr(rep.top1_sim), repr(rep.margin)])
