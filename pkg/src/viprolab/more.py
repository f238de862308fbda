"""Temporal clipping and semantic weighting: the refinement that turns the
plain promotion attack into its transfer-oriented clip-wise variant.

Temporal clipping cuts a video where adjacent frame embeddings drift apart
(1 - cos >= gamma, i.e. the frame vectors subtend a large angle), subject to
a minimum clip length so videos never get too fragmented. Within each clip,
frames are weighted by their mean similarity to the rest of the clip and by
their mean similarity to each query's tokens; the weighted exponential loss
then suppresses outlying frames and conflicting queries during PGD, and
each clip is optimized on its own pixels before the clips are concatenated
back in order.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .attack import AttackConfig, AttackResult, finish_result, loss_exp, pgd_step
from .model import EncoderParams, encode_frames, grad_wrt_frames, query_side_vector
from .numerics import DEGENERATE_NORM, SeededRng, cos_sim_matrix


@dataclass(frozen=True)
class ClipPartition:
    """Ordered [start, end) frame ranges covering [0, T) without gaps."""

    ranges: list
    t_frames: int

    def __post_init__(self):
        if not self.ranges:
            raise ValueError("partition must contain at least one clip")
        expected = 0
        for lo, hi in self.ranges:
            if lo != expected or hi <= lo:
                raise ValueError(f"ranges must be contiguous and non-empty, got {self.ranges}")
            expected = hi
        if expected != self.t_frames:
            raise ValueError("ranges must cover [0, T)")

    def __len__(self) -> int:
        return len(self.ranges)

    def __iter__(self):
        return iter(self.ranges)


@dataclass(frozen=True)
class ClipWeights:
    """Per-clip weighting state for the refined loss.

    w_c: (T_C,) frame weights; w_cq: (T_C, N) frame-to-query weights in
    [-1, 1]; sims: (T_C, N) current per-frame per-query similarities.
    """

    w_c: np.ndarray
    w_cq: np.ndarray
    sims: np.ndarray

    def __post_init__(self):
        t_c = self.w_c.shape[0]
        if self.w_cq.shape[0] != t_c or self.sims.shape != self.w_cq.shape:
            raise ValueError("weight/similarity dimensions disagree")
        if np.max(np.abs(self.w_cq)) > 1.0 + 1e-9:
            raise ValueError("frame-to-query weights must lie in [-1, 1]")


def default_min_len(t_frames: int) -> int:
    return max(1, t_frames // 4)


def temporal_clip(frame_embeddings: np.ndarray, gamma: float,
                  min_len: int | None = None) -> ClipPartition:
    """Cut where adjacent embeddings deviate by 1 - cos >= gamma.

    A cut is only placed once the current clip has at least ``min_len``
    frames; the remainder becomes the final clip at whatever length is left.
    """
    emb = np.atleast_2d(np.asarray(frame_embeddings, dtype=np.float64))
    t_frames = emb.shape[0]
    if min_len is None:
        min_len = default_min_len(t_frames)
    if min_len < 1:
        raise ValueError("min_len must be >= 1")
    if not 0 < gamma < 2:
        raise ValueError("gamma must lie in (0, 2)")

    sim = cos_sim_matrix(emb, emb)
    deltas = 1.0 - np.diagonal(sim, offset=1)

    ranges = []
    start = 0
    for t in range(t_frames - 1):
        if deltas[t] >= gamma and (t + 1 - start) >= min_len:
            ranges.append((start, t + 1))
            start = t + 1
    ranges.append((start, t_frames))
    return ClipPartition(ranges=ranges, t_frames=t_frames)


def random_clip(t_frames: int, n_cuts: int, seed: int,
                min_len: int | None = None) -> ClipPartition:
    """Uniformly random valid partition with exactly n_cuts cuts.

    Validity mirrors temporal clipping: every clip except possibly the last
    has length >= min_len. Small cut spaces are enumerated exactly;
    otherwise rejection sampling over sorted cut draws (both deterministic
    per seed).
    """
    if n_cuts >= t_frames:
        raise ValueError("n_cuts must be < t_frames")
    if min_len is None:
        min_len = default_min_len(t_frames)
    rng = SeededRng(seed)
    if n_cuts == 0:
        return ClipPartition(ranges=[(0, t_frames)], t_frames=t_frames)

    def valid(cuts) -> bool:
        prev = 0
        for c in cuts:
            if c - prev < min_len:
                return False
            prev = c
        return t_frames - prev >= 1

    def to_partition(cuts) -> ClipPartition:
        edges = [0, *cuts, t_frames]
        return ClipPartition(
            ranges=[(edges[i], edges[i + 1]) for i in range(len(edges) - 1)],
            t_frames=t_frames,
        )

    if comb(t_frames - 1, n_cuts) <= 20000:
        options = [c for c in combinations(range(1, t_frames), n_cuts) if valid(c)]
        if not options:
            raise ValueError("no valid partition for these constraints")
        return to_partition(options[rng.below(len(options))])

    for _ in range(100000):
        cuts = sorted(int(v) + 1 for v in rng.choice(t_frames - 1, n_cuts))
        if valid(cuts):
            return to_partition(cuts)
    raise ValueError("rejection sampling failed; constraints too tight")


def frame_weights(clip_embeddings: np.ndarray) -> np.ndarray:
    """Mean similarity of each frame to every frame of its clip (self included)."""
    emb = np.atleast_2d(np.asarray(clip_embeddings, dtype=np.float64))
    return cos_sim_matrix(emb, emb).mean(axis=1)


def query_weights(clip_embeddings: np.ndarray, queries) -> np.ndarray:
    """(T_C, N): mean frame-to-token cosine per frame and query."""
    emb = np.atleast_2d(np.asarray(clip_embeddings, dtype=np.float64))
    cols = []
    for q in queries:
        cols.append(cos_sim_matrix(emb, q.per_token).mean(axis=1))
    return np.stack(cols, axis=1)


def loss_more(weights: ClipWeights) -> tuple[float, np.ndarray]:
    """Weighted exponential promotion loss for one clip.

    Per query q the aggregate is sum_t w_c[t] * |w_cq[t,q] * sims[t,q]|;
    the loss is sum_q exp(-aggregate). The absolute value uses the sign
    subgradient with sign(0) = 0.
    """
    u = weights.w_cq * weights.sims
    agg = weights.w_c @ np.abs(u)
    value = float(np.exp(-agg).sum())
    dl_dagg = -np.exp(-agg)
    dl_dsims = dl_dagg[None, :] * weights.w_c[:, None] * np.sign(u) * weights.w_cq
    return value, dl_dsims


def vipro_more_attack(params: EncoderParams, video: np.ndarray, queries,
                      cfg: AttackConfig, index=None, candidate_id: int | None = None,
                      partition: ClipPartition | None = None) -> AttackResult:
    """Clip-wise refined attack: partition and weights come from the clean
    video, then each clip runs its own PGD on its own pixels.

    ``partition`` overrides the clipping policy (used by ablations/tests).
    """
    video = np.asarray(video, dtype=np.float64)
    clean = encode_frames(params, video)
    if np.all(clean.znorm <= DEGENERATE_NORM):
        raise ValueError("degenerate video: every frame embedding collapsed")

    min_len = cfg.min_clip_len if cfg.min_clip_len is not None else default_min_len(video.shape[0])
    if partition is None:
        reference = temporal_clip(clean.emb, cfg.gamma, min_len)
        if cfg.clipping == "temporal":
            partition = reference
        else:
            partition = random_clip(video.shape[0], len(reference) - 1, cfg.clip_seed, min_len)

    w_queries = np.stack([query_side_vector(params, q, cfg.sim_mode) for q in queries], axis=1)

    delta = np.zeros_like(video)
    traces = []
    for lo, hi in partition:
        clip_video = video[lo:hi]
        w_c = frame_weights(clean.emb[lo:hi])
        w_cq = query_weights(clean.emb[lo:hi], queries)
        clip_delta, trace = attack_clip(params, clip_video, w_queries, cfg, w_c, w_cq, queries)
        delta[lo:hi] = clip_delta
        traces.append(trace)

    return finish_result(params, video, delta, queries, cfg, traces,
                         partition=[list(r) for r in partition],
                         index=index, candidate_id=candidate_id)


def attack_clip(params: EncoderParams, clip_video: np.ndarray, w_queries: np.ndarray,
                cfg: AttackConfig, w_c: np.ndarray, w_cq: np.ndarray, queries) -> tuple[np.ndarray, list]:
    """PGD over one clip's pixels with fixed (or per-step refreshed) weights."""
    delta = np.zeros_like(clip_video)
    trace = []
    for _ in range(cfg.eta):
        cache = encode_frames(params, clip_video + delta)
        if cfg.recompute_weights:
            w_c = frame_weights(cache.emb)
            w_cq = query_weights(cache.emb, queries)
        sims = cache.emb @ w_queries
        loss, dl_dsims = loss_more(ClipWeights(w_c=w_c, w_cq=w_cq, sims=sims))
        upstream = dl_dsims @ w_queries.T
        grad = grad_wrt_frames(params, clip_video + delta, upstream, cache=cache)
        delta = pgd_step(delta, grad, cfg, clip_video)
        trace.append(float(loss))
    return delta, trace
