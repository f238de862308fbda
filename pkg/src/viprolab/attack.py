"""Sign-PGD promotion engine and its loss functions (plain variant, no
temporal refinement).

The attack perturbs video pixels to raise cross-modal similarity against a
fixed set of target queries, projecting onto the l-inf ball of radius
epsilon around the clean video and onto valid pixel range [0,1] after every
step. The exponential loss sums exp(-s_q) per query, so far targets (low
similarity) receive larger gradients than near ones; the naive negative-sum
loss treats all targets identically and is kept for comparison.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .model import (
    EncoderParams,
    FrameCache,
    VideoEmbedding,
    encode_frames,
    grad_wrt_frames,
    pool_rows,
    query_side_vector,
    similarity,
)
from .numerics import DEGENERATE_NORM

LOSS_KINDS = ("exp", "neg", "exp_total")
STEP_RULES = ("sign", "raw")
CLIPPINGS = ("temporal", "random")

# 1 - sqrt(3)/2: adjacent frames cut when they subtend an angle >= pi/6.
DEFAULT_GAMMA = 1.0 - math.sqrt(3.0) / 2.0


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 16.0 / 255.0  # l-inf budget, pixel units
    alpha: float = 1.0 / 255.0  # step size
    eta: int = 128  # max PGD steps
    loss_kind: str = "exp"
    sim_mode: str = "white"
    more_enabled: bool = False
    gamma: float = DEFAULT_GAMMA  # temporal clipping threshold
    unbounded: bool = False  # disable the epsilon projection
    step_rule: str = "sign"
    per_frame_sims: bool | None = None  # None: follow more_enabled
    clipping: str = "temporal"
    min_clip_len: int | None = None  # None: T // 4
    clip_seed: int = 0  # random-clipping stream
    recompute_weights: bool = False  # refresh MoRe weights every step

    def __post_init__(self):
        if not self.unbounded and self.epsilon <= 0:
            raise ValueError("epsilon must be positive unless unbounded")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if not 0 < self.gamma < 2:
            raise ValueError("gamma must lie in (0, 2)")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.sim_mode not in ("white", "grey"):
            raise ValueError("sim_mode must be white or grey")
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}")
        if self.clipping not in CLIPPINGS:
            raise ValueError(f"clipping must be one of {CLIPPINGS}")

    @property
    def frame_level_sims(self) -> bool:
        if self.per_frame_sims is None:
            return self.more_enabled
        return self.per_frame_sims


@dataclass(frozen=True)
class AttackResult:
    delta: np.ndarray  # (T, D_in)
    adversarial: np.ndarray  # clean + delta, in [0, 1]
    loss_trace: list  # plain: one float per step; MoRe: one list per clip
    final_sims: np.ndarray  # pooled cross-modal similarity per target query
    success_at_1: np.ndarray | None = None  # per-query flags, when an index was given
    success_at_5: np.ndarray | None = None
    partition: list | None = None  # clip ranges, MoRe only

    def check_budget(self, cfg: AttackConfig) -> None:
        if not cfg.unbounded and np.max(np.abs(self.delta)) > cfg.epsilon + 1e-12:
            raise AssertionError("delta exceeds the epsilon budget")
        if self.adversarial.min() < 0.0 or self.adversarial.max() > 1.0:
            raise AssertionError("adversarial video leaves [0, 1]")

    def to_json(self, include_delta: bool = False) -> str:
        doc = {
            "final_sims": self.final_sims.tolist(),
            "loss_trace": self.loss_trace,
            "success_at_1": None if self.success_at_1 is None else self.success_at_1.tolist(),
            "success_at_5": None if self.success_at_5 is None else self.success_at_5.tolist(),
            "partition": self.partition,
            "max_abs_delta": float(np.max(np.abs(self.delta))),
        }
        if include_delta:
            doc["delta"] = self.delta.tolist()
        return json.dumps(doc, sort_keys=True)


def loss_neg(sims: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative similarity sum; gradient is -1 for every target."""
    sims = np.asarray(sims, dtype=np.float64)
    return float(-sims.sum()), -np.ones_like(sims)


def loss_exp(sims: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of exp(-s_q); gradient -exp(-s_q) adapts to target distance."""
    sims = np.asarray(sims, dtype=np.float64)
    e = np.exp(-sims)
    return float(e.sum()), -e


def loss_exp_total(sims: np.ndarray) -> tuple[float, np.ndarray]:
    """exp(-sum s): the scalar reading of the exponential loss (comparison flag)."""
    sims = np.asarray(sims, dtype=np.float64)
    e = float(np.exp(-sims.sum()))
    return e, -e * np.ones_like(sims)


_LOSSES = {"neg": loss_neg, "exp": loss_exp, "exp_total": loss_exp_total}


def aggregate_sims(params: EncoderParams, video_embedding: VideoEmbedding,
                   queries, sim_mode: str) -> np.ndarray:
    """Pooled cross-modal similarity of one video against each target query."""
    return np.array([similarity(params, q, video_embedding.pooled, sim_mode) for q in queries])


def pgd_step(delta: np.ndarray, grad: np.ndarray, cfg: AttackConfig,
             video: np.ndarray) -> np.ndarray:
    """One descent step with projection onto the budget and pixel range.

    sign rule: delta - alpha * sign(grad) (sign(0) = 0); raw rule uses the
    unnormalized gradient. The pixel projection recomputes delta from the
    clipped adversarial video so video + delta is in [0,1] exactly.
    """
    if delta.shape != grad.shape or delta.shape != video.shape:
        raise ValueError("delta/grad/video shapes disagree")
    if cfg.step_rule == "sign":
        new = delta - cfg.alpha * np.sign(grad)
    else:
        new = delta - cfg.alpha * grad
    if not cfg.unbounded:
        new = np.clip(new, -cfg.epsilon, cfg.epsilon)
    adv = np.clip(video + new, 0.0, 1.0)
    return adv - video


def _per_query_aggregate(s_frames: np.ndarray) -> np.ndarray:
    """Frame-level similarities (T, N) -> per-query aggregate (column sums)."""
    return s_frames.sum(axis=0)


def _pooled_sims(cache: FrameCache, w_queries: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Pooled similarities plus (pooled unit vector, its pre-norm) for backward."""
    mean = cache.emb.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm <= DEGENERATE_NORM:
        return np.zeros(w_queries.shape[1]), np.zeros_like(mean), 0.0
    pooled = mean / norm
    return pooled @ w_queries, pooled, norm


def _pooled_upstream(cache: FrameCache, w_queries: np.ndarray, pooled: np.ndarray,
                     norm: float, dl_dsims: np.ndarray) -> np.ndarray:
    """Chain dLoss/dsims back to per-frame cotangents for the pooled path."""
    t_frames = cache.emb.shape[0]
    if norm <= DEGENERATE_NORM:
        return np.zeros_like(cache.emb)
    wd = w_queries @ dl_dsims
    dl_dmean = (wd - float(wd @ pooled) * pooled) / norm
    return np.tile(dl_dmean / t_frames, (t_frames, 1))


def vipro_attack(params: EncoderParams, video: np.ndarray, queries, cfg: AttackConfig,
                 index=None, candidate_id: int | None = None) -> AttackResult:
    """Multi-target promotion attack, plain variant (no temporal refinement).

    Queries are encoded once up front; every PGD step re-encodes the
    perturbed video, evaluates the promotion loss over all targets, and
    descends the exact pixel gradient. With ``frame_level_sims`` the loss
    sees per-frame similarities (column-summed per query) instead of the
    pooled video similarity.
    """
    video = np.asarray(video, dtype=np.float64)
    if len(queries) < 1:
        raise ValueError("at least one target query required")
    clean_cache = encode_frames(params, video)
    if np.all(clean_cache.znorm <= DEGENERATE_NORM):
        raise ValueError("degenerate video: every frame embedding collapsed")

    loss_fn = _LOSSES[cfg.loss_kind]
    w_queries = np.stack([query_side_vector(params, q, cfg.sim_mode) for q in queries], axis=1)

    delta = np.zeros_like(video)
    trace = []
    for _ in range(cfg.eta):
        cache = encode_frames(params, video + delta)
        if cfg.frame_level_sims:
            s_frames = cache.emb @ w_queries
            loss, dl_dagg = loss_fn(_per_query_aggregate(s_frames))
            upstream = np.tile(dl_dagg, (video.shape[0], 1)) @ w_queries.T
        else:
            sims, pooled, norm = _pooled_sims(cache, w_queries)
            loss, dl_dsims = loss_fn(sims)
            upstream = _pooled_upstream(cache, w_queries, pooled, norm, dl_dsims)
        grad = grad_wrt_frames(params, video + delta, upstream, cache=cache)
        delta = pgd_step(delta, grad, cfg, video)
        trace.append(float(loss))

    return finish_result(params, video, delta, queries, cfg, trace,
                         index=index, candidate_id=candidate_id)


def finish_result(params: EncoderParams, video: np.ndarray, delta: np.ndarray,
                  queries, cfg: AttackConfig, trace, partition=None,
                  index=None, candidate_id: int | None = None) -> AttackResult:
    """Assemble an AttackResult: final sims, optional success flags, budget check."""
    adversarial = video + delta
    final_cache = encode_frames(params, adversarial)
    pooled, degenerate = pool_rows(final_cache.emb)
    emb = VideoEmbedding(per_frame=final_cache.emb, pooled=pooled, pooled_degenerate=degenerate)
    final_sims = aggregate_sims(params, emb, queries, cfg.sim_mode)

    success_1 = success_5 = None
    if index is not None and candidate_id is not None:
        from .retrieval import rank_of

        swapped = index.replace(candidate_id, pooled)
        ranks = np.array([rank_of(swapped, params, q, candidate_id) for q in queries])
        success_1 = ranks <= 1
        success_5 = ranks <= 5

    result = AttackResult(
        delta=delta,
        adversarial=adversarial,
        loss_trace=trace,
        final_sims=final_sims,
        success_at_1=success_1,
        success_at_5=success_5,
        partition=partition,
    )
    result.check_budget(cfg)
    return result
