"""The planted victim: per-frame vision encoder, token text encoder,
mean-pool aggregation, cross-modal similarity, and exact input gradients.

A frame x in [0,1]^D_in is encoded as

    f = normalize(W2 @ tanh(W1 @ (input_scale * (x - 0.5))))

and a video is the unit-normalized mean of its frame embeddings (summed in
ascending frame order, always). Queries are unit-normalized means of token
embeddings. ``white`` similarity is the bilinear form q^T M v through the
planted interaction matrix; ``grey`` is plain cosine.

``plant_model`` builds encoder weights directly from a corpus generator so
retrieval works without any training: at rho=0 the encoder inverts the
generator's projection up to the tanh nonlinearity; rho adds relative
parameter noise, giving a family of increasingly divergent victims for the
transfer experiments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import DEGENERATE_NORM, SeededRng, normalize

SIM_MODES = ("white", "grey")


@dataclass(frozen=True)
class EncoderParams:
    """Planted weights of one victim model. Immutable and thread-shareable."""

    w1: np.ndarray  # (d_hid, D_in) frame encoder, first layer
    w2: np.ndarray  # (d, d_hid) frame encoder, second layer
    embed: np.ndarray  # (V, d) token embedding table
    interact: np.ndarray  # (d, d) symmetric white-box interaction
    input_scale: float  # pixel-to-signed mapping coefficient
    model_id: str
    seed: int = 0  # plant provenance
    rho: float = 0.0  # transfer-noise scale used at planting

    def __post_init__(self):
        d_hid, d_in = self.w1.shape
        d = self.w2.shape[0]
        if self.w2.shape[1] != d_hid:
            raise ValueError("w1/w2 hidden dimensions disagree")
        if self.embed.shape[1] != d or self.interact.shape != (d, d):
            raise ValueError("embedding/interaction dimensions disagree")
        if min(d, d_hid, d_in, self.embed.shape[0]) < 1:
            raise ValueError("all dimensions must be positive")
        for name in ("w1", "w2", "embed", "interact"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")
        if not np.allclose(self.interact, self.interact.T, atol=1e-9):
            raise ValueError("interaction matrix must be symmetric")

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    @property
    def d_hid(self) -> int:
        return self.w1.shape[0]

    @property
    def d(self) -> int:
        return self.w2.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.embed.shape[0]


@dataclass(frozen=True)
class VideoEmbedding:
    per_frame: np.ndarray  # (T, d), unit rows (zero where degenerate)
    pooled: np.ndarray  # (d,), unit (zero if degenerate)
    pooled_degenerate: bool


@dataclass(frozen=True)
class QueryEmbedding:
    per_token: np.ndarray  # (N_tok, d), unit rows
    pooled: np.ndarray  # (d,), unit (zero if degenerate)
    pooled_degenerate: bool


@dataclass(frozen=True)
class FrameCache:
    """Forward-pass caches needed for the exact backward pass."""

    emb: np.ndarray  # (T, d) unit frame embeddings
    h: np.ndarray  # (T, d_hid) tanh activations
    znorm: np.ndarray  # (T,) pre-normalization norms


def encode_frames(params: EncoderParams, video: np.ndarray) -> FrameCache:
    """Encode all frames of a (T, D_in) video, keeping backward caches."""
    video = np.ascontiguousarray(video, dtype=np.float64)
    if video.ndim != 2 or video.shape[1] != params.d_in:
        raise ValueError(f"video must be (T, {params.d_in}), got {video.shape}")
    emb, h, znorm = kernels.encode_frames_fwd(params.w1, params.w2, video, params.input_scale)
    return FrameCache(emb=emb, h=h, znorm=znorm)


def encode_frame(params: EncoderParams, frame: np.ndarray) -> np.ndarray:
    """Unit embedding of a single frame (zero vector if degenerate)."""
    cache = encode_frames(params, np.asarray(frame, dtype=np.float64)[None, :])
    return cache.emb[0]


def pool_rows(rows: np.ndarray) -> tuple[np.ndarray, bool]:
    """Mean of rows in ascending index order, then unit-normalized."""
    total = np.zeros(rows.shape[1])
    for i in range(rows.shape[0]):  # fixed summation order, see module docstring
        total += rows[i]
    return normalize(total / rows.shape[0])


def encode_video(params: EncoderParams, video: np.ndarray) -> VideoEmbedding:
    if len(video) < 1:
        raise ValueError("video needs at least one frame")
    cache = encode_frames(params, video)
    pooled, degenerate = pool_rows(cache.emb)
    return VideoEmbedding(per_frame=cache.emb, pooled=pooled, pooled_degenerate=degenerate)


def encode_query(params: EncoderParams, tokens) -> QueryEmbedding:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size < 1:
        raise ValueError("tokens must be a non-empty 1-D id sequence")
    if tokens.min() < 0 or tokens.max() >= params.vocab_size:
        raise ValueError(f"token id out of vocabulary (V={params.vocab_size})")
    rows = params.embed[tokens]
    norms = np.linalg.norm(rows, axis=1)
    per_token = np.zeros_like(rows)
    ok = norms > DEGENERATE_NORM
    per_token[ok] = rows[ok] / norms[ok, None]
    pooled, degenerate = pool_rows(per_token)
    return QueryEmbedding(per_token=per_token, pooled=pooled, pooled_degenerate=degenerate)


def similarity(params: EncoderParams, query: QueryEmbedding, v: np.ndarray, mode: str) -> float:
    """Cross-modal similarity between a query and a video-side vector.

    ``v`` may be the pooled video embedding or a single frame embedding;
    both are unit (or zero) by construction.
    """
    if mode == "white":
        return float(query.pooled @ params.interact @ v)
    if mode == "grey":
        nv = float(np.linalg.norm(v))
        if nv <= DEGENERATE_NORM or query.pooled_degenerate:
            return 0.0
        return float(query.pooled @ v / nv)
    raise ValueError(f"mode must be one of {SIM_MODES}, got {mode!r}")


def query_side_vector(params: EncoderParams, query: QueryEmbedding, mode: str) -> np.ndarray:
    """w such that similarity(q, v) = w . v for unit v; gradient helper."""
    if mode == "white":
        return params.interact @ query.pooled
    if mode == "grey":
        return query.pooled
    raise ValueError(f"mode must be one of {SIM_MODES}, got {mode!r}")


def grad_wrt_frames(
    params: EncoderParams,
    video: np.ndarray,
    upstream: np.ndarray,
    cache: FrameCache | None = None,
) -> np.ndarray:
    """Exact pixel gradient given per-frame cotangents (T, d) -> (T, D_in).

    Chain rule through normalize, linear, tanh, and the affine pixel
    mapping, each frame independently (block-diagonal Jacobian in frames).
    """
    if cache is None:
        cache = encode_frames(params, video)
    upstream = np.ascontiguousarray(upstream, dtype=np.float64)
    if upstream.shape != cache.emb.shape:
        raise ValueError(f"upstream must be {cache.emb.shape}, got {upstream.shape}")
    if not np.all(np.isfinite(upstream)):
        raise ValueError("upstream contains non-finite values")
    return kernels.encode_frames_bwd(
        params.w1, params.w2, cache.h, cache.emb, cache.znorm, upstream, params.input_scale
    )


def plant_model(gen, seed: int, rho: float, d_hid: int = 64, signal_scale: float | None = None) -> EncoderParams:
    """Construct a victim aligned with a corpus generator.

    ``gen`` supplies the generator matrix ``g`` (D_in, d) and the vocab
    table ``vocab`` (V, d). rho >= 0 adds relative parameter noise drawn
    from SeededRng(seed); rho=0 reproduces the reference model for that
    seed exactly.
    """
    if rho < 0:
        raise ValueError("rho must be >= 0")
    g = np.asarray(gen.g, dtype=np.float64)
    vocab = np.asarray(gen.vocab, dtype=np.float64)
    d_in, d = g.shape
    if signal_scale is None:
        signal_scale = d_in / 4.0
    rng = SeededRng(seed)

    # Row-orthonormal random extension: w2_0 @ w2_0.T = I_d, so the encoder
    # output recovers the d-dimensional latent that w1_0 lifts to d_hid dims.
    raw = rng.normal((d_hid, d))
    q_mat, r_mat = np.linalg.qr(raw)
    q_mat = q_mat * np.sign(np.diag(r_mat))  # fix QR sign ambiguity
    w2_0 = q_mat.T
    w1_0 = (signal_scale / d_in) * (w2_0.T @ g.T)

    a = rng.normal((d, d))
    interact = np.eye(d) + 0.1 * (a + a.T) / 2.0

    def noisy(base: np.ndarray) -> np.ndarray:
        noise = rng.normal(base.shape)  # drawn even at rho=0 to keep stream alignment
        if rho == 0.0:
            return base
        return base + rho * float(np.sqrt(np.mean(base**2))) * noise

    w1 = noisy(w1_0)
    w2 = noisy(w2_0)
    embed = noisy(vocab)

    return EncoderParams(
        w1=np.ascontiguousarray(w1),
        w2=np.ascontiguousarray(w2),
        embed=np.ascontiguousarray(embed),
        interact=interact,
        input_scale=2.0,
        model_id=f"planted-seed{seed}-rho{rho:g}",
        seed=seed,
        rho=rho,
    )


def save_model(params: EncoderParams, path) -> None:
    """JSON round-trip with full float64 precision (repr-based decimals)."""
    doc = {
        "model_id": params.model_id,
        "seed": params.seed,
        "rho": params.rho,
        "dims": {
            "d_in": params.d_in,
            "d_hid": params.d_hid,
            "d": params.d,
            "vocab": params.vocab_size,
        },
        "input_scale": params.input_scale,
        "w1": params.w1.tolist(),
        "w2": params.w2.tolist(),
        "embed": params.embed.tolist(),
        "interact": params.interact.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> EncoderParams:
    with open(path) as fh:
        doc = json.load(fh)
    return EncoderParams(
        w1=np.array(doc["w1"], dtype=np.float64),
        w2=np.array(doc["w2"], dtype=np.float64),
        embed=np.array(doc["embed"], dtype=np.float64),
        interact=np.array(doc["interact"], dtype=np.float64),
        input_scale=float(doc["input_scale"]),
        model_id=doc["model_id"],
        seed=int(doc["seed"]),
        rho=float(doc["rho"]),
    )
