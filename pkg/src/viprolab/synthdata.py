"""Deterministic synthetic corpus: scene-structured videos, paired token
captions, balanced categories, and the attacker's query-harvesting protocol.

Each video i carries a hidden unit latent z_i near its category centroid.
Frames are grouped into contiguous equal scene blocks (remainder absorbed by
the last scene); each scene re-draws a perturbed latent, projects it through
the shared generator matrix into pixel space around mid-grey, adds pixel
noise, and clamps to [0,1]. The projection gain is calibrated per corpus so
>= 99% of pre-clamp values land in [0.05, 0.95]. Captions are the ids of
the vocab rows nearest to noisy copies of z_i, so text and video share
latent structure without any natural language.

The whole corpus is a pure function of its DatasetSpec: one RNG stream,
consumed in a fixed documented order (vocab, generator, centroids,
categories, latents, scene latents, pixel noise, captions).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import EncoderParams, encode_query
from .numerics import SeededRng, normalize_rows


@dataclass(frozen=True)
class DatasetSpec:
    n_pairs: int = 256
    t_frames: int = 12
    n_scenes: int = 3
    d: int = 16
    d_in: int = 768
    vocab_size: int = 512
    n_categories: int = 8
    n_tokens: int = 4
    sigma_scene: float = 0.35
    sigma_token: float = 0.25
    sigma_pixel: float = 0.02
    seed: int = 42

    def __post_init__(self):
        if self.n_scenes > self.t_frames:
            raise ValueError("n_scenes must be <= t_frames")
        if min(self.n_pairs, self.t_frames, self.n_scenes, self.d, self.d_in,
               self.vocab_size, self.n_categories, self.n_tokens) < 1:
            raise ValueError("all sizes must be positive")
        if min(self.sigma_scene, self.sigma_token, self.sigma_pixel) < 0:
            raise ValueError("noise scales must be >= 0")


@dataclass(frozen=True)
class GeneratorParams:
    """Hidden ground truth shared by corpus and planted models."""

    g: np.ndarray  # (D_in, d), orthonormal columns
    vocab: np.ndarray  # (V, d), unit rows
    centroids: np.ndarray  # (n_categories, d), unit rows


@dataclass(frozen=True)
class Corpus:
    spec: DatasetSpec
    videos: np.ndarray  # (n, T, D_in) in [0, 1]
    captions: np.ndarray  # (n, n_tokens) token ids
    categories: np.ndarray  # (n,) category ids
    latents: np.ndarray  # (n, d) hidden unit latents
    generator: GeneratorParams
    pixel_gain: float  # calibrated projection gain
    clamp_fraction: float  # fraction of pixels touched by the [0,1] clamp

    @property
    def n(self) -> int:
        return self.videos.shape[0]


def scene_bounds(t_frames: int, n_scenes: int) -> list[tuple[int, int]]:
    """Contiguous equal scene blocks; the last absorbs the remainder."""
    block = t_frames // n_scenes
    bounds = [(s * block, (s + 1) * block) for s in range(n_scenes - 1)]
    bounds.append(((n_scenes - 1) * block, t_frames))
    return bounds


def _nearest_tokens(vocab: np.ndarray, direction: np.ndarray, k: int) -> np.ndarray:
    """ids of the k vocab rows with highest cosine to direction (ties: low id)."""
    sims = vocab @ direction
    order = np.argsort(-sims, kind="stable")
    return order[:k].astype(np.int64)


def generate_corpus(spec: DatasetSpec) -> Corpus:
    rng = SeededRng(spec.seed)

    vocab, _ = normalize_rows(rng.normal((spec.vocab_size, spec.d)))

    raw_g = rng.normal((spec.d_in, spec.d))
    q_mat, r_mat = np.linalg.qr(raw_g)
    g = q_mat * np.sign(np.diag(r_mat))

    # Centroids must induce distinct category token sets; redraw on collision.
    for _ in range(100):
        centroids, _ = normalize_rows(rng.normal((spec.n_categories, spec.d)))
        token_sets = [
            tuple(_nearest_tokens(vocab, centroids[c], spec.n_tokens))
            for c in range(spec.n_categories)
        ]
        if len(set(token_sets)) == spec.n_categories:
            break
    else:
        raise RuntimeError("could not draw distinct category token sets")

    categories = np.array([i % spec.n_categories for i in range(spec.n_pairs)], dtype=np.int64)
    cat_list = categories.tolist()
    rng.shuffle(cat_list)
    categories = np.array(cat_list, dtype=np.int64)

    latents, _ = normalize_rows(centroids[categories] + 0.5 * rng.normal((spec.n_pairs, spec.d)))

    scene_draws = rng.normal((spec.n_pairs, spec.n_scenes, spec.d))
    scene_latents = np.empty_like(scene_draws)
    for s in range(spec.n_scenes):
        scene_latents[:, s], _ = normalize_rows(latents + spec.sigma_scene * scene_draws[:, s])

    pixel_noise = rng.normal((spec.n_pairs, spec.t_frames, spec.d_in))

    caption_draws = rng.normal((spec.n_pairs, spec.n_tokens, spec.d))
    captions = np.empty((spec.n_pairs, spec.n_tokens), dtype=np.int64)
    for i in range(spec.n_pairs):
        for j in range(spec.n_tokens):
            direction, _ = normalize_rows((latents[i] + spec.sigma_token * caption_draws[i, j])[None, :])
            captions[i, j] = _nearest_tokens(vocab, direction[0], 1)[0]

    # Per-frame pixel signal from the owning scene's latent.
    bounds = scene_bounds(spec.t_frames, spec.n_scenes)
    signal = np.empty((spec.n_pairs, spec.t_frames, spec.d_in))
    for s, (lo, hi) in enumerate(bounds):
        signal[:, lo:hi] = (scene_latents[:, s] @ g.T)[:, None, :]

    noise = spec.sigma_pixel * pixel_noise
    gain = _calibrate_gain(signal, noise)
    pre_clamp = 0.5 + gain * signal + noise
    videos = np.clip(pre_clamp, 0.0, 1.0)
    clamp_fraction = float(np.mean((pre_clamp < 0.0) | (pre_clamp > 1.0)))

    return Corpus(
        spec=spec,
        videos=videos,
        captions=captions,
        categories=categories,
        latents=latents,
        generator=GeneratorParams(g=g, vocab=vocab, centroids=centroids),
        pixel_gain=gain,
        clamp_fraction=clamp_fraction,
    )


def _calibrate_gain(signal: np.ndarray, noise: np.ndarray) -> float:
    """Largest gain a with |a*signal + noise| <= 0.45 for >= 99% of pixels.

    Solved exactly: per pixel the max admissible a is known in closed form,
    and the 1% lower quantile of those bounds is the answer.
    """
    s = signal.ravel()
    c = noise.ravel()
    upper = np.full(s.shape, np.inf)
    nz = np.abs(s) > 0
    t1 = (0.45 - c[nz]) / s[nz]
    t2 = (-0.45 - c[nz]) / s[nz]
    upper[nz] = np.maximum(t1, t2)
    upper[np.abs(c) > 0.45] = 0.0
    gain = float(np.quantile(upper, 0.01))
    if not np.isfinite(gain) or gain <= 0:
        raise RuntimeError("gain calibration failed; noise scales too large")
    return gain


def category_query(corpus: Corpus, category_id: int) -> np.ndarray:
    """Token ids nearest the category centroid (the black-box tier's query)."""
    if not 0 <= category_id < corpus.spec.n_categories:
        raise ValueError(f"category {category_id} out of range")
    return _nearest_tokens(
        corpus.generator.vocab, corpus.generator.centroids[category_id], corpus.spec.n_tokens
    )


@dataclass(frozen=True)
class HarvestResult:
    """Outcome of the candidate-wise query harvest.

    ``n_kept < requested`` means the corpus could not supply enough
    qualifying captions; the caller decides whether to proceed.
    """

    train: list = field(default_factory=list)  # (source video id, token ids) pairs
    test: list = field(default_factory=list)
    n_kept: int = 0
    requested: int = 0

    @property
    def short(self) -> bool:
        return self.n_kept < self.requested


def harvest_queries(params: EncoderParams, corpus: Corpus, candidate_id: int, k: int,
                    index=None, qualify_rank: int = 20) -> HarvestResult:
    """Candidate-wise sortation of target queries.

    Ranks the corpus by the candidate's own caption, walks the ranked
    videos' captions in order, and keeps each caption iff re-querying with
    it places the candidate within ``qualify_rank``; continues past the
    first k until k captions qualify or the corpus is exhausted. The kept
    set is shuffled with a corpus-seed-derived stream and split evenly into
    train/test halves.
    """
    from .retrieval import build_index, rank

    if k % 2 != 0:
        raise ValueError("k must be even (even train/test split)")
    if k > corpus.n:
        raise ValueError("k exceeds available captions")
    if index is None:
        index = build_index(params, corpus)

    own = encode_query(params, corpus.captions[candidate_id])
    ranked = rank(index, params, own, corpus.n)

    kept = []
    for vid in ranked:
        query = encode_query(params, corpus.captions[vid])
        order = rank(index, params, query, min(qualify_rank, corpus.n))
        if candidate_id in order:
            kept.append((int(vid), corpus.captions[vid].copy()))
        if len(kept) >= k:
            break

    shuffler = SeededRng(corpus.spec.seed).derive(candidate_id)
    shuffler.shuffle(kept)
    half = len(kept) // 2
    return HarvestResult(train=kept[:half], test=kept[half:], n_kept=len(kept), requested=k)


def save_corpus(corpus: Corpus, videos_path, sidecar_path) -> None:
    """JSON-lines video records plus a generator sidecar; exact round-trip."""
    with open(videos_path, "w") as fh:
        for i in range(corpus.n):
            rec = {
                "id": i,
                "category": int(corpus.categories[i]),
                "caption_ids": corpus.captions[i].tolist(),
                "frames": corpus.videos[i].ravel().tolist(),
            }
            fh.write(json.dumps(rec) + "\n")
    sidecar = {
        "spec": asdict(corpus.spec),
        "g": corpus.generator.g.tolist(),
        "vocab": corpus.generator.vocab.tolist(),
        "centroids": corpus.generator.centroids.tolist(),
        "latents": corpus.latents.tolist(),
        "pixel_gain": corpus.pixel_gain,
        "clamp_fraction": corpus.clamp_fraction,
    }
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh)


def load_corpus(videos_path, sidecar_path) -> Corpus:
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    spec = DatasetSpec(**sidecar["spec"])
    videos = np.empty((spec.n_pairs, spec.t_frames, spec.d_in))
    captions = np.empty((spec.n_pairs, spec.n_tokens), dtype=np.int64)
    categories = np.empty(spec.n_pairs, dtype=np.int64)
    with open(videos_path) as fh:
        for line in fh:
            rec = json.loads(line)
            i = rec["id"]
            videos[i] = np.array(rec["frames"]).reshape(spec.t_frames, spec.d_in)
            captions[i] = rec["caption_ids"]
            categories[i] = rec["category"]
    return Corpus(
        spec=spec,
        videos=videos,
        captions=captions,
        categories=categories,
        latents=np.array(sidecar["latents"]),
        generator=GeneratorParams(
            g=np.array(sidecar["g"]),
            vocab=np.array(sidecar["vocab"]),
            centroids=np.array(sidecar["centroids"]),
        ),
        pixel_gain=float(sidecar["pixel_gain"]),
        clamp_fraction=float(sidecar["clamp_fraction"]),
    )
