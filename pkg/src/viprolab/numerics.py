"""Dense float64 primitives, a deterministic cross-platform RNG, and a
finite-difference gradient oracle.

All similarity code treats vectors with L2 norm <= ``DEGENERATE_NORM`` as
degenerate: ``normalize`` returns them unchanged with a flag, and cosine
similarities involving them are defined as 0. That way an all-black frame
(whose encoding collapses to zero) can never crash or NaN an attack loop.
"""

from __future__ import annotations

import numpy as np

from . import kernels

DEGENERATE_NORM = 1e-12

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TWO53 = float(1 << 53)


def splitmix64_mix(z: int) -> int:
    """The splitmix64 output mix; used for seeding and stream derivation."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class SeededRng:
    """xoshiro256** seeded through splitmix64.

    Pure integer arithmetic, so the stream is bit-identical on every
    platform and across both kernel backends. Mutable single-owner state;
    never share an instance between concurrent workers — derive children
    with :meth:`derive` instead.
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        s = self.seed
        state = []
        for _ in range(4):
            s = (s + _GOLDEN) & _MASK
            state.append(splitmix64_mix(s))
        self._state = state

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._state
        x = (s1 * 5) & _MASK
        out = ((((x << 7) | (x >> 57)) & _MASK) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK
        self._state = [s0, s1, s2, s3]
        return out

    def u64(self, n: int) -> np.ndarray:
        """n raw draws as uint64, via the bulk kernel."""
        out = np.empty(n, dtype=np.uint64)
        state = np.array(self._state, dtype=np.uint64)
        kernels.xoshiro_fill(state, out)
        self._state = [int(v) for v in state]
        return out

    def uniform(self, size=None):
        """Float64 in [0, 1), 53-bit resolution."""
        n = 1 if size is None else int(np.prod(size))
        vals = (self.u64(n) >> np.uint64(11)).astype(np.float64) / _TWO53
        if size is None:
            return float(vals[0])
        return vals.reshape(size)

    def normal(self, size=None):
        """Standard normals via Box-Muller (pairs; trailing draw discarded)."""
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        u1 = ((self.u64(m) >> np.uint64(11)).astype(np.float64) + 1.0) / _TWO53  # (0, 1]
        u2 = (self.u64(m) >> np.uint64(11)).astype(np.float64) / _TWO53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        if size is None:
            return float(out[0])
        return out[:n].reshape(size)

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("upper bound must be positive")
        threshold = ((1 << 64) // n) * n
        while True:
            x = self.next_u64()
            if x < threshold:
                return x % n

    def shuffle(self, seq) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.below(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), in draw order."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct values from {n}")
        idx = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return np.array(idx[:k], dtype=np.int64)

    def derive(self, tag: int) -> "SeededRng":
        """Independent child stream; same (seed, tag) always gives the same child."""
        child = splitmix64_mix((self.seed + ((tag + 1) * _GOLDEN)) & _MASK)
        return SeededRng(child)


def mix_seeds(base: int, salt: int) -> int:
    """Stable 64-bit combination of two seeds (run-seed plumbing)."""
    return splitmix64_mix((base ^ ((salt + 1) * _GOLDEN)) & _MASK)


def normalize(v: np.ndarray) -> tuple[np.ndarray, bool]:
    """Unit-normalize, or return the zero vector with degenerate=True."""
    v = np.asarray(v, dtype=np.float64)
    nrm = float(np.linalg.norm(v))
    if nrm <= DEGENERATE_NORM:
        return np.zeros_like(v), True
    return v / nrm, False


def normalize_rows(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise :func:`normalize`; returns (matrix, degenerate mask)."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    degenerate = norms <= DEGENERATE_NORM
    out = np.zeros_like(m)
    ok = ~degenerate
    out[ok] = m[ok] / norms[ok, None]
    return out, degenerate


def cos_sim(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; 0 if either vector is degenerate."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu <= DEGENERATE_NORM or nv <= DEGENERATE_NORM:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def cos_sim_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities between the rows of a and b."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"inner dimension mismatch: {a.shape} vs {b.shape}")
    ua, _ = normalize_rows(a)
    ub, _ = normalize_rows(b)
    return ua @ ub.T


def finite_diff_grad(f, x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient of scalar f at x, step h per coordinate.

    The verification oracle for every hand-derived gradient; deliberately
    independent of the analytic paths it checks.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64)  # private copy; perturbed in place below
    flat = x.ravel()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)
