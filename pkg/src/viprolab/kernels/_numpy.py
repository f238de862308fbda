"""Pure-numpy implementations of the hot kernels.

Same contract as the compiled backend in ``_core.pyx``:

* ``xoshiro_fill`` — bulk xoshiro256** draws, bit-identical to the scalar
  generator in :mod:`viprolab.numerics` (integer algorithm, so the two
  backends agree exactly).
* ``encode_frames_fwd`` / ``encode_frames_bwd`` — batched frame-encoder
  forward pass and its exact input gradient. Floating point, so backends
  agree only to rounding (see tests/test_kernels.py).

Embeddings whose pre-normalization norm is <= 1e-12 are degenerate: the
forward pass emits a zero row and the backward pass a zero gradient row.
"""

import numpy as np

_MASK = (1 << 64) - 1
_EPS = 1e-12  # degenerate-norm threshold, shared with viprolab.numerics


def xoshiro_fill(state, out):
    """Fill ``out`` (uint64) from xoshiro256** state ``state`` (uint64[4]), advancing it."""
    s0, s1, s2, s3 = (int(v) for v in state)
    n = out.shape[0]
    vals = [0] * n
    for i in range(n):
        x = (s1 * 5) & _MASK
        vals[i] = ((((x << 7) | (x >> 57)) & _MASK) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK
    out[:] = np.array(vals, dtype=np.uint64)
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3


def encode_frames_fwd(w1, w2, pixels, input_scale):
    """Per-frame encoder forward: unit embedding rows plus backward caches.

    Returns ``(emb, h, znorm)`` with emb (T, d) unit rows (zero when
    degenerate), h (T, d_hid) the tanh activations, znorm (T,) the
    pre-normalization norms.
    """
    x = input_scale * (pixels - 0.5)
    h = np.tanh(x @ w1.T)
    z = h @ w2.T
    znorm = np.sqrt(np.einsum("td,td->t", z, z))
    emb = np.zeros_like(z)
    ok = znorm > _EPS
    emb[ok] = z[ok] / znorm[ok, None]
    return emb, h, znorm


def encode_frames_bwd(w1, w2, h, emb, znorm, upstream, input_scale):
    """Exact input gradient of the frame encoder.

    ``upstream`` is (T, d), the cotangent at the unit embeddings; returns
    the (T, D_in) pixel gradient. Degenerate frames get a zero row.
    """
    gz = np.zeros_like(upstream)
    ok = znorm > _EPS
    dots = np.einsum("td,td->t", upstream, emb)
    gz[ok] = (upstream[ok] - dots[ok, None] * emb[ok]) / znorm[ok, None]
    gh = gz @ w2
    gy = (1.0 - h * h) * gh
    return input_scale * (gy @ w1)
