# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: bulk xoshiro256** fills and the fused frame-encoder
forward/backward. Contract documented in ``_numpy.py``; the two backends are
interchangeable (RNG bit-identical, encoder equal to float rounding)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt, tanh

cnp.import_array()

cdef double _EPS = 1e-12


cdef inline unsigned long long _rotl(unsigned long long x, int k) nogil:
    return (x << k) | (x >> (64 - k))


def xoshiro_fill(cnp.uint64_t[::1] state, cnp.uint64_t[::1] out):
    cdef unsigned long long s0 = state[0], s1 = state[1], s2 = state[2], s3 = state[3]
    cdef unsigned long long t
    cdef Py_ssize_t i, n = out.shape[0]
    with nogil:
        for i in range(n):
            out[i] = _rotl(s1 * 5ULL, 7) * 9ULL
            t = s1 << 17
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3


def encode_frames_fwd(double[:, ::1] w1, double[:, ::1] w2,
                      double[:, ::1] pixels, double input_scale):
    cdef Py_ssize_t T = pixels.shape[0], d_in = pixels.shape[1]
    cdef Py_ssize_t d_hid = w1.shape[0], d = w2.shape[0]
    emb_arr = np.zeros((T, d), dtype=np.float64)
    h_arr = np.empty((T, d_hid), dtype=np.float64)
    zn_arr = np.empty(T, dtype=np.float64)
    cdef double[:, ::1] emb = emb_arr, h = h_arr
    cdef double[::1] zn = zn_arr
    cdef double acc, nrm
    cdef Py_ssize_t t, i, j
    with nogil:
        for t in range(T):
            for i in range(d_hid):
                acc = 0.0
                for j in range(d_in):
                    acc += w1[i, j] * (input_scale * (pixels[t, j] - 0.5))
                h[t, i] = tanh(acc)
            nrm = 0.0
            for i in range(d):
                acc = 0.0
                for j in range(d_hid):
                    acc += w2[i, j] * h[t, j]
                emb[t, i] = acc
                nrm += acc * acc
            nrm = sqrt(nrm)
            zn[t] = nrm
            if nrm > _EPS:
                for i in range(d):
                    emb[t, i] /= nrm
            else:
                for i in range(d):
                    emb[t, i] = 0.0
    return emb_arr, h_arr, zn_arr


def encode_frames_bwd(double[:, ::1] w1, double[:, ::1] w2,
                      double[:, ::1] h, double[:, ::1] emb, double[::1] znorm,
                      double[:, ::1] upstream, double input_scale):
    cdef Py_ssize_t T = h.shape[0], d_hid = h.shape[1]
    cdef Py_ssize_t d = w2.shape[0], d_in = w1.shape[1]
    gx_arr = np.zeros((T, d_in), dtype=np.float64)
    gz_arr = np.empty(d, dtype=np.float64)
    gy_arr = np.empty(d_hid, dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] gz = gz_arr, gy = gy_arr
    cdef double dot, acc
    cdef Py_ssize_t t, i, j
    with nogil:
        for t in range(T):
            if znorm[t] <= _EPS:
                continue
            dot = 0.0
            for i in range(d):
                dot += upstream[t, i] * emb[t, i]
            for i in range(d):
                gz[i] = (upstream[t, i] - dot * emb[t, i]) / znorm[t]
            for i in range(d_hid):
                acc = 0.0
                for j in range(d):
                    acc += gz[j] * w2[j, i]
                gy[i] = (1.0 - h[t, i] * h[t, i]) * acc
            for j in range(d_in):
                acc = 0.0
                for i in range(d_hid):
                    acc += gy[i] * w1[i, j]
                gx[t, j] = input_scale * acc
    return gx_arr
