# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled LSTM recurrence and edit-distance kernels.

Same signatures and in-place contract as ``_pykernels``. Matrix products go
through the BLAS that scipy links against.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, exp
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _sig(double z) noexcept nogil:
    return 0.5 * (tanh(0.5 * z) + 1.0)


cdef void _gemm(char ta, char tb, int M, int N, int K, double alpha,
                double* A, int lda, double* B, int ldb,
                double beta, double* C, int ldc) noexcept nogil:
    # row-major C = alpha * op(A) @ op(B) + beta * C, via column-major BLAS
    dgemm(&tb, &ta, &N, &M, &K, &alpha, B, &ldb, A, &lda, &beta, C, &ldc)


def layer_forward(double[:, :, ::1] XW, double[:, ::1] Wh, P,
                  double[:, :, ::1] H, double[:, :, ::1] C, double[:, :, ::1] G):
    cdef int T = XW.shape[0]
    cdef int B = XW.shape[1]
    cdef int m = Wh.shape[1]
    cdef int m4 = 4 * m
    cdef bint peep = P is not None
    cdef double[:, ::1] Pv
    cdef double* pp = NULL
    if peep:
        Pv = P
        pp = &Pv[0, 0]
    cdef double[:, ::1] Z = np.empty((B, m4))
    cdef double* z = &Z[0, 0]
    cdef int t, b, j
    cdef double f, i, g, o, c
    with nogil:
        for t in range(T):
            for b in range(B):
                for j in range(m4):
                    Z[b, j] = XW[t, b, j]
            _gemm(b'N', b'T', B, m4, m, 1.0, &H[t, 0, 0], m, &Wh[0, 0], m, 1.0, z, m4)
            if peep:
                _gemm(b'N', b'T', B, 2 * m, m, 1.0, &C[t, 0, 0], m, pp, m, 1.0, z, m4)
            for b in range(B):
                for j in range(m):
                    f = _sig(Z[b, j])
                    i = _sig(Z[b, m + j])
                    g = tanh(Z[b, 2 * m + j])
                    C[t + 1, b, j] = f * C[t, b, j] + i * g
                    G[t, b, j] = f
                    G[t, b, m + j] = i
                    G[t, b, 2 * m + j] = g
            if peep:
                _gemm(b'N', b'T', B, m, m, 1.0, &C[t + 1, 0, 0], m, pp + 2 * m * m, m,
                      1.0, z + 3 * m, m4)
            for b in range(B):
                for j in range(m):
                    o = _sig(Z[b, 3 * m + j])
                    G[t, b, 3 * m + j] = o
                    H[t + 1, b, j] = o * tanh(C[t + 1, b, j])


def layer_backward(double[:, :, ::1] dH, double[:, ::1] Wh, P,
                   double[:, :, ::1] H, double[:, :, ::1] C, double[:, :, ::1] G,
                   double[:, :, ::1] dZ):
    cdef int T = dH.shape[0]
    cdef int B = dH.shape[1]
    cdef int m = dH.shape[2]
    cdef int m4 = 4 * m
    cdef bint peep = P is not None
    cdef double[:, ::1] Pv
    cdef double* pp = NULL
    if peep:
        Pv = P
        pp = &Pv[0, 0]
    cdef double[:, ::1] dh_next = np.zeros((B, m))
    cdef double[:, ::1] dc_next = np.zeros((B, m))
    cdef double[:, ::1] dc = np.empty((B, m))
    cdef int t, b, j
    cdef double f, i, g, o, tc, dh, cp, d
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(m):
                    o = G[t, b, 3 * m + j]
                    dh = dH[t, b, j] + dh_next[b, j]
                    tc = tanh(C[t + 1, b, j])
                    dZ[t, b, 3 * m + j] = dh * tc * o * (1.0 - o)
                    dc[b, j] = dh * o * (1.0 - tc * tc) + dc_next[b, j]
            if peep:
                _gemm(b'N', b'N', B, m, m, 1.0, &dZ[t, 0, 3 * m], m4, pp + 2 * m * m, m,
                      1.0, &dc[0, 0], m)
            for b in range(B):
                for j in range(m):
                    f = G[t, b, j]
                    i = G[t, b, m + j]
                    g = G[t, b, 2 * m + j]
                    cp = C[t, b, j]
                    d = dc[b, j]
                    dZ[t, b, j] = d * cp * f * (1.0 - f)
                    dZ[t, b, m + j] = d * g * i * (1.0 - i)
                    dZ[t, b, 2 * m + j] = d * i * (1.0 - g * g)
                    dc_next[b, j] = d * f
            if peep:
                _gemm(b'N', b'N', B, m, 2 * m, 1.0, &dZ[t, 0, 0], m4, pp, m,
                      1.0, &dc_next[0, 0], m)
            _gemm(b'N', b'N', B, m, m4, 1.0, &dZ[t, 0, 0], m4, &Wh[0, 0], m,
                  0.0, &dh_next[0, 0], m)


def osa_distance(const cnp.int64_t[::1] a, const cnp.int64_t[::1] b):
    """Optimal-string-alignment edit distance between two integer sequences."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t k = b.shape[0]
    if n == 0:
        return k
    if k == 0:
        return n
    cdef Py_ssize_t w = k + 1
    cdef long* d = <long*> malloc((n + 1) * w * sizeof(long))
    if d == NULL:
        raise MemoryError()
    cdef Py_ssize_t x, y
    cdef long v, cost, res
    with nogil:
        for y in range(w):
            d[y] = y
        for x in range(1, n + 1):
            d[x * w] = x
            for y in range(1, k + 1):
                cost = 0 if a[x - 1] == b[y - 1] else 1
                v = d[(x - 1) * w + y] + 1
                if d[x * w + y - 1] + 1 < v:
                    v = d[x * w + y - 1] + 1
                if d[(x - 1) * w + y - 1] + cost < v:
                    v = d[(x - 1) * w + y - 1] + cost
                if x > 1 and y > 1 and a[x - 1] == b[y - 2] and a[x - 2] == b[y - 1]:
                    if d[(x - 2) * w + y - 2] + 1 < v:
                        v = d[(x - 2) * w + y - 2] + 1
                d[x * w + y] = v
        res = d[n * w + k]
    free(d)
    return res
