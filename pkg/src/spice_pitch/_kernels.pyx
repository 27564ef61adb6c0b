# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_reference``.

Convolutions go through an explicit im2col buffer and a single BLAS gemm
(scipy's cython_blas), so there is one large matrix product per call instead
of numpy's strided-view copies and reshapes. Pooling and the CQT atom
projection are plain loops.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt
from cython cimport floating
from scipy.linalg.cython_blas cimport sgemm, dgemm

cnp.import_array()


cdef inline void _gemm_rowmajor(char ta, char tb, int m, int n, int k,
                                floating *a, int lda, floating *b, int ldb,
                                floating *c, int ldc) noexcept nogil:
    # row-major C[m,n] = op(A) @ op(B): call column-major gemm on the transposes
    cdef floating alpha = 1.0
    cdef floating beta = 0.0
    if floating is float:
        sgemm(&tb, &ta, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)
    else:
        dgemm(&tb, &ta, &n, &m, &k, &alpha, b, &ldb, a, &lda, &beta, c, &ldc)


cdef void _im2col(floating[:, :, ::1] x, floating[:, ::1] cols, int K, int stride, int pad, int out_w) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t b, j, c, k, src, row
    for b in range(B):
        for j in range(out_w):
            row = b * out_w + j
            for c in range(C):
                for k in range(K):
                    src = j * stride + k - pad
                    if 0 <= src < W:
                        cols[row, c * K + k] = x[b, c, src]
                    else:
                        cols[row, c * K + k] = 0


def conv1d_forward(floating[:, :, ::1] x, floating[:, :, ::1] w, int stride, int pad):
    cdef int B = x.shape[0], C = x.shape[1], W = x.shape[2]
    cdef int O = w.shape[0], K = w.shape[2]
    cdef int out_w = (W + 2 * pad - K) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    cdef floating[:, ::1] cols = np.empty((B * out_w, C * K), dtype=dtype)
    cdef floating[:, ::1] prod = np.empty((B * out_w, O), dtype=dtype)
    y_arr = np.empty((B, O, out_w), dtype=dtype)
    cdef floating[:, :, ::1] y = y_arr
    cdef Py_ssize_t b, j, o
    cdef int ck = C * K
    with nogil:
        _im2col(x, cols, K, stride, pad, out_w)
        # prod[B*out_w, O] = cols @ w2.T, w2 = w viewed as [O, C*K]
        _gemm_rowmajor(c'N', c'T', B * out_w, O, ck, &cols[0, 0], ck, &w[0, 0, 0], ck, &prod[0, 0], O)
        for b in range(B):
            for j in range(out_w):
                for o in range(O):
                    y[b, o, j] = prod[b * out_w + j, o]
    return y_arr


def conv1d_grad_weight(floating[:, :, ::1] gy, floating[:, :, ::1] x, int stride, int pad, int kernel):
    cdef int B = x.shape[0], C = x.shape[1]
    cdef int O = gy.shape[1], out_w = gy.shape[2]
    cdef int K = kernel, ck = C * kernel
    dtype = np.float32 if floating is float else np.float64
    cdef floating[:, ::1] cols = np.empty((B * out_w, ck), dtype=dtype)
    cdef floating[:, ::1] g2 = np.empty((B * out_w, O), dtype=dtype)
    gw_arr = np.empty((O, C, K), dtype=dtype)
    cdef floating[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t b, j, o
    with nogil:
        _im2col(x, cols, K, stride, pad, out_w)
        for b in range(B):
            for o in range(O):
                for j in range(out_w):
                    g2[b * out_w + j, o] = gy[b, o, j]
        # gw[O, CK] = g2.T @ cols
        _gemm_rowmajor(c'T', c'N', O, ck, B * out_w, &g2[0, 0], O, &cols[0, 0], ck, &gw[0, 0, 0], ck)
    return gw_arr


def conv1d_grad_input(floating[:, :, ::1] gy, floating[:, :, ::1] w, int stride, int pad, int width):
    cdef int B = gy.shape[0], O = gy.shape[1], out_w = gy.shape[2]
    cdef int C = w.shape[1], K = w.shape[2], ck = C * K
    dtype = np.float32 if floating is float else np.float64
    cdef floating[:, ::1] g2 = np.empty((B * out_w, O), dtype=dtype)
    cdef floating[:, ::1] dcols = np.empty((B * out_w, ck), dtype=dtype)
    gx_arr = np.zeros((B, C, width), dtype=dtype)
    cdef floating[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t b, j, o, c, k, dst, row
    with nogil:
        for b in range(B):
            for o in range(O):
                for j in range(out_w):
                    g2[b * out_w + j, o] = gy[b, o, j]
        # dcols[B*out_w, CK] = g2 @ w2
        _gemm_rowmajor(c'N', c'N', B * out_w, ck, O, &g2[0, 0], O, &w[0, 0, 0], ck, &dcols[0, 0], ck)
        for b in range(B):
            for j in range(out_w):
                row = b * out_w + j
                for c in range(C):
                    for k in range(K):
                        dst = j * stride + k - pad
                        if 0 <= dst < width:
                            gx[b, c, dst] += dcols[row, c * K + k]
    return gx_arr


def maxpool1d_forward(floating[:, :, ::1] x, int size, int stride, int out_w):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], W = x.shape[2]
    dtype = np.float32 if floating is float else np.float64
    y_arr = np.empty((B, C, out_w), dtype=dtype)
    idx_arr = np.empty((B, C, out_w), dtype=np.intp)
    cdef floating[:, :, ::1] y = y_arr
    cdef Py_ssize_t[:, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, c, j, i, start, stop, best
    cdef floating v
    with nogil:
        for b in range(B):
            for c in range(C):
                for j in range(out_w):
                    start = j * stride
                    stop = start + size
                    if stop > W:
                        stop = W
                    best = start
                    v = x[b, c, start]
                    for i in range(start + 1, stop):
                        if x[b, c, i] > v:
                            v = x[b, c, i]
                            best = i
                    y[b, c, j] = v
                    idx[b, c, j] = best
    return y_arr, idx_arr


def maxpool1d_backward(floating[:, :, ::1] gy, Py_ssize_t[:, :, ::1] idx, int width):
    cdef Py_ssize_t B = gy.shape[0], C = gy.shape[1], out_w = gy.shape[2]
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((B, C, width), dtype=dtype)
    cdef floating[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t b, c, j
    with nogil:
        for b in range(B):
            for c in range(C):
                for j in range(out_w):
                    gx[b, c, idx[b, c, j]] += gy[b, c, j]
    return gx_arr


def cqt_magnitudes(double[::1] padded, long[::1] starts, long[::1] lengths,
                   double[:, ::1] atoms_re, double[:, ::1] atoms_im, long[::1] centers):
    cdef Py_ssize_t T = centers.shape[0], F = lengths.shape[0]
    out_arr = np.empty((T, F), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, k, i, n, n4, base
    cdef double re0, re1, re2, re3, im0, im1, im2, im3, re, im, s
    cdef double *sig
    cdef double *ar
    cdef double *ai
    with nogil:
        for t in range(T):
            for k in range(F):
                n = lengths[k]
                n4 = n - n % 4
                sig = &padded[centers[t] - starts[k]]
                ar = &atoms_re[k, 0]
                ai = &atoms_im[k, 0]
                # four independent accumulators so the loop pipelines
                re0 = re1 = re2 = re3 = 0.0
                im0 = im1 = im2 = im3 = 0.0
                for i in range(0, n4, 4):
                    re0 = re0 + sig[i] * ar[i]
                    im0 = im0 + sig[i] * ai[i]
                    re1 = re1 + sig[i + 1] * ar[i + 1]
                    im1 = im1 + sig[i + 1] * ai[i + 1]
                    re2 = re2 + sig[i + 2] * ar[i + 2]
                    im2 = im2 + sig[i + 2] * ai[i + 2]
                    re3 = re3 + sig[i + 3] * ar[i + 3]
                    im3 = im3 + sig[i + 3] * ai[i + 3]
                re = (re0 + re1) + (re2 + re3)
                im = (im0 + im1) + (im2 + im3)
                for i in range(n4, n):
                    s = sig[i]
                    re = re + s * ar[i]
                    im = im + s * ai[i]
                out[t, k] = sqrt(re * re + im * im)
    return out_arr
