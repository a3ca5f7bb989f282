# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the inner loops: stride-1 zero-padded convolution
(forward and both gradients), 2x average pooling, and pairwise Euclidean
distances.  Small desk-scale images make direct loops competitive with
im2col because no intermediate buffers are materialized."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def conv2d_forward(cnp.ndarray[double, ndim=4] x,
                   cnp.ndarray[double, ndim=4] w,
                   int pad):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = h + 2 * pad - kh + 1, wo = wd + 2 * pad - kw + 1
    out_arr = np.zeros((n, co, ho, wo), dtype=np.float64)
    cdef double[:, :, :, :] out = out_arr
    cdef double[:, :, :, :] xv = x
    cdef double[:, :, :, :] wv = w
    cdef Py_ssize_t b, o, c, i, j, u, v, hi, wi
    cdef double acc
    for b in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(ci):
                        for u in range(kh):
                            hi = i + u - pad
                            if hi < 0 or hi >= h:
                                continue
                            for v in range(kw):
                                wi = j + v - pad
                                if wi < 0 or wi >= wd:
                                    continue
                                acc += xv[b, c, hi, wi] * wv[o, c, u, v]
                    out[b, o, i, j] = acc
    return out_arr


def conv2d_grad_input(cnp.ndarray[double, ndim=4] gout,
                      cnp.ndarray[double, ndim=4] w,
                      int pad, int h, int wd):
    cdef Py_ssize_t n = gout.shape[0], co = gout.shape[1]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    cdef Py_ssize_t ci = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    gx_arr = np.zeros((n, ci, h, wd), dtype=np.float64)
    cdef double[:, :, :, :] gx = gx_arr
    cdef double[:, :, :, :] gv = gout
    cdef double[:, :, :, :] wv = w
    cdef Py_ssize_t b, o, c, i, j, u, v, hi, wi
    cdef double g
    for b in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    g = gv[b, o, i, j]
                    if g == 0.0:
                        continue
                    for c in range(ci):
                        for u in range(kh):
                            hi = i + u - pad
                            if hi < 0 or hi >= h:
                                continue
                            for v in range(kw):
                                wi = j + v - pad
                                if wi < 0 or wi >= wd:
                                    continue
                                gx[b, c, hi, wi] += g * wv[o, c, u, v]
    return gx_arr


def conv2d_grad_weight(cnp.ndarray[double, ndim=4] gout,
                       cnp.ndarray[double, ndim=4] x,
                       int pad, int kh, int kw):
    cdef Py_ssize_t n = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t co = gout.shape[1], ho = gout.shape[2], wo = gout.shape[3]
    gw_arr = np.zeros((co, ci, kh, kw), dtype=np.float64)
    cdef double[:, :, :, :] gw = gw_arr
    cdef double[:, :, :, :] gv = gout
    cdef double[:, :, :, :] xv = x
    cdef Py_ssize_t b, o, c, i, j, u, v, hi, wi
    cdef double g
    for b in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    g = gv[b, o, i, j]
                    if g == 0.0:
                        continue
                    for c in range(ci):
                        for u in range(kh):
                            hi = i + u - pad
                            if hi < 0 or hi >= h:
                                continue
                            for v in range(kw):
                                wi = j + v - pad
                                if wi < 0 or wi >= wd:
                                    continue
                                gw[o, c, u, v] += g * xv[b, c, hi, wi]
    return gw_arr


def avgpool2_forward(cnp.ndarray[double, ndim=4] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    out_arr = np.empty((n, c, ho, wo), dtype=np.float64)
    cdef double[:, :, :, :] out = out_arr
    cdef double[:, :, :, :] xv = x
    cdef Py_ssize_t b, k, i, j
    for b in range(n):
        for k in range(c):
            for i in range(ho):
                for j in range(wo):
                    out[b, k, i, j] = 0.25 * (
                        xv[b, k, 2 * i, 2 * j] + xv[b, k, 2 * i, 2 * j + 1]
                        + xv[b, k, 2 * i + 1, 2 * j] + xv[b, k, 2 * i + 1, 2 * j + 1])
    return out_arr


def avgpool2_backward(cnp.ndarray[double, ndim=4] gout, int h, int w):
    cdef Py_ssize_t n = gout.shape[0], c = gout.shape[1]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    gx_arr = np.empty((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, :] gx = gx_arr
    cdef double[:, :, :, :] gv = gout
    cdef Py_ssize_t b, k, i, j
    cdef double g
    for b in range(n):
        for k in range(c):
            for i in range(ho):
                for j in range(wo):
                    g = 0.25 * gv[b, k, i, j]
                    gx[b, k, 2 * i, 2 * j] = g
                    gx[b, k, 2 * i, 2 * j + 1] = g
                    gx[b, k, 2 * i + 1, 2 * j] = g
                    gx[b, k, 2 * i + 1, 2 * j + 1] = g
    return gx_arr


def pairwise_l2(cnp.ndarray[double, ndim=2] r):
    cdef Py_ssize_t n = r.shape[0], d = r.shape[1]
    out_arr = np.empty(n * (n - 1) // 2, dtype=np.float64)
    cdef double[:] out = out_arr
    cdef double[:, :] rv = r
    cdef Py_ssize_t i, j, k, pos = 0
    cdef double acc, diff
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            for k in range(d):
                diff = rv[i, k] - rv[j, k]
                acc += diff * diff
            out[pos] = sqrt(acc)
            pos += 1
    return out_arr


def cross_l2(cnp.ndarray[double, ndim=2] a, cnp.ndarray[double, ndim=2] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, :] out = out_arr
    cdef double[:, :] av = a
    cdef double[:, :] bv = b
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = av[i, k] - bv[j, k]
                acc += diff * diff
            out[i, j] = sqrt(acc)
    return out_arr
