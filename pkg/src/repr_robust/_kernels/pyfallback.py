"""Numpy implementations of the hot kernels.

Selected at import time when the compiled extension is unavailable (or when
``REPR_ROBUST_KERNELS=python``).  Shapes follow the conventions of the
compiled twin exactly: images are (N, C, H, W), convolution is stride-1
cross-correlation with symmetric zero padding.
"""

import numpy as np

# fixed chunk sizes keep memory bounded and results independent of callers
_PAIR_CHUNK = 512


def conv2d_forward(x, w, pad):
    n, ci, h, wd = x.shape
    co, ci2, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    # win: (N, Ci, Ho, Wo, kh, kw)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_grad_input(gout, w, pad, h, wd):
    co, ci, kh, kw = w.shape
    wf = w[:, :, ::-1, ::-1]
    gp = np.pad(gout, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    win = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(2, 3))
    gx_pad = np.tensordot(win, wf, axes=([1, 4, 5], [0, 2, 3]))
    gx_pad = gx_pad.transpose(0, 3, 1, 2)
    if pad:
        gx_pad = gx_pad[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(gx_pad)


def conv2d_grad_weight(gout, x, pad, kh, kw):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    # sum over batch and output positions
    return np.tensordot(gout, win, axes=([0, 2, 3], [0, 2, 3]))


def avgpool2_forward(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avgpool2_backward(gout, h, w):
    g = np.repeat(np.repeat(gout, 2, axis=2), 2, axis=3)
    return 0.25 * g


def pairwise_l2(r):
    """Condensed (i < j, row-major) Euclidean distances between rows of r."""
    n = r.shape[0]
    out = np.empty(n * (n - 1) // 2, dtype=np.float64)
    pos = 0
    for i0 in range(0, n, _PAIR_CHUNK):
        block = r[i0:i0 + _PAIR_CHUNK]
        for i_off in range(block.shape[0]):
            i = i0 + i_off
            diff = r[i + 1:] - block[i_off]
            d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
            out[pos:pos + d.shape[0]] = d
            pos += d.shape[0]
    return out


def cross_l2(a, b):
    """Dense (len(a), len(b)) Euclidean distance matrix, computed directly."""
    n, m = a.shape[0], b.shape[0]
    out = np.empty((n, m), dtype=np.float64)
    for i0 in range(0, n, _PAIR_CHUNK):
        diff = a[i0:i0 + _PAIR_CHUNK, None, :] - b[None, :, :]
        out[i0:i0 + _PAIR_CHUNK] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out
