"""Divergences on representation space.

Four kinds: ``l2``, ``linf``, ``cosine-distance`` and ``kl-softmax``.  All
are non-negative and vanish on identical representations; the first three
are symmetric, ``kl-softmax`` is not (the live argument supplies the
reference distribution).  ``kl-softmax`` embeds representation vectors as
softmax distributions at a temperature, which keeps it differentiable for
deterministic encoders.

Three evaluation forms are provided: plain floats for measurements, tape
graphs for attack gradients, and vectorized batch/pairwise routines for the
large distance matrices behind the empirical divergence distributions.
"""

import numpy as np

from . import _kernels
from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DomainError, ShapeError

KINDS = ("l2", "linf", "cosine-distance", "kl-softmax")
SYMMETRIC = ("l2", "linf", "cosine-distance")

_CHUNK = 256


def validate_kind(kind):
    if kind not in KINDS:
        raise ConfigError(f"unknown divergence kind {kind!r}; choose from {KINDS}")


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_pair(kind, r, rp):
    if r.shape != rp.shape or r.ndim != 1:
        raise ShapeError(f"divergence[{kind}]", r.shape, rp.shape)
    if kind == "cosine-distance":
        if np.linalg.norm(r) < 1e-12 or np.linalg.norm(rp) < 1e-12:
            raise DomainError("cosine-distance is undefined for zero vectors")


def divergence(kind, r, rp, temperature=1.0):
    """d(r, r') as a plain non-negative float."""
    validate_kind(kind)
    r = np.asarray(r, dtype=np.float64)
    rp = np.asarray(rp, dtype=np.float64)
    _check_pair(kind, r, rp)
    if kind == "l2":
        return float(np.sqrt(np.sum((r - rp) ** 2)))
    if kind == "linf":
        return float(np.max(np.abs(r - rp)))
    if kind == "cosine-distance":
        cos = np.dot(r, rp) / (np.linalg.norm(r) * np.linalg.norm(rp))
        return float(max(0.0, 1.0 - cos))
    p = _softmax(r / temperature)
    q = _softmax(rp / temperature)
    return float(max(0.0, np.sum(p * (np.log(p) - np.log(q)))))


def divergence_graph(kind, live, anchor, temperature=1.0):
    """Scalar divergence tensor d(live, anchor) with gradients to ``live``.

    ``anchor`` is treated as a constant; detach it from any graph first.
    """
    validate_kind(kind)
    if isinstance(anchor, Tensor):
        anchor = anchor.data
    anchor = np.asarray(anchor, dtype=np.float64)
    _check_pair(kind, live.data, anchor)
    a = Tensor(anchor)
    if kind == "l2":
        diff = ad.sub(live, a)
        return ad.sqrt(ad.tsum(ad.mul(diff, diff)))
    if kind == "linf":
        return ad.amax(ad.absolute(ad.sub(live, a)))
    if kind == "cosine-distance":
        denom = ad.mul(ad.sqrt(ad.dot(live, live)), ad.sqrt(ad.dot(a, a)))
        cos = ad.mul(ad.dot(live, a), ad.reciprocal(denom))
        return ad.sub(Tensor(1.0), cos)
    p = ad.softmax_last(ad.mul(live, Tensor(1.0 / temperature)))
    log_q = Tensor(np.log(_softmax(anchor / temperature)))
    return ad.tsum(ad.mul(p, ad.sub(ad.log(p), log_q)))


def batch_divergence_graph(kind, live, anchors, temperature=1.0):
    """Row-wise divergences d(live_i, anchors_i) as an (N,) tensor."""
    validate_kind(kind)
    if isinstance(anchors, Tensor):
        anchors = anchors.data
    anchors = np.asarray(anchors, dtype=np.float64)
    if live.data.shape != anchors.shape or live.data.ndim != 2:
        raise ShapeError(f"divergence[{kind}]", live.data.shape, anchors.shape)
    a = Tensor(anchors)
    if kind == "l2":
        diff = ad.sub(live, a)
        return ad.sqrt(ad.sum_last(ad.mul(diff, diff)))
    if kind == "linf":
        return ad.max_last(ad.absolute(ad.sub(live, a)))
    if kind == "cosine-distance":
        norms = np.linalg.norm(anchors, axis=-1)
        if np.any(norms < 1e-12):
            raise DomainError("cosine-distance is undefined for zero vectors")
        live_norm = ad.sqrt(ad.sum_last(ad.mul(live, live)))
        denom = ad.mul(live_norm, Tensor(norms))
        cos = ad.mul(ad.sum_last(ad.mul(live, a)), ad.reciprocal(denom))
        return ad.sub(Tensor(np.ones(len(norms))), cos)
    p = ad.softmax_last(ad.mul(live, Tensor(1.0 / temperature)))
    log_q = Tensor(np.log(_softmax(anchors / temperature)))
    return ad.sum_last(ad.mul(p, ad.sub(ad.log(p), log_q)))


def batch_divergence(kind, a, b, temperature=1.0):
    """Row-wise divergences of two equal-shape (N, d) arrays."""
    validate_kind(kind)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"divergence[{kind}]", a.shape, b.shape)
    if kind == "l2":
        d = a - b
        return np.sqrt(np.einsum("ij,ij->i", d, d))
    if kind == "linf":
        return np.abs(a - b).max(axis=-1)
    if kind == "cosine-distance":
        na = np.linalg.norm(a, axis=-1)
        nb = np.linalg.norm(b, axis=-1)
        if np.any(na < 1e-12) or np.any(nb < 1e-12):
            raise DomainError("cosine-distance is undefined for zero vectors")
        cos = np.einsum("ij,ij->i", a, b) / (na * nb)
        return np.maximum(0.0, 1.0 - cos)
    p = _softmax(a / temperature)
    q = _softmax(b / temperature)
    return np.maximum(0.0, np.sum(p * (np.log(p) - np.log(q)), axis=-1))


def cross_divergence(kind, a, b, temperature=1.0):
    """Dense (len(a), len(b)) divergence matrix, chunked for memory."""
    validate_kind(kind)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"divergence[{kind}]", a.shape, b.shape)
    if kind == "l2":
        return _kernels.cross_l2(np.ascontiguousarray(a),
                                 np.ascontiguousarray(b))
    if kind == "linf":
        out = np.empty((a.shape[0], b.shape[0]))
        for i0 in range(0, a.shape[0], _CHUNK):
            out[i0:i0 + _CHUNK] = np.abs(
                a[i0:i0 + _CHUNK, None, :] - b[None, :, :]).max(axis=-1)
        return out
    if kind == "cosine-distance":
        na = np.linalg.norm(a, axis=-1)
        nb = np.linalg.norm(b, axis=-1)
        if np.any(na < 1e-12) or np.any(nb < 1e-12):
            raise DomainError("cosine-distance is undefined for zero vectors")
        cos = (a / na[:, None]) @ (b / nb[:, None]).T
        return np.maximum(0.0, 1.0 - cos)
    p = _softmax(a / temperature)
    q = _softmax(b / temperature)
    self_term = np.sum(p * np.log(p), axis=-1)
    return np.maximum(0.0, self_term[:, None] - p @ np.log(q).T)


def pairwise_divergence(kind, reps, temperature=1.0):
    """Condensed (i < j, row-major) divergences between all rows of reps."""
    validate_kind(kind)
    reps = np.asarray(reps, dtype=np.float64)
    if reps.ndim != 2:
        raise ShapeError(f"divergence[{kind}]", reps.shape)
    n = reps.shape[0]
    if kind == "l2":
        return _kernels.pairwise_l2(np.ascontiguousarray(reps))
    out = np.empty(n * (n - 1) // 2, dtype=np.float64)
    pos = 0
    for i in range(n - 1):
        row = cross_divergence(kind, reps[i:i + 1], reps[i + 1:], temperature)[0]
        out[pos:pos + row.size] = row
        pos += row.size
    return out
