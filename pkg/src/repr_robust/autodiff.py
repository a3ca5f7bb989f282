"""Dense float64 tensors with a dynamic reverse-mode differentiation tape.

Every operation records its inputs and a per-input gradient closure on the
output tensor; ``backward`` walks the resulting graph once in reverse
topological order.  The tape is rebuilt on every forward pass, which is what
iterative attacks need: each step differentiates through the encoder anew.
Tensors whose inputs do not require gradients carry no graph and are plain
immutable values.

Broadcasting is limited to scalar-with-tensor; everything else must match
shapes exactly and raises :class:`ShapeError` naming the primitive.
"""

import numpy as np

from . import _kernels
from .errors import DomainError, GraphError, ShapeError


class Tensor:
    """A float64 array plus an optional gradient and tape record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fns")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._grad_fns = ()

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def detach(self):
        """A constant view of this tensor, cut off from the tape."""
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the named functions below do the real work
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __neg__(self):
        return mul(self, _coerce(-1.0))

    def __matmul__(self, other):
        return matmul(self, _coerce(other))


def _coerce(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _record(data, pairs):
    """Build the output tensor, linking only parents that require grad."""
    live = [(p, fn) for p, fn in pairs if p.requires_grad]
    out = Tensor(data, requires_grad=bool(live))
    if live:
        out._parents = tuple(p for p, _ in live)
        out._grad_fns = tuple(fn for _, fn in live)
    return out


def backward(root):
    """Accumulate d(root)/d(leaf) into ``.grad`` of every reachable tensor.

    ``root`` must be a scalar produced by tape operations; each graph node
    is visited exactly once.
    """
    if root.data.size != 1:
        raise GraphError(
            f"backward root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        raise GraphError("root is not attached to a differentiation graph")

    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        g = node.grad
        for parent, fn in zip(node._parents, node._grad_fns):
            contrib = fn(g)
            if parent.grad is None:
                parent.grad = np.array(contrib, dtype=np.float64, copy=True)
            else:
                parent.grad += contrib


def _scalar_aware(name, a, b):
    """Validate elementwise shapes, allowing scalar-with-tensor."""
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeError(name, a.data.shape, b.data.shape)


def _reduce_to(shape, g):
    """Collapse a broadcast gradient back onto a scalar operand."""
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def add(a, b):
    _scalar_aware("add", a, b)
    return _record(a.data + b.data, [
        (a, lambda g: _reduce_to(a.data.shape, g)),
        (b, lambda g: _reduce_to(b.data.shape, g)),
    ])


def sub(a, b):
    _scalar_aware("subtract", a, b)
    return _record(a.data - b.data, [
        (a, lambda g: _reduce_to(a.data.shape, g)),
        (b, lambda g: _reduce_to(b.data.shape, -g)),
    ])


def mul(a, b):
    _scalar_aware("multiply", a, b)
    return _record(a.data * b.data, [
        (a, lambda g: _reduce_to(a.data.shape, g * b.data)),
        (b, lambda g: _reduce_to(b.data.shape, g * a.data)),
    ])


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    return _record(a.data @ b.data, [
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    ])


def add_bias(x, b):
    """Row-broadcast bias: (N, k) + (k,)."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ShapeError("add-bias", x.data.shape, b.data.shape)
    return _record(x.data + b.data, [
        (x, lambda g: g),
        (b, lambda g: g.sum(axis=0)),
    ])


def conv2d(x, w, pad=1):
    """Stride-1 cross-correlation with symmetric zero padding.

    x: (N, C_in, H, W), w: (C_out, C_in, kh, kw).
    """
    if x.data.ndim != 4 or w.data.ndim != 4 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError("conv2d", x.data.shape, w.data.shape)
    n, ci, h, wd = x.data.shape
    co, _, kh, kw = w.data.shape
    if h + 2 * pad - kh + 1 <= 0 or wd + 2 * pad - kw + 1 <= 0:
        raise ShapeError("conv2d", x.data.shape, w.data.shape)
    xd = np.ascontiguousarray(x.data)
    wd_arr = np.ascontiguousarray(w.data)
    out = _kernels.conv2d_forward(xd, wd_arr, pad)
    return _record(out, [
        (x, lambda g: _kernels.conv2d_grad_input(
            np.ascontiguousarray(g), wd_arr, pad, h, wd)),
        (w, lambda g: _kernels.conv2d_grad_weight(
            np.ascontiguousarray(g), xd, pad, kh, kw)),
    ])


def avgpool2(x):
    """2x2 average pooling with stride 2; spatial dims must be even."""
    if x.data.ndim != 4 or x.data.shape[2] % 2 or x.data.shape[3] % 2:
        raise ShapeError("avgpool2", x.data.shape)
    h, w = x.data.shape[2], x.data.shape[3]
    out = _kernels.avgpool2_forward(np.ascontiguousarray(x.data))
    return _record(out, [
        (x, lambda g: _kernels.avgpool2_backward(np.ascontiguousarray(g), h, w)),
    ])


def relu(a):
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0), [(a, lambda g: g * mask)])


def tanh(a):
    out = np.tanh(a.data)
    return _record(out, [(a, lambda g: g * (1.0 - out * out))])


def exp(a):
    out = np.exp(a.data)
    return _record(out, [(a, lambda g: g * out)])


def log(a):
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive inputs")
    return _record(np.log(a.data), [(a, lambda g: g / a.data)])


def sqrt(a):
    """Elementwise square root; subgradient 0 at 0 (norm-cone convention).

    The zero convention keeps divergence fixed points exact: the gradient of
    ||r - r||_2 is 0 rather than NaN.
    """
    if np.any(a.data < 0):
        raise DomainError("sqrt requires non-negative inputs")
    out = np.sqrt(a.data)

    def grad(g):
        res = np.zeros_like(out)
        np.divide(g, 2.0 * out, out=res, where=out != 0)
        return res

    return _record(out, [(a, grad)])


def reciprocal(a):
    if np.any(a.data == 0):
        raise DomainError("reciprocal requires nonzero inputs")
    out = 1.0 / a.data
    return _record(out, [(a, lambda g: -g * out * out)])


def absolute(a):
    """Elementwise |a| with subgradient sign(a) and sign(0) = 0."""
    s = np.sign(a.data)
    return _record(np.abs(a.data), [(a, lambda g: g * s)])


def amax(a):
    """Maximum over all elements; unit subgradient on the first maximizer."""
    flat_idx = int(np.argmax(a.data))

    def grad(g):
        out = np.zeros_like(a.data)
        out.flat[flat_idx] = float(g)
        return out

    return _record(np.max(a.data).reshape(()), [(a, grad)])


def max_last(a):
    """Row-wise maximum over the last axis.

    Subgradient places unit mass on the first maximizing entry of each row,
    so iterated attacks are reproducible.
    """
    if a.data.ndim < 1:
        raise ShapeError("max-last", a.data.shape)
    idx = np.argmax(a.data, axis=-1)

    def grad(g):
        out = np.zeros_like(a.data)
        np.put_along_axis(out, idx[..., None], g[..., None], axis=-1)
        return out

    return _record(a.data.max(axis=-1), [(a, grad)])


def tsum(a):
    return _record(np.sum(a.data).reshape(()),
                   [(a, lambda g: np.broadcast_to(g, a.data.shape).copy())])


def sum_last(a):
    """Sum over the last axis, keeping the leading axes."""
    if a.data.ndim < 1:
        raise ShapeError("sum-last", a.data.shape)
    return _record(a.data.sum(axis=-1), [
        (a, lambda g: np.broadcast_to(g[..., None], a.data.shape).copy()),
    ])


def mean(a):
    n = a.data.size
    return _record(np.mean(a.data).reshape(()), [
        (a, lambda g: np.broadcast_to(g / n, a.data.shape).copy()),
    ])


def dot(a, b):
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ShapeError("dot", a.data.shape, b.data.shape)
    return _record(np.dot(a.data, b.data).reshape(()), [
        (a, lambda g: g * b.data),
        (b, lambda g: g * a.data),
    ])


def softmax_last(a):
    """Softmax over the last axis (numerically stabilized)."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def grad(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        return p * (g - inner)

    return _record(p, [(a, grad)])


def scale_rows(x, s):
    """Multiply each row of (N, d) by the matching entry of s (N,)."""
    if x.data.ndim != 2 or s.data.ndim != 1 or x.data.shape[0] != s.data.shape[0]:
        raise ShapeError("scale-rows", x.data.shape, s.data.shape)
    return _record(x.data * s.data[:, None], [
        (x, lambda g: g * s.data[:, None]),
        (s, lambda g: (g * x.data).sum(axis=-1)),
    ])


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concatenate", ())
    base = list(tensors[0].data.shape)
    for t in tensors[1:]:
        other = list(t.data.shape)
        if len(other) != len(base) or any(
                o != b for i, (o, b) in enumerate(zip(other, base)) if i != axis):
            raise ShapeError("concatenate", tensors[0].data.shape, t.data.shape)
    out = np.concatenate([t.data for t in tensors], axis=axis)

    pairs = []
    start = 0
    for t in tensors:
        width = t.data.shape[axis]
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(start, start + width)
        pairs.append((t, lambda g, sl=tuple(sl): g[sl]))
        start += width
    return _record(out, pairs)


def transpose2d(a):
    if a.data.ndim != 2:
        raise ShapeError("transpose2d", a.data.shape)
    return _record(a.data.T.copy(), [(a, lambda g: g.T.copy())])


def reshape(a, shape):
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError("reshape", a.data.shape, shape)
    return _record(a.data.reshape(shape),
                   [(a, lambda g: g.reshape(a.data.shape))])


def finite_difference_check(fn, x, step=1e-5):
    """Max relative disagreement between tape and central-difference gradients.

    ``fn`` maps a Tensor leaf to a scalar Tensor.  Returns
    ``max_i |analytic_i - numeric_i| / (|analytic_i| + 1e-12)``.  A constant
    ``fn`` (output not on any graph) counts as zero analytic gradient.
    """
    if step <= 0:
        raise DomainError("finite-difference step must be positive")
    base = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    leaf = Tensor(base.copy(), requires_grad=True)
    out = fn(leaf)
    if out.requires_grad:
        backward(out)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)
    else:
        analytic = np.zeros_like(base)

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + step
        up = fn(Tensor(bumped.reshape(base.shape))).item()
        bumped[i] = flat[i] - step
        down = fn(Tensor(bumped.reshape(base.shape))).item()
        num_flat[i] = (up - down) / (2.0 * step)

    err = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-12)
    return float(err.max()) if err.size else 0.0
