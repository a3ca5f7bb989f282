"""Differentiable toy encoders mapping [0,1] images to representation vectors.

Two reference architectures: an MLP (flatten, hidden ReLU layers, linear
head) and a small CNN (3x3 conv + ReLU + 2x average-pool blocks, linear
head).  Both are white-box: callers can query representations and input
gradients through the tape.  Parameters live in a single flat float64 array
so checkpointing and momentum updates are exact.
"""

import dataclasses
import json
import struct

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError, DomainError, ShapeError
from .seeding import generator

CHECKPOINT_MAGIC = b"URRE"
CHECKPOINT_VERSION = 1
KERNEL = 3  # conv kernel side; same-padding keeps spatial dims


@dataclasses.dataclass(frozen=True)
class EncoderSpec:
    """Architecture description; fully determines the parameter layout."""

    architecture: str  # "mlp" or "cnn"
    input_side: int
    channels: int = 1
    hidden: tuple = (64, 32)
    repr_dim: int = 32
    normalize: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ("mlp", "cnn"):
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        if self.repr_dim < 2:
            raise ConfigError("repr_dim must be at least 2")
        if any(sz < 1 for sz in self.hidden):
            raise ConfigError("all layer sizes must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(v) for v in self.hidden))
        if self.architecture == "cnn":
            if not self.hidden:
                raise ConfigError("cnn needs at least one conv block")
            down = 2 ** len(self.hidden)
            if self.input_side % down or self.input_side < down:
                raise ConfigError(
                    f"cnn needs input_side divisible by {down}, "
                    f"got {self.input_side}")

    def to_json_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_json_dict(cls, d):
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)

    def layer_shapes(self):
        """Ordered (name, shape) pairs defining the flat parameter layout."""
        shapes = []
        if self.architecture == "mlp":
            sizes = [self.input_side ** 2 * self.channels,
                     *self.hidden, self.repr_dim]
            for i in range(len(sizes) - 1):
                shapes.append((f"w{i}", (sizes[i], sizes[i + 1])))
                shapes.append((f"b{i}", (sizes[i + 1],)))
        else:
            cin = self.channels
            for i, cout in enumerate(self.hidden):
                shapes.append((f"conv{i}", (cout, cin, KERNEL, KERNEL)))
                cin = cout
            side = self.input_side // (2 ** len(self.hidden))
            flat = cin * side * side
            shapes.append(("head_w", (flat, self.repr_dim)))
            shapes.append(("head_b", (self.repr_dim,)))
        return shapes

    def param_count(self):
        return sum(int(np.prod(s)) for _, s in self.layer_shapes())


def init_params(spec):
    """Glorot-uniform weights, zero biases, deterministic from spec.seed."""
    rng = generator(spec.seed)
    chunks = []
    for name, shape in spec.layer_shapes():
        if name.startswith("b") or name == "head_b":
            chunks.append(np.zeros(int(np.prod(shape))))
            continue
        if len(shape) == 4:
            fan_in = shape[1] * shape[2] * shape[3]
            fan_out = shape[0] * shape[2] * shape[3]
        else:
            fan_in, fan_out = shape[0], shape[1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=int(np.prod(shape))))
    return np.concatenate(chunks) if chunks else np.zeros(0)


class Encoder:
    """An encoder with a flat parameter vector and tape-recorded forward."""

    def __init__(self, spec, params=None, provenance=None):
        self.spec = spec
        expected = spec.param_count()
        if params is None:
            params = init_params(spec)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (expected,):
            raise CheckpointError(
                f"parameter count mismatch: spec needs {expected}, "
                f"got {params.size}")
        self.params = params
        self.provenance = dict(provenance or {})
        self._offsets = []
        pos = 0
        for name, shape in spec.layer_shapes():
            size = int(np.prod(shape))
            self._offsets.append((name, pos, shape))
            pos += size

    @property
    def repr_dim(self):
        return self.spec.repr_dim

    def copy(self):
        return Encoder(self.spec, self.params.copy(), dict(self.provenance))

    def param_tensors(self, requires_grad=False):
        out = {}
        for name, pos, shape in self._offsets:
            size = int(np.prod(shape))
            arr = self.params[pos:pos + size].reshape(shape)
            out[name] = Tensor(arr, requires_grad=requires_grad)
        return out

    def flat_grad(self, tensors):
        """Assemble layer gradients back into flat-parameter order."""
        grads = []
        for name, _, shape in self._offsets:
            g = tensors[name].grad
            grads.append(np.zeros(int(np.prod(shape))) if g is None
                         else g.reshape(-1))
        return np.concatenate(grads)

    def _expected_shape(self):
        return (self.spec.channels, self.spec.input_side, self.spec.input_side)

    def forward_graph(self, x, params):
        spec = self.spec
        single = x.data.ndim == 3
        if single:
            x = ad.reshape(x, (1,) + x.data.shape)
        n = x.data.shape[0]
        if spec.architecture == "mlp":
            t = ad.reshape(x, (n, spec.input_side ** 2 * spec.channels))
            depth = len(spec.hidden) + 1
            for i in range(depth):
                t = ad.add_bias(ad.matmul(t, params[f"w{i}"]), params[f"b{i}"])
                if i < depth - 1:
                    t = ad.relu(t)
        else:
            t = x
            for i in range(len(spec.hidden)):
                t = ad.relu(ad.conv2d(t, params[f"conv{i}"], pad=KERNEL // 2))
                t = ad.avgpool2(t)
            t = ad.reshape(t, (n, t.data.size // n))
            t = ad.add_bias(ad.matmul(t, params["head_w"]), params["head_b"])
        if spec.normalize:
            norms = ad.sqrt(ad.sum_last(ad.mul(t, t)))
            if np.any(norms.data < 1e-12):
                raise DomainError(
                    "cannot normalize a zero representation to the unit sphere")
            t = ad.scale_rows(t, ad.reciprocal(norms))
        if single:
            t = ad.reshape(t, (spec.repr_dim,))
        return t

    def _check_input(self, data):
        exp = self._expected_shape()
        if data.shape != exp and data.shape[1:] != exp:
            raise ShapeError("encode", data.shape, exp)
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise DomainError(
                "encode requires inputs in [0,1]; clip before encoding")

    def encode(self, x):
        """Representation of an image (C,H,W) or batch (N,C,H,W) in [0,1].

        Pass a Tensor leaf with ``requires_grad=True`` to obtain input
        gradients through the returned graph.
        """
        if not isinstance(x, Tensor):
            x = Tensor(x)
        self._check_input(x.data)
        return self.forward_graph(x, self.param_tensors())

    def encode_with_params(self, x):
        """Forward pass exposing parameter leaves, for training updates."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        self._check_input(x.data)
        params = self.param_tensors(requires_grad=True)
        return self.forward_graph(x, params), params

    def features(self, x):
        """Plain numpy forward without the [0,1] range check.

        Used where inputs are deliberately noisy (Gaussian smoothing, noisy
        probe training); no gradients are recorded.
        """
        x = np.asarray(x, dtype=np.float64)
        exp = self._expected_shape()
        if x.shape != exp and x.shape[1:] != exp:
            raise ShapeError("encode", x.shape, exp)
        return self.forward_graph(Tensor(x), self.param_tensors()).data

    # -- checkpoint container ------------------------------------------------

    def save(self, path, extra_sections=()):
        """Write the URRE container; optional (tag, meta, payload) sections."""
        header = {
            "spec": self.spec.to_json_dict(),
            "provenance": self.provenance,
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(self.params.astype("<f8").tobytes())
            for tag, meta, payload in extra_sections:
                tag_bytes = tag.encode("ascii")
                if len(tag_bytes) != 4:
                    raise CheckpointError(f"section tag must be 4 bytes: {tag!r}")
                meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
                payload = np.asarray(payload, dtype=np.float64).reshape(-1)
                fh.write(tag_bytes)
                fh.write(struct.pack("<I", len(meta_blob)))
                fh.write(meta_blob)
                fh.write(struct.pack("<Q", payload.size))
                fh.write(payload.astype("<f8").tobytes())

    @classmethod
    def load(cls, path, want_sections=False):
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic bytes in {path}")
        if len(raw) < 12:
            raise CheckpointError("truncated checkpoint header")
        pos = 4
        (version,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if pos + blob_len > len(raw):
            raise CheckpointError("truncated checkpoint header")
        header = json.loads(raw[pos:pos + blob_len])
        pos += blob_len
        spec = EncoderSpec.from_json_dict(header["spec"])
        count = spec.param_count()
        if pos + 8 * count > len(raw):
            raise CheckpointError(
                f"parameter count mismatch: spec needs {count}, file holds "
                f"{(len(raw) - pos) // 8}")
        params = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).copy()
        pos += 8 * count

        sections = []
        while pos < len(raw):
            if pos + 8 > len(raw):
                raise CheckpointError("truncated section header")
            tag = raw[pos:pos + 4].decode("ascii")
            (meta_len,) = struct.unpack_from("<I", raw, pos + 4)
            pos += 8
            if pos + meta_len + 8 > len(raw):
                raise CheckpointError("truncated section metadata")
            meta = json.loads(raw[pos:pos + meta_len])
            pos += meta_len
            (payload_len,) = struct.unpack_from("<Q", raw, pos)
            pos += 8
            if pos + 8 * payload_len > len(raw):
                raise CheckpointError("truncated section payload")
            payload = np.frombuffer(
                raw, dtype="<f8", count=payload_len, offset=pos).copy()
            pos += 8 * payload_len
            sections.append((tag, meta, payload))

        enc = cls(spec, params, header.get("provenance"))
        if want_sections:
            return enc, sections
        if sections:
            raise CheckpointError(
                "checkpoint carries extra sections; load with "
                "want_sections=True")
        return enc
