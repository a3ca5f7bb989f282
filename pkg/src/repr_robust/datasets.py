"""Deterministic synthetic labeled images.

Each class pairs a low-frequency identity (an anisotropic Gaussian blob at a
class-specific position and orientation) with a class-specific high-frequency
sinusoidal texture.  Removing the high frequencies must not destroy class
identity, so lowpass evaluation protocols stay meaningful.  Per-sample
variation (blob center jitter, texture phase jitter, uniform pixel noise)
scales with a single noise level; at noise 0 every sample equals its class
prototype.  Generation is counter-seeded per sample, so any worker layout
produces identical bytes.
"""

import dataclasses
import json
import struct

import numpy as np

from .errors import CheckpointError, DataError
from .seeding import derive_seed, generator, item_generator

DATASET_MAGIC = b"URDS"
DATASET_VERSION = 1


@dataclasses.dataclass(frozen=True)
class SynthSpec:
    side: int = 16
    channels: int = 1
    classes: int = 4
    per_class: int = 256
    noise: float = 0.12
    seed: int = 7

    def __post_init__(self):
        if self.classes < 2:
            raise DataError("need at least 2 classes")
        if self.side < 4 or self.channels not in (1, 3):
            raise DataError("side must be >= 4 and channels 1 or 3")
        if self.per_class < 1 or self.noise < 0:
            raise DataError("per_class must be >= 1 and noise >= 0")

    def to_json_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_json_dict(cls, d):
        return cls(**d)


@dataclasses.dataclass
class ClassParams:
    center: tuple      # blob center in [0,1]^2
    angle: float       # blob orientation
    sigmas: tuple      # blob axis widths
    tex_freq: float    # texture cycles per unit length
    tex_angle: float
    tex_amp: float


@dataclasses.dataclass
class Dataset:
    images: np.ndarray  # (N, C, side, side) float64 in [0,1]
    labels: np.ndarray  # (N,) int64
    spec: SynthSpec

    def __len__(self):
        return self.images.shape[0]

    def class_indices(self, label):
        return np.flatnonzero(self.labels == label)


def class_params(spec):
    """Per-class generative parameters, deterministic from the spec seed."""
    rng = generator(derive_seed(spec.seed, "classes"))
    params = []
    for c in range(spec.classes):
        theta = 2.0 * np.pi * c / spec.classes
        center = (0.5 + 0.24 * np.cos(theta), 0.5 + 0.24 * np.sin(theta))
        angle = float(rng.uniform(0, np.pi))
        sigmas = (0.20 + 0.04 * rng.uniform(), 0.11 + 0.03 * rng.uniform())
        tex_freq = float(spec.side * rng.uniform(0.30, 0.45))
        tex_angle = float(rng.uniform(0, np.pi))
        tex_amp = 0.08
        params.append(ClassParams(center, angle, sigmas, tex_freq,
                                  tex_angle, tex_amp))
    return params


def _render(spec, cp, center_jitter, phase, channel_shift):
    coords = (np.arange(spec.side) + 0.5) / spec.side
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    cy = cp.center[1] + center_jitter[0]
    cx = cp.center[0] + center_jitter[1]
    ca, sa = np.cos(cp.angle), np.sin(cp.angle)
    u = ca * (xx - cx) + sa * (yy - cy)
    v = -sa * (xx - cx) + ca * (yy - cy)
    blob = np.exp(-0.5 * ((u / cp.sigmas[0]) ** 2 + (v / cp.sigmas[1]) ** 2))
    ct, st = np.cos(cp.tex_angle), np.sin(cp.tex_angle)
    img = np.empty((spec.channels, spec.side, spec.side))
    for ch in range(spec.channels):
        wave = np.sin(2.0 * np.pi * cp.tex_freq * (ct * xx + st * yy)
                      + phase + channel_shift * ch)
        img[ch] = 0.25 + 0.5 * blob + cp.tex_amp * wave
    return img


def prototype(spec, label, params=None):
    """Noise-free class image."""
    params = params or class_params(spec)
    return np.clip(_render(spec, params[label], (0.0, 0.0), 0.0, 2.0), 0.0, 1.0)


def generate(spec):
    """The full labeled dataset for a spec, ordered class-major."""
    params = class_params(spec)
    total = spec.classes * spec.per_class
    images = np.empty((total, spec.channels, spec.side, spec.side))
    labels = np.empty(total, dtype=np.int64)
    sample_seed = derive_seed(spec.seed, "samples")
    idx = 0
    for c in range(spec.classes):
        for _ in range(spec.per_class):
            rng = item_generator(sample_seed, idx)
            jitter = rng.uniform(-0.3 * spec.noise, 0.3 * spec.noise, size=2)
            phase = rng.uniform(-2 * np.pi * spec.noise, 2 * np.pi * spec.noise)
            img = _render(spec, params[c], jitter, phase, 2.0)
            img += rng.uniform(-spec.noise, spec.noise, size=img.shape)
            images[idx] = np.clip(img, 0.0, 1.0)
            labels[idx] = c
            idx += 1
    return Dataset(images, labels, spec)


def split(dataset, fractions, seed):
    """Seeded stratified split; class balance exact to within one sample."""
    fractions = tuple(float(f) for f in fractions)
    if any(not 0.0 < f < 1.0 for f in fractions):
        raise DataError("every split fraction must lie in (0, 1)")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got {sum(fractions)}")
    parts = [[] for _ in fractions]
    for c in range(dataset.spec.classes):
        idx = dataset.class_indices(c)
        perm = generator(derive_seed(seed, "split", c)).permutation(len(idx))
        idx = idx[perm]
        bounds = np.round(np.cumsum(fractions) * len(idx)).astype(int)
        start = 0
        for p, stop in enumerate(bounds):
            parts[p].append(idx[start:stop])
            start = stop
    out = []
    for chunk in parts:
        sel = np.sort(np.concatenate(chunk))
        out.append(Dataset(dataset.images[sel], dataset.labels[sel],
                           dataset.spec))
    return out


def save(dataset, path):
    blob = json.dumps(dataset.spec.to_json_dict(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", DATASET_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", len(dataset)))
        fh.write(dataset.images.astype("<f8").tobytes())
        fh.write(dataset.labels.astype("<i8").tobytes())


def load(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != DATASET_MAGIC:
        raise CheckpointError(f"bad magic bytes in {path}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != DATASET_VERSION:
        raise CheckpointError(f"unsupported dataset version {version}")
    (blob_len,) = struct.unpack_from("<I", raw, 8)
    pos = 12
    spec = SynthSpec.from_json_dict(json.loads(raw[pos:pos + blob_len]))
    pos += blob_len
    (count,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    img_bytes = count * spec.channels * spec.side * spec.side * 8
    if pos + img_bytes + count * 8 != len(raw):
        raise CheckpointError("truncated or oversized dataset file")
    images = np.frombuffer(raw, dtype="<f8",
                           count=img_bytes // 8, offset=pos).copy()
    images = images.reshape(count, spec.channels, spec.side, spec.side)
    labels = np.frombuffer(raw, dtype="<i8", count=count,
                           offset=pos + img_bytes).copy()
    return Dataset(images, labels, spec)
