"""Linear probes on frozen representations, and the Fourier lowpass filter.

Three probe variants: ``standard`` (raw inputs), ``lowpass`` (high spatial
frequencies removed) and ``gaussian-noise`` (inputs perturbed with Gaussian
noise; this is the probe used for smoothing certification).  The probe is a
plain softmax classifier trained with SGD on encoder outputs; the encoder is
never updated.
"""

import dataclasses
import hashlib

import numpy as np

from .encoders import Encoder
from .errors import ConfigError, DataError, DomainError, ShapeError
from .seeding import derive_seed, generator, item_generator

VARIANTS = ("standard", "lowpass", "gaussian-noise")
DEFAULT_LOWPASS_FRACTION = 50.0 / 224.0  # keep-radius as fraction of side
DEFAULT_NOISE_SIGMA = 0.25
PROBE_SECTION_TAG = "PRBE"


def lowpass(x, radius_fraction, clip=True):
    """Remove spatial frequencies farther than radius_fraction * side from DC.

    Works per channel on (..., side, side) arrays of square images; the
    inverse transform's real part is clipped back to [0,1] unless ``clip``
    is False (the linearity property holds pre-clip).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise ShapeError("lowpass", x.shape)
    side = x.shape[-1]
    if not 0.0 < radius_fraction <= np.sqrt(2.0) / 2.0 + 1e-12:
        raise DomainError(
            f"radius fraction must be in (0, sqrt(2)/2], got {radius_fraction}")
    k = np.arange(side)
    k = np.minimum(k, side - k)  # distance from DC along one axis
    dist = np.sqrt(k[:, None] ** 2 + k[None, :] ** 2)
    mask = dist <= radius_fraction * side + 1e-9
    spectrum = np.fft.fft2(x, axes=(-2, -1))
    out = np.fft.ifft2(spectrum * mask, axes=(-2, -1)).real
    return np.clip(out, 0.0, 1.0) if clip else out


@dataclasses.dataclass
class LinearProbe:
    """Softmax classifier over frozen representations."""

    weights: np.ndarray       # (classes, repr_dim)
    bias: np.ndarray          # (classes,)
    variant: str
    encoder_fingerprint: str
    transform_params: dict    # lowpass fraction / noise sigma, as applicable

    @property
    def classes(self):
        return self.weights.shape[0]

    def logits_from_reps(self, reps):
        return reps @ self.weights.T + self.bias

    def predict_from_reps(self, reps):
        return np.argmax(self.logits_from_reps(reps), axis=-1)


def encoder_fingerprint(enc):
    return hashlib.sha256(enc.params.tobytes()).hexdigest()[:16]


def transform_inputs(variant, images, transform_params, seed, index_base=0):
    """Apply a probe variant's input transformation (deterministic per seed)."""
    if variant == "standard":
        return images
    if variant == "lowpass":
        return lowpass(images, transform_params["lowpass_fraction"])
    if variant == "gaussian-noise":
        sigma = transform_params["noise_sigma"]
        noisy = np.empty_like(images)
        for i in range(images.shape[0]):
            g = item_generator(seed, index_base + i)
            noisy[i] = images[i] + sigma * g.standard_normal(images[i].shape)
        return noisy
    raise ConfigError(f"unknown probe variant {variant!r}")


def _encode_dataset(enc, images, chunk=256):
    reps = np.empty((images.shape[0], enc.repr_dim))
    for i0 in range(0, images.shape[0], chunk):
        reps[i0:i0 + chunk] = enc.features(images[i0:i0 + chunk])
    return reps


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def train_probe(enc, images, labels, variant="standard", epochs=25, lr=30.0,
                lr_drop_epochs=(15, 20), batch_size=64, seed=0,
                lowpass_fraction=DEFAULT_LOWPASS_FRACTION,
                noise_sigma=DEFAULT_NOISE_SIGMA):
    """Fit a softmax probe on representations of variant-transformed inputs.

    SGD with tenfold learning-rate reductions at the drop epochs.  For the
    gaussian-noise variant, fresh noise is drawn every epoch.
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes = int(labels.max()) + 1 if labels.size else 0
    if classes < 2:
        raise DataError("probe training needs at least 2 classes")
    tp = {}
    if variant == "lowpass":
        tp["lowpass_fraction"] = float(lowpass_fraction)
    elif variant == "gaussian-noise":
        tp["noise_sigma"] = float(noise_sigma)
    elif variant != "standard":
        raise ConfigError(f"unknown probe variant {variant!r}")

    n = images.shape[0]
    w = np.zeros((classes, enc.repr_dim))
    b = np.zeros(classes)
    onehot = np.eye(classes)[labels]

    static_reps = None
    if variant != "gaussian-noise":
        static_reps = _encode_dataset(
            enc, transform_inputs(variant, images, tp, seed=0))

    for epoch in range(epochs):
        stage = sum(epoch >= d for d in lr_drop_epochs)
        lr_t = lr * (0.1 ** stage)
        if variant == "gaussian-noise":
            noisy = transform_inputs(variant, images, tp,
                                     derive_seed(seed, "noise", epoch))
            reps = _encode_dataset(enc, noisy)
        else:
            reps = static_reps
        order = generator(derive_seed(seed, "probe-shuffle", epoch)).permutation(n)
        for i0 in range(0, n, batch_size):
            sel = order[i0:i0 + batch_size]
            r = reps[sel]
            probs = _softmax(r @ w.T + b)
            delta = (probs - onehot[sel]) / len(sel)
            w -= lr_t * (delta.T @ r)
            b -= lr_t * delta.sum(axis=0)

    return LinearProbe(w, b, variant, encoder_fingerprint(enc), tp)


def probe_logits(probe, enc, images, seed=0):
    """Logits on inputs transformed per the probe's own variant."""
    x = transform_inputs(probe.variant, images, probe.transform_params, seed)
    return probe.logits_from_reps(_encode_dataset(enc, x))


def top_k_accuracy(probe, enc, images, labels, k, seed=0):
    """Fraction of samples whose label is among the k best logits.

    Ties are broken by class index (lower index wins), so results are
    deterministic.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if k > probe.classes:
        raise DataError(f"k={k} exceeds class count {probe.classes}")
    logits = probe_logits(probe, enc, images, seed)
    # stable top-k: sort by (-logit, class index)
    order = np.lexsort((np.arange(probe.classes)[None, :].repeat(len(labels), 0),
                        -logits), axis=-1)
    hits = (order[:, :k] == labels[:, None]).any(axis=1)
    return float(hits.mean())


def classifier_fn(probe, enc):
    """The probe-on-encoder image classifier as a plain batch callable.

    Raw inputs only: no variant transformation is applied, so smoothing noise
    added by the caller passes straight through to the encoder.
    """
    def classify(batch):
        return probe.predict_from_reps(_encode_dataset(enc, np.asarray(batch)))
    return classify


def attach_probe(path, probe):
    """Append a probe section to an encoder checkpoint container."""
    enc, sections = Encoder.load(path, want_sections=True)
    meta = {
        "kind": "linear-probe",
        "variant": probe.variant,
        "classes": int(probe.classes),
        "repr_dim": int(probe.weights.shape[1]),
        "encoder_fingerprint": probe.encoder_fingerprint,
        "transform_params": probe.transform_params,
    }
    payload = np.concatenate([probe.weights.reshape(-1), probe.bias])
    sections.append((PROBE_SECTION_TAG, meta, payload))
    enc.save(path, extra_sections=sections)


def load_probes(path):
    """All probe sections stored in an encoder checkpoint container."""
    _, sections = Encoder.load(path, want_sections=True)
    probes = []
    for tag, meta, payload in sections:
        if tag != PROBE_SECTION_TAG:
            continue
        classes, dim = meta["classes"], meta["repr_dim"]
        w = payload[:classes * dim].reshape(classes, dim)
        b = payload[classes * dim:]
        probes.append(LinearProbe(w, b, meta["variant"],
                                  meta["encoder_fingerprint"],
                                  meta["transform_params"]))
    return probes
