"""Label-free robustness measures.

Attack severity is scored against the empirical geometry of clean
representations rather than against labels:

* the universal quantile places an attack-induced divergence within the
  distribution of clean pairwise divergences;
* the relative quantile compares a targeted attack's remaining distance to
  the original clean distance;
* the breakaway estimate counts attacked samples landing closer to other
  samples than to their own clean representation (with nearest-neighbor
  accuracy as the per-sample summary);
* the overlap estimate counts pairs whose mutually-targeted attacks cross,
  with the adversarial margin quantifying how badly.

Ties never count as violations: all events use strict inequalities.  For the
asymmetric divergence, argument order follows the defining expressions
exactly (clean side first for overlap and margins, attacked side first for
breakaway).
"""

import dataclasses
import hashlib

import numpy as np

from . import divergences
from .attacks import AttackConfig, u_pgd
from .errors import ConfigError, DataError, DomainError
from .parallel import chunked_map
from .seeding import derive_seed, generator

ATTACK_CHUNK = 64
ENCODE_CHUNK = 256

BREAKAWAY_DEFAULTS = dict(epsilon=0.05, alpha=0.001, iterations=25,
                          mode="untargeted")
OVERLAP_DEFAULTS = dict(epsilon=0.05, alpha=0.001, iterations=10,
                        mode="targeted")
DEFAULT_PAIR_COUNT = 1000


@dataclasses.dataclass
class DivergenceDistribution:
    """Sorted clean pairwise divergences with empirical-CDF queries."""

    values: np.ndarray
    sample_count: int
    kind: str
    temperature: float
    fingerprint: str

    def __len__(self):
        return self.values.size


@dataclasses.dataclass
class RiskEstimate:
    estimate: float
    numerator: int
    denominator: int
    attack: dict
    d_prime_size: int
    d_size: int

    def to_json_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass
class MarginRecord:
    i: int
    j: int
    incoming: float   # d(f(x_i), f(attack of x_j toward x_i))
    outgoing: float   # d(f(x_i), f(attack of x_i toward x_j))
    clean: float      # d(f(x_i), f(x_j))
    margin: float     # (incoming - outgoing) / clean

    def to_json_dict(self):
        return dataclasses.asdict(self)


def encode_dataset(enc, images, chunk=ENCODE_CHUNK, workers=1):
    """Representations of an image stack, computed in fixed chunks."""
    parts = chunked_map(lambda s, e: enc.features(images[s:e]),
                        images.shape[0], chunk, workers)
    return np.concatenate(parts) if parts else np.empty((0, enc.repr_dim))


def build_divergence_distribution(enc, images, sample_count, kind="l2",
                                  temperature=1.0, workers=1):
    """All unordered pairwise divergences among the first sample_count images."""
    if sample_count < 2:
        raise DataError("divergence distribution needs at least 2 samples")
    if sample_count > images.shape[0]:
        raise DataError(
            f"sample_count {sample_count} exceeds dataset size {images.shape[0]}")
    subset = images[:sample_count]
    reps = encode_dataset(enc, subset, workers=workers)
    values = np.sort(divergences.pairwise_divergence(kind, reps, temperature))
    fp = hashlib.sha256(enc.params.tobytes()
                        + subset.tobytes()).hexdigest()[:16]
    return DivergenceDistribution(values, sample_count, kind, temperature, fp)


def universal_quantile(dist, value):
    """Fraction of stored clean divergences <= value (right-continuous CDF)."""
    if len(dist) == 0:
        raise DataError("empty divergence distribution")
    return float(np.searchsorted(dist.values, value, side="right") / len(dist))


def relative_quantile(enc, x, target, adversarial, kind="l2", temperature=1.0):
    """d(f(adversarial), f(target)) / d(f(x), f(target))."""
    r_clean = enc.encode(x).data
    r_target = enc.encode(target).data
    r_adv = enc.encode(adversarial).data
    denom = divergences.divergence(kind, r_clean, r_target, temperature)
    if denom <= 1e-9:
        raise DomainError(
            "relative quantile undefined: clean divergence to target is ~0")
    return divergences.divergence(kind, r_adv, r_target, temperature) / denom


def attack_untargeted(enc, images, cfg, workers=1, chunk=ATTACK_CHUNK):
    """Untargeted attacks on a sample stack; chunk layout never changes bits."""
    out = np.empty_like(images)

    def work(s, e):
        return s, u_pgd(enc, images[s:e], cfg, index_base=s).adversarial

    for s, adv in chunked_map(work, images.shape[0], chunk, workers):
        out[s:s + adv.shape[0]] = adv
    return out


def attack_targeted(enc, images, target_reps, cfg, workers=1,
                    chunk=ATTACK_CHUNK):
    """Targeted attacks driving each image toward its paired representation."""
    out = np.empty_like(images)

    def work(s, e):
        return s, u_pgd(enc, images[s:e], cfg, target=target_reps[s:e],
                        index_base=s).adversarial

    for s, adv in chunked_map(work, images.shape[0], chunk, workers):
        out[s:s + adv.shape[0]] = adv
    return out


def breakaway_scan(enc, images, d_prime, cfg=None, kind="l2", temperature=1.0,
                   workers=1):
    """Shared computation behind the breakaway estimate and NN accuracy.

    ``d_prime`` holds indices into ``images`` of the attacked subset.
    Returns a dict with the risk estimate, nearest-neighbor accuracy, the
    self-similarity diagnostic, and per-sample counts.
    """
    if images.shape[0] < 2:
        raise DataError("breakaway needs at least 2 samples in the dataset")
    d_prime = np.asarray(d_prime, dtype=np.int64)
    if cfg is None:
        cfg = AttackConfig(**BREAKAWAY_DEFAULTS, divergence=kind,
                           temperature=temperature)
    if cfg.mode != "untargeted":
        raise ConfigError("breakaway uses untargeted attacks")

    reps = encode_dataset(enc, images, workers=workers)
    attacked = attack_untargeted(enc, images[d_prime], cfg, workers=workers)
    attacked_reps = encode_dataset(enc, attacked, workers=workers)

    # attacked side first, per the defining expression
    cross = divergences.cross_divergence(kind, attacked_reps, reps, temperature)
    self_div = cross[np.arange(len(d_prime)), d_prime]
    closer = cross < self_div[:, None]
    closer[np.arange(len(d_prime)), d_prime] = False
    per_sample = closer.sum(axis=1)

    numerator = int(per_sample.sum())
    denominator = len(d_prime) * (images.shape[0] - 1)
    nn_accuracy = float((per_sample == 0).mean())

    clean_cross = divergences.cross_divergence(
        kind, reps[d_prime], reps, temperature)
    clean_cross[np.arange(len(d_prime)), d_prime] = np.inf
    self_similar = self_div < clean_cross.min(axis=1)

    return {
        "risk": RiskEstimate(numerator / denominator, numerator, denominator,
                             cfg.to_json_dict(), len(d_prime),
                             images.shape[0]),
        "nn_accuracy": nn_accuracy,
        "self_similarity_fraction": float(self_similar.mean()),
        "per_sample_counts": per_sample,
        "attacked_self_divergence": self_div,
    }


def breakaway_risk(enc, images, d_prime, cfg=None, kind="l2", temperature=1.0,
                   workers=1):
    """Probability estimate that attacked samples land closer to others."""
    return breakaway_scan(enc, images, d_prime, cfg, kind, temperature,
                          workers)["risk"]


def nearest_neighbor_accuracy(enc, images, d_prime, cfg=None, kind="l2",
                              temperature=1.0, workers=1):
    """Fraction of attacked samples whose nearest clean sample is their own."""
    return breakaway_scan(enc, images, d_prime, cfg, kind, temperature,
                          workers)["nn_accuracy"]


def sample_disjoint_pairs(n, count, seed):
    """Disjoint index pairs from a seeded shuffle."""
    if 2 * count > n:
        raise DataError(f"cannot draw {count} disjoint pairs from {n} samples")
    perm = generator(derive_seed(seed, "pairs")).permutation(n)
    return perm[:2 * count].reshape(count, 2)


def overlap_risk_and_margins(enc, images, pairs, cfg=None, kind="l2",
                             temperature=1.0, workers=1):
    """Mutually targeted attacks on pairs: overlap events and margins.

    Pairs whose clean divergence is below 1e-9 are excluded and tallied.
    Returns (RiskEstimate, margin records, summary dict).
    """
    pairs = np.asarray(pairs, dtype=np.int64)
    if cfg is None:
        cfg = AttackConfig(**OVERLAP_DEFAULTS, divergence=kind,
                           temperature=temperature)
    if cfg.mode != "targeted":
        raise ConfigError("overlap uses targeted attacks")

    reps = encode_dataset(enc, images, workers=workers)
    src_i, src_j = pairs[:, 0], pairs[:, 1]
    cfg_ij = cfg.replace(seed=derive_seed(cfg.seed, "forward"))
    cfg_ji = cfg.replace(seed=derive_seed(cfg.seed, "backward"))
    adv_ij = attack_targeted(enc, images[src_i], reps[src_j], cfg_ij,
                             workers=workers)
    adv_ji = attack_targeted(enc, images[src_j], reps[src_i], cfg_ji,
                             workers=workers)
    rep_ij = encode_dataset(enc, adv_ij, workers=workers)
    rep_ji = encode_dataset(enc, adv_ji, workers=workers)

    # clean side first, per the defining expressions
    incoming = divergences.batch_divergence(kind, reps[src_i], rep_ji,
                                            temperature)
    outgoing = divergences.batch_divergence(kind, reps[src_i], rep_ij,
                                            temperature)
    clean = divergences.batch_divergence(kind, reps[src_i], reps[src_j],
                                         temperature)

    included = clean >= 1e-9
    excluded = int((~included).sum())
    margins = (incoming[included] - outgoing[included]) / clean[included]
    events = incoming[included] < outgoing[included]

    records = []
    kept = np.flatnonzero(included)
    for row, m in zip(kept, margins):
        records.append(MarginRecord(int(src_i[row]), int(src_j[row]),
                                    float(incoming[row]), float(outgoing[row]),
                                    float(clean[row]), float(m)))

    denominator = int(included.sum())
    if denominator == 0:
        raise DataError("all pairs were degenerate (clean divergence ~0)")
    numerator = int(events.sum())
    risk = RiskEstimate(numerator / denominator, numerator, denominator,
                        cfg.to_json_dict(), len(pairs), images.shape[0])
    summary = {
        "median_margin": float(np.median(margins)),
        "excluded_pairs": excluded,
        "relative_quantiles": None,
    }
    return risk, records, summary


def targeted_relative_quantiles(enc, images, pairs, cfg=None, kind="l2",
                                temperature=1.0, workers=1):
    """Relative quantiles for one-directional targeted attacks over pairs."""
    pairs = np.asarray(pairs, dtype=np.int64)
    if cfg is None:
        cfg = AttackConfig(**OVERLAP_DEFAULTS, divergence=kind,
                           temperature=temperature)
    reps = encode_dataset(enc, images, workers=workers)
    src_i, src_j = pairs[:, 0], pairs[:, 1]
    adv = attack_targeted(enc, images[src_i], reps[src_j], cfg, workers=workers)
    rep_adv = encode_dataset(enc, adv, workers=workers)
    num = divergences.batch_divergence(kind, rep_adv, reps[src_j], temperature)
    den = divergences.batch_divergence(kind, reps[src_i], reps[src_j],
                                       temperature)
    keep = den >= 1e-9
    if not keep.any():
        raise DataError("all pairs were degenerate (clean divergence ~0)")
    return num[keep] / den[keep]


def untargeted_universal_quantiles(enc, images, d_prime, dist, cfg,
                                   workers=1):
    """Universal quantiles of the attack-induced divergence per sample."""
    attacked = attack_untargeted(enc, images[d_prime], cfg, workers=workers)
    attacked_reps = encode_dataset(enc, attacked, workers=workers)
    clean_reps = encode_dataset(enc, images[d_prime], workers=workers)
    divs = divergences.batch_divergence(dist.kind, attacked_reps, clean_reps,
                                        dist.temperature)
    return np.array([universal_quantile(dist, v) for v in divs])
