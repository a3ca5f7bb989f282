"""Impersonation evaluation: fooling a private classifier through its encoder.

The attacker sees only the encoder: each source image is driven toward a
paired target image's representation, and only afterwards does the private
classifier score the attacked images.  The classifier is an opaque callback;
a query counter in the report proves the attack loop never touched it.
Success rates are computed per direction and then averaged, so class
asymmetries stay visible.
"""

import dataclasses

import numpy as np

from . import divergences
from .attacks import AttackConfig
from .errors import DataError
from .measures import attack_targeted, encode_dataset
from .seeding import derive_seed, generator

IMPERSONATION_DEFAULTS = dict(epsilon=0.10, alpha=0.01, iterations=50,
                              mode="targeted")


@dataclasses.dataclass
class PairRecord:
    source_index: int
    target_index: int
    direction: str
    fooled: bool
    relative_quantile: float

    def to_json_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass
class ImpersonationReport:
    rate_a_to_b: float
    rate_b_to_a: float
    averaged_rate: float
    class_a: int
    class_b: int
    pair_count: int
    attack: dict
    probe_queries_during_attack: int
    pairs: list

    def to_json_dict(self):
        d = dataclasses.asdict(self)
        d["pairs"] = [p.to_json_dict() for p in self.pairs]
        return d


class _CountingClassifier:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, batch):
        self.calls += 1
        return np.asarray(self.fn(batch), dtype=np.int64)


def _correct_subset(classify, images, label):
    pred = classify(images)
    idx = np.flatnonzero(pred == label)
    if idx.size == 0:
        raise DataError(
            f"no correctly classified samples in class {label}")
    return idx


def _direction(enc, classify, sources, src_idx, target_images, tgt_idx,
               target_label, name, cfg, kind, temperature, workers):
    target_reps = encode_dataset(enc, target_images, workers=workers)
    adv = attack_targeted(enc, sources, target_reps,
                          cfg.replace(seed=derive_seed(cfg.seed, name)),
                          workers=workers)
    adv_reps = encode_dataset(enc, adv, workers=workers)
    src_reps = encode_dataset(enc, sources, workers=workers)
    num = divergences.batch_divergence(kind, adv_reps, target_reps, temperature)
    den = divergences.batch_divergence(kind, src_reps, target_reps, temperature)
    rel = np.where(den >= 1e-9, num / np.maximum(den, 1e-300), np.nan)
    return adv, src_idx, tgt_idx, rel


def impersonate(enc, classify, images_a, label_a, images_b, label_b,
                cfg=None, pair_count=None, seed=0, kind="l2",
                temperature=1.0, workers=1):
    """Run the two-directional impersonation protocol.

    Only images the classifier already gets right participate.  A seeded
    bijection pairs equal-size subsets of the two classes; each member of a
    pair attacks toward the other's representation.  The classifier is
    queried once per direction for filtering and once for scoring, never
    during attack construction.
    """
    if cfg is None:
        cfg = AttackConfig(**IMPERSONATION_DEFAULTS, divergence=kind,
                           temperature=temperature, seed=seed)
    counter = _CountingClassifier(classify)
    correct_a = _correct_subset(counter, images_a, label_a)
    correct_b = _correct_subset(counter, images_b, label_b)

    m = min(correct_a.size, correct_b.size)
    if pair_count is not None:
        m = min(m, int(pair_count))
    sel_a = correct_a[generator(derive_seed(seed, "pair-a")).permutation(
        correct_a.size)][:m]
    sel_b = correct_b[generator(derive_seed(seed, "pair-b")).permutation(
        correct_b.size)][:m]

    calls_before_attack = counter.calls
    adv_ab, src_ab, tgt_ab, rel_ab = _direction(
        enc, counter, images_a[sel_a], sel_a, images_b[sel_b], sel_b,
        label_b, "a-to-b", cfg, kind, temperature, workers)
    adv_ba, src_ba, tgt_ba, rel_ba = _direction(
        enc, counter, images_b[sel_b], sel_b, images_a[sel_a], sel_a,
        label_a, "b-to-a", cfg, kind, temperature, workers)
    attack_queries = counter.calls - calls_before_attack

    fooled_ab = counter(adv_ab) == label_b
    fooled_ba = counter(adv_ba) == label_a

    records = []
    for k in range(m):
        records.append(PairRecord(int(src_ab[k]), int(tgt_ab[k]), "a-to-b",
                                  bool(fooled_ab[k]), float(rel_ab[k])))
        records.append(PairRecord(int(src_ba[k]), int(tgt_ba[k]), "b-to-a",
                                  bool(fooled_ba[k]), float(rel_ba[k])))

    rate_ab = float(fooled_ab.mean())
    rate_ba = float(fooled_ba.mean())
    return ImpersonationReport(
        rate_a_to_b=rate_ab,
        rate_b_to_a=rate_ba,
        averaged_rate=0.5 * (rate_ab + rate_ba),
        class_a=int(label_a),
        class_b=int(label_b),
        pair_count=m,
        attack=cfg.to_json_dict(),
        probe_queries_during_attack=int(attack_queries),
        pairs=records,
    )
