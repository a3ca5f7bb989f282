"""Contrastive pretraining and its adversarial fine-tuning modes.

Two training loops are provided.  The queue-based loop contrasts each query
against its momentum-encoded key and a memory queue of past keys.  The
queue-free loop contrasts two views symmetrically through a predictor head
against a momentum encoder.  Either loop can fold adversarial examples into
the objective in three ways:

* ``targeted``: each query is driven toward its batch neighbor's key
  representation (the batch rolled by one);
* ``untargeted``: each query is driven away from its own representation;
* ``batch-loss``: the whole batch jointly ascends the contrastive training
  loss itself.

``adversarial-mode: none`` gives the standard training baseline.  Updates
are plain SGD with tenfold decay at 60% and 80% of the epochs; the key
encoder follows by exponential momentum.
"""

import dataclasses

import numpy as np

from . import autodiff as ad
from .attacks import AttackConfig, loss_attack_batch, u_pgd
from .autodiff import Tensor, backward
from .encoders import Encoder, EncoderSpec
from .errors import ConfigError, DomainError
from .seeding import derive_seed, generator, item_generator

LOOPS = ("moco-v2", "moco-v3")
ADV_MODES = ("none", "targeted", "untargeted", "batch-loss")

DEFAULT_ATTACK = AttackConfig(epsilon=0.1, alpha=0.02, iterations=5,
                              mode="untargeted")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.5
    momentum: float = 0.99       # key-encoder momentum
    temperature: float = 0.2
    queue_size: int = 256
    loop: str = "moco-v2"
    adversarial_mode: str = "none"
    attack: AttackConfig = DEFAULT_ATTACK
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.momentum < 1.0:
            raise ConfigError("momentum must lie in (0, 1)")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.loop not in LOOPS:
            raise ConfigError(f"unknown training loop {self.loop!r}")
        if self.adversarial_mode not in ADV_MODES:
            raise ConfigError(
                f"unknown adversarial mode {self.adversarial_mode!r}")
        if self.loop == "moco-v2" and self.queue_size < self.batch_size:
            raise ConfigError("queue_size must be >= batch_size")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_json_dict(self):
        d = dataclasses.asdict(self)
        d["attack"] = self.attack.to_json_dict()
        return d

    @classmethod
    def from_json_dict(cls, d):
        d = dict(d)
        d["attack"] = AttackConfig.from_json_dict(d["attack"])
        return cls(**d)


def augment(images, seed):
    """Random view: shift up to +-2 px (zero fill), horizontal flip with
    probability 1/2, per-pixel jitter up to +-0.05, clipped to [0,1].

    Per-sample counter streams make the result independent of batching.
    """
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 3
    batch = images[None] if single else images
    out = np.empty_like(batch)
    side = batch.shape[-1]
    for i in range(batch.shape[0]):
        rng = item_generator(seed, i)
        dy, dx = rng.integers(-2, 3, size=2)
        img = np.zeros_like(batch[i])
        ys = slice(max(0, dy), min(side, side + dy))
        yd = slice(max(0, -dy), min(side, side - dy))
        xs = slice(max(0, dx), min(side, side + dx))
        xd = slice(max(0, -dx), min(side, side - dx))
        img[:, ys, xs] = batch[i][:, yd, xd]
        if rng.uniform() < 0.5:
            img = img[:, :, ::-1]
        img = img + rng.uniform(-0.05, 0.05, size=img.shape)
        out[i] = np.clip(img, 0.0, 1.0)
    return out[0] if single else out


def _check_unit_rows(name, arr):
    if arr.size and np.any(np.abs(np.linalg.norm(arr, axis=-1) - 1.0) > 1e-6):
        raise DomainError(f"{name} must be L2-normalized row-wise")


def info_nce(q, k_pos, negatives, temperature):
    """Contrastive cross-entropy with the positive key at index 0.

    ``q`` is a live (N, d) tensor; ``k_pos`` (N, d) and ``negatives`` (K, d)
    are constants.  All representations must be unit-normalized.  With no
    negatives the loss is exactly zero.
    """
    k_pos = np.asarray(k_pos, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64).reshape(-1, k_pos.shape[-1])
    _check_unit_rows("queries", q.data)
    _check_unit_rows("positive keys", k_pos)
    _check_unit_rows("negative keys", negatives)
    n = q.data.shape[0]
    l_pos = ad.reshape(ad.sum_last(ad.mul(q, Tensor(k_pos))), (n, 1))
    if negatives.shape[0]:
        l_neg = ad.matmul(q, Tensor(negatives.T))
        logits = ad.concat([l_pos, l_neg], axis=1)
    else:
        logits = l_pos
    probs = ad.softmax_last(ad.mul(logits, Tensor(1.0 / temperature)))
    first = np.zeros((n, logits.data.shape[1]))
    first[:, 0] = 1.0
    picked = ad.mul(ad.log(probs), Tensor(first))
    return ad.mul(ad.tsum(picked), Tensor(-1.0 / n))


def pairwise_infonce(q, keys, temperature):
    """Batch-contrastive loss with positives on the diagonal.

    ``q`` is a live (N, d) tensor (normalized in-graph), ``keys`` a constant
    (N, d) array; every other key in the batch acts as a negative.
    """
    keys = np.asarray(keys, dtype=np.float64)
    norms = np.linalg.norm(keys, axis=-1)
    if np.any(norms < 1e-12):
        raise DomainError("zero key representation")
    keys = keys / norms[:, None]
    qn = ad.scale_rows(q, ad.reciprocal(ad.sqrt(ad.sum_last(ad.mul(q, q)))))
    n = q.data.shape[0]
    logits = ad.matmul(qn, Tensor(keys.T * (1.0 / temperature)))
    probs = ad.softmax_last(logits)
    picked = ad.mul(ad.log(probs), Tensor(np.eye(n)))
    return ad.mul(ad.tsum(picked), Tensor(-1.0 / n))


class Queue:
    """Fixed-size circular buffer of detached key representations."""

    def __init__(self, size, dim, seed):
        rng = generator(seed)
        buf = rng.standard_normal((size, dim))
        self.buffer = buf / np.linalg.norm(buf, axis=1, keepdims=True)
        self.ptr = 0

    @property
    def size(self):
        return self.buffer.shape[0]

    def snapshot(self):
        return self.buffer.copy()

    def replace_oldest(self, keys):
        """Enqueue a batch, dequeuing the same number of oldest entries."""
        n = keys.shape[0]
        if n > self.size:
            raise ConfigError("batch larger than queue")
        end = self.ptr + n
        if end <= self.size:
            self.buffer[self.ptr:end] = keys
        else:
            split = self.size - self.ptr
            self.buffer[self.ptr:] = keys[:split]
            self.buffer[:end - self.size] = keys[split:]
        self.ptr = end % self.size


class QueueInfoNCELoss:
    """Batch attack objective: the queue-contrastive training loss itself."""

    negate_trajectory = False

    def __init__(self, keys, queue_snapshot, temperature):
        self.keys = np.asarray(keys, dtype=np.float64)
        self.queue = np.asarray(queue_snapshot, dtype=np.float64)
        self.temperature = temperature

    def prepare(self, enc, x_clean, draw):
        pass

    def loss(self, enc, x_clean, iterate):
        q = enc.encode(iterate)
        return info_nce(q, self.keys, self.queue, self.temperature)


class ViewInfoNCELoss:
    """Batch attack objective for the queue-free loop: ascend the
    diagonal-positive contrastive loss against fixed key views."""

    negate_trajectory = False

    def __init__(self, key_reps, temperature):
        self.key_reps = np.asarray(key_reps, dtype=np.float64)
        self.temperature = temperature

    def prepare(self, enc, x_clean, draw):
        pass

    def loss(self, enc, x_clean, iterate):
        return pairwise_infonce(enc.encode(iterate), self.key_reps,
                                self.temperature)


def _lr_at(cfg, epoch):
    stage = (epoch >= int(0.6 * cfg.epochs)) + (epoch >= int(0.8 * cfg.epochs))
    return cfg.lr * (0.1 ** stage)


def _roll_targets(reps):
    return np.roll(reps, shift=1, axis=0)


def train_moco_v2(enc, images, cfg):
    """Queue-based contrastive (fine-)tuning; returns (encoder, loss history).

    Follows the classic recipe: two augmented views per sample, queries
    through the learned encoder, keys through its momentum copy, negatives
    from the queue.  Adversarial queries are concatenated to the clean ones
    with keys duplicated.
    """
    if cfg.loop != "moco-v2":
        raise ConfigError("config loop must be moco-v2")
    if not enc.spec.normalize:
        raise ConfigError("contrastive training requires normalize=True")
    query = enc.copy()
    key = query.copy()
    queue = Queue(cfg.queue_size, enc.repr_dim, derive_seed(cfg.seed, "queue"))
    n = images.shape[0]
    history = []
    for epoch in range(cfg.epochs):
        lr_t = _lr_at(cfg, epoch)
        order = generator(derive_seed(cfg.seed, "shuffle", epoch)).permutation(n)
        losses = []
        for step, s in enumerate(range(0, n - cfg.batch_size + 1,
                                       cfg.batch_size)):
            sel = order[s:s + cfg.batch_size]
            x = images[sel]
            x_q = augment(x, derive_seed(cfg.seed, "aug-q", epoch, step))
            x_k = augment(x, derive_seed(cfg.seed, "aug-k", epoch, step))
            k = key.features(x_k)

            atk = cfg.attack.replace(
                seed=derive_seed(cfg.seed, "attack", epoch, step))
            if cfg.adversarial_mode == "targeted":
                targets = _roll_targets(query.features(x_k))
                x_adv = u_pgd(query, x_q, atk.replace(mode="targeted"),
                              target=targets).adversarial
            elif cfg.adversarial_mode == "untargeted":
                x_adv = u_pgd(query, x_q,
                              atk.replace(mode="untargeted")).adversarial
            elif cfg.adversarial_mode == "batch-loss":
                plugin = QueueInfoNCELoss(k, queue.snapshot(), cfg.temperature)
                x_adv = loss_attack_batch(query, x_q, plugin, atk).adversarial
            else:
                x_adv = None

            params = query.param_tensors(requires_grad=True)
            rep_q = query.forward_graph(Tensor(x_q), params)
            if x_adv is not None:
                rep_adv = query.forward_graph(Tensor(x_adv), params)
                q = ad.concat([rep_q, rep_adv], axis=0)
                k_all = np.concatenate([k, k], axis=0)
            else:
                q = rep_q
                k_all = k
            loss = info_nce(q, k_all, queue.snapshot(), cfg.temperature)
            backward(loss)
            query.params -= lr_t * query.flat_grad(params)
            key.params *= cfg.momentum
            key.params += (1.0 - cfg.momentum) * query.params
            queue.replace_oldest(k)
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
    query.provenance = {
        "loop": "moco-v2",
        "adversarial_mode": cfg.adversarial_mode,
        "epochs": cfg.epochs,
        "attack": (cfg.attack.to_json_dict()
                   if cfg.adversarial_mode != "none" else None),
        "parent": enc.provenance or None,
    }
    return query, history


class PredictorHead:
    """Two-layer ReLU head applied to base representations."""

    def __init__(self, dim, hidden=None, seed=0):
        hidden = hidden or 2 * dim
        rng = generator(derive_seed(seed, "predictor"))
        b1 = np.sqrt(6.0 / (dim + hidden))
        b2 = np.sqrt(6.0 / (hidden + dim))
        self.shapes = [("p_w1", (dim, hidden)), ("p_b1", (hidden,)),
                       ("p_w2", (hidden, dim)), ("p_b2", (dim,))]
        self.params = np.concatenate([
            rng.uniform(-b1, b1, dim * hidden), np.zeros(hidden),
            rng.uniform(-b2, b2, hidden * dim), np.zeros(dim)])

    def param_tensors(self, requires_grad=False):
        out, pos = {}, 0
        for name, shape in self.shapes:
            size = int(np.prod(shape))
            out[name] = Tensor(self.params[pos:pos + size].reshape(shape),
                               requires_grad=requires_grad)
            pos += size
        return out

    def flat_grad(self, tensors):
        grads = []
        for name, shape in self.shapes:
            g = tensors[name].grad
            grads.append(np.zeros(int(np.prod(shape))) if g is None
                         else g.reshape(-1))
        return np.concatenate(grads)

    def forward_graph(self, t, params):
        h = ad.relu(ad.add_bias(ad.matmul(t, params["p_w1"]), params["p_b1"]))
        return ad.add_bias(ad.matmul(h, params["p_w2"]), params["p_b2"])

    def apply(self, reps):
        return self.forward_graph(Tensor(np.asarray(reps, dtype=np.float64)),
                                  self.param_tensors()).data


class _ComposedEncoder:
    """Base encoder plus predictor head, seen as one encoder by attacks."""

    def __init__(self, base, predictor):
        self.base = base
        self.predictor = predictor

    def encode(self, x):
        rep = self.base.encode(x)
        return self.predictor.forward_graph(rep,
                                            self.predictor.param_tensors())


def train_moco_v3(enc, images, cfg, predictor=None):
    """Queue-free symmetric contrastive (fine-)tuning with a predictor head.

    The momentum encoder is updated before representations are computed.
    Returns (encoder, predictor, loss history).
    """
    if cfg.loop != "moco-v3":
        raise ConfigError("config loop must be moco-v3")
    if not enc.spec.normalize:
        raise ConfigError("contrastive training requires normalize=True")
    base = enc.copy()
    predictor = predictor or PredictorHead(enc.repr_dim,
                                           seed=derive_seed(cfg.seed, "head"))
    momentum_enc = base.copy()
    composed = _ComposedEncoder(base, predictor)
    n = images.shape[0]
    history = []
    for epoch in range(cfg.epochs):
        lr_t = _lr_at(cfg, epoch)
        order = generator(derive_seed(cfg.seed, "shuffle", epoch)).permutation(n)
        losses = []
        for step, s in enumerate(range(0, n - cfg.batch_size + 1,
                                       cfg.batch_size)):
            sel = order[s:s + cfg.batch_size]
            x = images[sel]
            x0 = augment(x, derive_seed(cfg.seed, "aug-0", epoch, step))
            x1 = augment(x, derive_seed(cfg.seed, "aug-1", epoch, step))

            atk = cfg.attack.replace(
                seed=derive_seed(cfg.seed, "attack", epoch, step))
            if cfg.adversarial_mode == "targeted":
                targets = _roll_targets(predictor.apply(base.features(x1)))
                x_adv = u_pgd(composed, x0, atk.replace(mode="targeted"),
                              target=targets).adversarial
            elif cfg.adversarial_mode == "untargeted":
                x_adv = u_pgd(composed, x0,
                              atk.replace(mode="untargeted")).adversarial
            elif cfg.adversarial_mode == "batch-loss":
                plugin = ViewInfoNCELoss(momentum_enc.features(x1),
                                         cfg.temperature)
                x_adv = loss_attack_batch(composed, x0, plugin, atk).adversarial
            else:
                x_adv = None

            momentum_enc.params *= cfg.momentum
            momentum_enc.params += (1.0 - cfg.momentum) * base.params

            bparams = base.param_tensors(requires_grad=True)
            pparams = predictor.param_tensors(requires_grad=True)
            q0 = predictor.forward_graph(
                base.forward_graph(Tensor(x0), bparams), pparams)
            q1 = predictor.forward_graph(
                base.forward_graph(Tensor(x1), bparams), pparams)
            k0 = momentum_enc.features(x0)
            k1 = momentum_enc.features(x1)
            loss = ad.add(pairwise_infonce(q0, k1, cfg.temperature),
                          pairwise_infonce(q1, k0, cfg.temperature))
            if x_adv is not None:
                q_adv = predictor.forward_graph(
                    base.forward_graph(Tensor(x_adv), bparams), pparams)
                k_adv = momentum_enc.features(x_adv)
                loss = ad.add(loss, ad.add(
                    pairwise_infonce(q_adv, k1, cfg.temperature),
                    pairwise_infonce(q1, k_adv, cfg.temperature)))
            backward(loss)
            base.params -= lr_t * base.flat_grad(bparams)
            predictor.params -= lr_t * predictor.flat_grad(pparams)
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
    base.provenance = {
        "loop": "moco-v3",
        "adversarial_mode": cfg.adversarial_mode,
        "epochs": cfg.epochs,
        "attack": (cfg.attack.to_json_dict()
                   if cfg.adversarial_mode != "none" else None),
        "parent": enc.provenance or None,
    }
    return base, predictor, history
