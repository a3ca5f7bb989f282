"""Gradient-sign attacks on representation encoders.

The iterative core ascends an arbitrary scalar loss under an L-infinity
budget: step, project onto the epsilon-ball, clip to valid pixels.  The
named attacks are specializations plugging in divergence losses:

* untargeted one-step: maximize d(f(x), f(x + eta)) for a small probe eta,
* targeted one-step: minimize d(f(x), f(target)),
* iterative untargeted: maximize d(f(iterate), f(x)),
* iterative targeted: minimize d(f(iterate), f(target)),

with single-step behavior recovered by one iteration without initialization
noise.  Batch losses couple samples through a joint objective (e.g. the
contrastive batch loss); per-sample projection still applies.

Anchor representations are always constants under differentiation; only the
live iterate receives gradients.  sign(0) = 0, so exact fixed points stay
fixed.
"""

import dataclasses

import numpy as np

from . import autodiff as ad
from . import divergences
from .autodiff import Tensor, backward
from .errors import ConfigError, GraphError
from .seeding import item_generator

INIT_MODES = ("random-uniform", "eta-perturbation", "none")
ATTACK_MODES = ("untargeted", "targeted")


@dataclasses.dataclass(frozen=True)
class AttackConfig:
    """Budget, step size and loss selection for one attack family."""

    epsilon: float = 0.05
    alpha: float = 0.001
    iterations: int = 10
    mode: str = "untargeted"
    init: str = "random-uniform"
    eta_scale: float = 1e-3
    divergence: str = "l2"
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.alpha <= self.epsilon <= 1.0):
            raise ConfigError(
                f"need 0 < alpha <= epsilon <= 1, got alpha={self.alpha}, "
                f"epsilon={self.epsilon}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.mode not in ATTACK_MODES:
            raise ConfigError(f"unknown attack mode {self.mode!r}")
        if self.init not in INIT_MODES:
            raise ConfigError(f"unknown init mode {self.init!r}")
        divergences.validate_kind(self.divergence)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_json_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_json_dict(cls, d):
        return cls(**d)


@dataclasses.dataclass
class AttackResult:
    """Adversarial image(s), per-iteration objective values, config echo."""

    adversarial: np.ndarray
    trajectory: np.ndarray
    config: AttackConfig

    def to_json_dict(self):
        return {
            "adversarial": self.adversarial.tolist(),
            "trajectory": self.trajectory.tolist(),
            "config": self.config.to_json_dict(),
        }


def clip01(x):
    """Clamp pixel values to [0, 1]."""
    return np.clip(x, 0.0, 1.0)


def project_linf(x_hat, x, epsilon):
    """Project x_hat onto the L-infinity ball of radius epsilon around x."""
    if x_hat.shape != x.shape:
        raise ConfigError(
            f"project_linf shapes differ: {x_hat.shape} vs {x.shape}")
    return np.clip(x_hat, x - epsilon, x + epsilon)


# -- loss plugins -------------------------------------------------------------


class DivergenceFromClean:
    """Ascend d(f(iterate), f(x)): the iterative untargeted objective."""

    negate_trajectory = False

    def __init__(self, kind="l2", temperature=1.0):
        self.kind = kind
        self.temperature = temperature
        self._anchor = None

    def prepare(self, enc, x_clean, draw):
        self._anchor = enc.encode(x_clean).data

    def loss(self, enc, x_clean, iterate):
        rep = enc.encode(iterate)
        if rep.data.ndim == 1:
            return divergences.divergence_graph(
                self.kind, rep, self._anchor, self.temperature)
        per = divergences.batch_divergence_graph(
            self.kind, rep, self._anchor, self.temperature)
        return ad.tsum(per)


class DivergenceToTarget:
    """Descend d(f(iterate), target): the targeted objective (negated loss)."""

    negate_trajectory = True

    def __init__(self, target, kind="l2", temperature=1.0):
        self.kind = kind
        self.temperature = temperature
        self.target = np.asarray(target, dtype=np.float64)

    def prepare(self, enc, x_clean, draw):
        pass

    def loss(self, enc, x_clean, iterate):
        rep = enc.encode(iterate)
        if rep.data.ndim == 1:
            d = divergences.divergence_graph(
                self.kind, rep, self.target, self.temperature)
        else:
            d = ad.tsum(divergences.batch_divergence_graph(
                self.kind, rep, self.target, self.temperature))
        return -d


class EtaProbeDivergence:
    """Ascend d(f(x), f(x + eta)) for a small random probe eta.

    The probe anchor guarantees a non-zero gradient for the one-step
    untargeted attack; eta is drawn per sample from the attack seed and the
    probed point is clipped back into the pixel range before encoding.
    """

    negate_trajectory = False

    def __init__(self, kind="l2", temperature=1.0, eta_scale=1e-3):
        self.kind = kind
        self.temperature = temperature
        self.eta_scale = eta_scale
        self._anchor = None

    def prepare(self, enc, x_clean, draw):
        eta = draw(lambda g, s: g.uniform(-self.eta_scale, self.eta_scale,
                                          size=s))
        self._anchor = enc.encode(clip01(x_clean + eta)).data

    def loss(self, enc, x_clean, iterate):
        rep = enc.encode(iterate)
        if rep.data.ndim == 1:
            return divergences.divergence_graph(
                self.kind, rep, self._anchor, self.temperature)
        return ad.tsum(divergences.batch_divergence_graph(
            self.kind, rep, self._anchor, self.temperature))


class InfoNCEBatchLoss:
    """Joint contrastive batch objective against fixed alternative views.

    For iterates X and constant views V (one per sample), the objective is
    sum_i -log( exp(f(x_i) . f(v_i) / T) / sum_j exp(f(x_j) . f(v_i) / T) ),
    coupling every sample of the batch through the normalizing sums.
    """

    negate_trajectory = False

    def __init__(self, views, temperature=0.2):
        self.views = np.asarray(views, dtype=np.float64)
        self.temperature = temperature
        self._view_reps = None

    def prepare(self, enc, x_clean, draw):
        self._view_reps = enc.encode(self.views).data

    def loss(self, enc, x_clean, iterate):
        reps = enc.encode(iterate)
        n = reps.data.shape[0]
        logits = ad.matmul(reps, Tensor(self._view_reps.T * (1.0 / self.temperature)))
        cols = ad.softmax_last(ad.transpose2d(logits))
        picked = ad.mul(ad.log(cols), Tensor(np.eye(n)))
        return -ad.tsum(picked)


# -- engines ------------------------------------------------------------------


def _per_sample_rng(seed, index_base, shape, batched):
    """Draw init noise per sample from counter-based streams.

    Sample i always consumes stream (seed, index_base + i), so results do not
    depend on how a sample set was chunked into batches.
    """
    def draw(fn):
        if not batched:
            return fn(item_generator(seed, index_base), shape)
        rows = [fn(item_generator(seed, index_base + i), shape[1:])
                for i in range(shape[0])]
        return np.stack(rows)
    return draw


def _init_iterate(x, cfg, draw):
    if cfg.init == "random-uniform":
        noise = draw(lambda g, s: g.uniform(-cfg.epsilon, cfg.epsilon, size=s))
        return clip01(x + noise)
    if cfg.init == "eta-perturbation":
        noise = draw(lambda g, s: g.uniform(-cfg.eta_scale, cfg.eta_scale, size=s))
        return clip01(x + noise)
    return x.copy()


def _run(enc, x, plugin, cfg, batched, index_base):
    x = np.asarray(x, dtype=np.float64)
    draw = _per_sample_rng(cfg.seed, index_base, x.shape, batched)
    if hasattr(plugin, "prepare"):
        plugin.prepare(enc, x, draw)

    iterate = _init_iterate(x, cfg, draw)
    trajectory = np.empty(cfg.iterations + 1)
    for step in range(cfg.iterations):
        leaf = Tensor(iterate, requires_grad=True)
        loss = plugin.loss(enc, x, leaf)
        if loss.data.size != 1:
            raise GraphError(
                f"loss plugin must return a scalar, got shape {loss.data.shape}")
        if loss.requires_grad:
            backward(loss)
            grad = leaf.grad if leaf.grad is not None else np.zeros_like(x)
        else:
            grad = np.zeros_like(x)
        trajectory[step] = loss.item()
        iterate = clip01(project_linf(iterate + cfg.alpha * np.sign(grad),
                                      x, cfg.epsilon))
    trajectory[cfg.iterations] = plugin.loss(enc, x, Tensor(iterate)).item()
    if plugin.negate_trajectory:
        trajectory = -trajectory
    return AttackResult(iterate, trajectory, cfg)


def loss_attack_instance(enc, x, plugin, cfg, index_base=0):
    """Iterated sign-ascent of an instance loss for one image.

    ``plugin.loss(enc, x_clean, iterate_tensor)`` must return a scalar graph.
    One iteration without initialization noise is the single-step attack.
    """
    return _run(enc, x, plugin, cfg, batched=False, index_base=index_base)


def loss_attack_batch(enc, batch, plugin, cfg, index_base=0):
    """Iterated sign-ascent of a joint batch loss; per-sample projection."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4:
        raise ConfigError(f"batch attack expects (N,C,H,W), got {batch.shape}")
    return _run(enc, batch, plugin, cfg, batched=True, index_base=index_base)


def _divergence_plugin(cfg, target):
    if cfg.mode == "targeted":
        if target is None:
            raise ConfigError("targeted mode requires a target representation")
        return DivergenceToTarget(target, cfg.divergence, cfg.temperature)
    if target is not None:
        raise ConfigError("untargeted mode takes no target")
    return DivergenceFromClean(cfg.divergence, cfg.temperature)


def u_fgsm(enc, x, cfg, target=None, index_base=0):
    """One gradient-sign step from the clean image.

    Untargeted mode anchors at a small probe of the input itself; targeted
    mode descends toward the target representation.
    """
    x = np.asarray(x, dtype=np.float64)
    one_step = cfg.replace(iterations=1, init="none", alpha=cfg.alpha)
    if cfg.mode == "targeted":
        plugin = _divergence_plugin(cfg, target)
    else:
        if target is not None:
            raise ConfigError("untargeted mode takes no target")
        plugin = EtaProbeDivergence(cfg.divergence, cfg.temperature,
                                    cfg.eta_scale)
    batched = x.ndim == 4
    return _run(enc, x, plugin, one_step, batched=batched,
                index_base=index_base)


def u_pgd(enc, x, cfg, target=None, index_base=0):
    """Iterated divergence attack with projection; the default workhorse.

    ``init="none"`` gives the basic iterative variant without randomized
    initialization.
    """
    x = np.asarray(x, dtype=np.float64)
    plugin = _divergence_plugin(cfg, target)
    batched = x.ndim == 4
    return _run(enc, x, plugin, cfg, batched=batched, index_base=index_base)
