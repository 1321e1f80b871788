"""Joint training of ensemble members under cross-entropy plus an agreement penalty.

The training cost for a minibatch is

    J = Je + lambda * Ja

where ``Je`` is the member-averaged cross-entropy on the clean batch and
``Ja`` is the mean pairwise dot product of member softmax outputs on a
uniformly perturbed copy of the same batch. Both terms are batch means.
"""
import logging
from dataclasses import astuple, dataclass, field, replace

import numpy as np

from . import kernels, nn

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    n_members: int = 5
    hidden: int = 128
    lam: float = 1.0
    eta: float = 0.18
    learning_rate: float = 0.1
    weight_decay: float = 1e-4
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    init_scale: float = 1.0

    def __post_init__(self):
        if self.n_members < 1:
            raise ConfigError("n_members must be >= 1")
        if self.n_members < 2 and self.lam != 0:
            raise ConfigError("the agreement term needs n_members >= 2 (or lam = 0)")
        if self.hidden < 1:
            raise ConfigError("hidden must be >= 1")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if self.eta < 0:
            raise ConfigError("eta must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.init_scale <= 0:
            raise ConfigError("init_scale must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class Ensemble:
    members: tuple
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        arch = self.members[0].arch
        if any(m.arch != arch for m in self.members):
            raise ValueError("all members must share one architecture")

    @property
    def arch(self):
        return self.members[0].arch

    @property
    def n_members(self):
        return len(self.members)

    def forward(self, x):
        return [nn.forward(m, x) for m in self.members]

    def softmaxes(self, x):
        """Member softmax outputs stacked as ``(N, B, K)`` (or ``(N, K)`` for one input)."""
        return np.stack([t.softmax for t in self.forward(x)])

    def logits(self, x):
        return np.stack([t.logits for t in self.forward(x)])


def init_ensemble(arch, n_members, seed, init_scale=1.0):
    """Independently initialised members, one seed sequence child per member."""
    children = np.random.SeedSequence(seed).spawn(3)[0].spawn(n_members)
    return Ensemble([nn.init_params(arch, np.random.default_rng(c), init_scale) for c in children])


@dataclass
class NoiseSpec:
    eta: float
    rng: np.random.Generator

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigError("eta must be >= 0")

    @classmethod
    def seeded(cls, eta, seed):
        return cls(eta, np.random.default_rng(seed))


def perturb_uniform(x, spec):
    """``x + eps`` with each coordinate of eps drawn from ``[-eta, eta)``; no clipping."""
    x = np.asarray(x, dtype=np.float64)
    if spec.eta == 0:
        return x.copy()
    # uniform(-eta, eta) is half-open: low inclusive, high exclusive
    return x + spec.rng.uniform(-spec.eta, spec.eta, size=x.shape)


def agreement_term(softmaxes):
    """Mean pairwise dot product of N member softmax vectors."""
    p = np.asarray(softmaxes, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 2:
        raise ValueError("agreement_term expects an (N >= 2, K) array")
    ja, _ = kernels.agreement(p[:, None, :])
    return float(ja[0])


@dataclass(frozen=True)
class LossParts:
    J: float
    Je: float
    Ja: float


def _loss_and_logit_grads(ensemble, x, y, lam, x_noisy):
    """Loss parts plus per-member gradients of J on clean and perturbed logits."""
    n = ensemble.n_members
    b = x.shape[0]
    clean = ensemble.forward(x)
    ce = np.mean([nn.cross_entropy(t, y) for t in clean], axis=0)
    je = float(np.mean(ce))
    g_clean = [nn.cross_entropy_logit_grad(t, y) / (n * b) for t in clean]
    if n >= 2:
        noisy = ensemble.forward(x_noisy)
        ja_per, ja_grad = kernels.agreement(np.stack([t.softmax for t in noisy]))
        ja = float(np.mean(ja_per))
        g_noisy = ja_grad * (lam / b)
    else:
        noisy, ja, g_noisy = None, float("nan"), None
    return LossParts(je + lam * ja if n >= 2 else je, je, ja), clean, g_clean, noisy, g_noisy


def _check_batch(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("batch must be a non-empty (B, d_in) array")
    if y.shape != (x.shape[0],):
        raise ValueError("labels must align with inputs")
    return x, y


def joint_loss(ensemble, x, y, lam, noise):
    """``(J, Je, Ja)`` on a minibatch; Ja uses one fresh perturbation of the batch."""
    x, y = _check_batch(x, y)
    if ensemble.n_members < 2:
        raise ValueError("joint loss needs at least two members")
    x_noisy = perturb_uniform(x, noise)
    parts, *_ = _loss_and_logit_grads(ensemble, x, y, lam, x_noisy)
    return parts


def joint_grads(ensemble, x, y, lam, x_noisy):
    """Loss parts and per-member parameter gradients of J for a fixed perturbation."""
    x, y = _check_batch(x, y)
    parts, clean, g_clean, noisy, g_noisy = _loss_and_logit_grads(ensemble, x, y, lam, x_noisy)
    grads = []
    for i, member in enumerate(ensemble.members):
        g = nn.backward_params(clean[i], member, g_clean[i])
        if noisy is not None and lam != 0:
            ga = nn.backward_params(noisy[i], member, g_noisy[i])
            g = g.zip_map(np.add, ga)
        grads.append(g)
    return parts, grads


def apply_update(ensemble, grads, learning_rate, weight_decay):
    members = [
        m.zip_map(lambda p, g: p - learning_rate * (g + weight_decay * p), g)
        for m, g in zip(ensemble.members, grads)
    ]
    return replace(ensemble, members=members)


def sgd_step(ensemble, x, y, config, noise):
    """One SGD step on J for every member; returns ``(new_ensemble, LossParts)``."""
    x, y = _check_batch(x, y)
    x_noisy = perturb_uniform(x, noise)
    parts, grads = joint_grads(ensemble, x, y, config.lam, x_noisy)
    return apply_update(ensemble, grads, config.learning_rate, config.weight_decay), parts


def accuracy(ensemble, x, y):
    """Distribution-summation accuracy."""
    probs = ensemble.softmaxes(x)
    return float(np.mean(np.argmax(probs.sum(axis=0), axis=-1) == np.asarray(y)))


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    J: float
    Je: float
    Ja: float
    clean_acc: float


def train(x, y, config, n_classes=None, init=None, monitor=None, on_epoch=None):
    """Train an ensemble with minibatch SGD; fully deterministic given ``config.seed``.

    :param x: training inputs, ``(n, d_in)`` with values in [0, 1]
    :param y: integer labels in ``[0, n_classes)``
    :param init: optional starting ensemble (defaults to a seeded init)
    :param monitor: optional ``(x, y)`` held-out batch; J on it is logged each epoch
    :param on_epoch: optional callback ``(EpochLog, ensemble)`` after each epoch
    :return: ``(ensemble, logs)``
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    k = int(n_classes if n_classes is not None else y.max() + 1)
    if y.min() < 0 or y.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    arch = (x.shape[1], config.hidden, k)
    _, shuffle_seed, noise_seed = np.random.SeedSequence(config.seed).spawn(3)
    ens = init if init is not None else init_ensemble(arch, config.n_members, config.seed, config.init_scale)
    if ens.arch != arch or ens.n_members != config.n_members:
        raise ValueError("initial ensemble does not match config")
    shuffle_rng = np.random.default_rng(shuffle_seed)
    noise = NoiseSpec(config.eta, np.random.default_rng(noise_seed))
    if monitor is None:
        m = min(1000, x.shape[0])
        monitor = (x[:m], y[:m])
    mx, my = np.asarray(monitor[0], dtype=np.float64), np.asarray(monitor[1])
    monitor_noisy = perturb_uniform(mx, NoiseSpec.seeded(config.eta, config.seed ^ 0x5EED))

    logs = []
    n = x.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                ens, parts = sgd_step(ens, x[idx], y[idx], config, noise)
            except nn.NonFiniteError as exc:
                raise TrainingDiverged(f"parameters became non-finite in epoch {epoch} at offset {start}") from exc
            if not np.isfinite(parts.J):
                raise TrainingDiverged(f"loss became non-finite in epoch {epoch} at offset {start}")
        parts = _loss_and_logit_grads(ens, mx, my, config.lam, monitor_noisy)[0]
        entry = EpochLog(epoch, parts.J, parts.Je, parts.Ja, accuracy(ens, mx, my))
        if not np.isfinite(entry.Je):
            raise TrainingDiverged(f"monitoring loss became non-finite after epoch {epoch}")
        logs.append(entry)
        log.info("epoch %d J=%.4f Je=%.4f Ja=%.4f acc=%.4f", *astuple(entry))
        if on_epoch is not None:
            on_epoch(entry, ens)

    meta = {"seed": config.seed, "lam": config.lam, "eta": config.eta}
    return replace(ens, train_meta=meta), logs
