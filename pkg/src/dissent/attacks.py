"""Gradient attacks against an ensemble: FGS, Basic Iterative, DeepFool and C&W L2.

All attacks work on batches ``(B, d)`` of inputs in [0, 1] and are
deterministic. FGS and Basic Iterative ascend ``Je + lambda_attack * Ja``;
DeepFool and C&W use the sum of member logits as the discriminant.
"""
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from . import kernels, nn

KINDS = ("fgs", "bim", "deepfool", "cw")

_ALIASES = {
    "fgs": "fgs", "fgsm": "fgs",
    "bim": "bim", "basic_iterative": "bim", "basiciterative": "bim", "basic-iterative": "bim",
    "deepfool": "deepfool",
    "cw": "cw", "cw_l2": "cw", "carlini-wagner": "cw",
}

_DEFAULT_ITERATIONS = {"fgs": 1, "bim": 20, "deepfool": 50, "cw": 200}


def canonical_kind(name):
    try:
        return _ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown attack {name!r}; choose from {', '.join(KINDS)}") from None


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    epsilon: float = 0.1
    step_size: float = 0.01
    iterations: Optional[int] = None
    lambda_attack: float = 0.0
    kappa: float = 5.0
    cw_c_steps: int = 5
    cw_lr: float = 0.01
    cw_c_init: float = 1.0
    cw_c_range: tuple = (1e-3, 1e2)
    overshoot: float = 0.02
    target: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        if self.iterations is None:
            object.__setattr__(self, "iterations", _DEFAULT_ITERATIONS[self.kind])
        object.__setattr__(self, "cw_c_range", tuple(self.cw_c_range))
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lambda_attack < 0:
            raise ValueError("lambda_attack must be >= 0")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.kind == "bim" and self.step_size > self.epsilon:
            raise ValueError("step_size must not exceed epsilon")

    def to_dict(self):
        return asdict(self)


def _batch(x):
    x = np.asarray(x, dtype=np.float64)
    return (x[None], True) if x.ndim == 1 else (x, False)


def _labels(y, b):
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.shape != (b,):
        raise ValueError("labels must align with inputs")
    return y


def attack_objective_grad(ensemble, x, y, lambda_attack=0.0):
    """Input gradient of ``Je(x, y) + lambda_attack * Ja(x)``, one row per example.

    ``Je`` is the member-averaged cross-entropy and ``Ja`` the mean pairwise
    agreement evaluated on ``x`` itself.
    """
    xb, single = _batch(x)
    y = _labels(y, xb.shape[0])
    n = ensemble.n_members
    if lambda_attack != 0 and n < 2:
        raise ValueError("the agreement term needs at least two members")
    traces = ensemble.forward(xb)
    gz = [nn.cross_entropy_logit_grad(t, y) / n for t in traces]
    if lambda_attack != 0:
        _, ja_grad = kernels.agreement(np.stack([t.softmax for t in traces]))
        gz = [g + lambda_attack * ja_grad[i] for i, g in enumerate(gz)]
    grad = sum(nn.backward_input(t, m, g) for t, m, g in zip(traces, ensemble.members, gz))
    return grad[0] if single else grad


def fgs(ensemble, x, y, spec):
    """Single signed-gradient step of size epsilon, clipped to [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    g = attack_objective_grad(ensemble, x, y, spec.lambda_attack)
    return np.clip(x + spec.epsilon * np.sign(g), 0.0, 1.0)


def basic_iterative(ensemble, x, y, spec):
    """Repeated FGS steps, projected onto the epsilon box around x and onto [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x - spec.epsilon, x + spec.epsilon
    adv = x.copy()
    for _ in range(spec.iterations):
        g = attack_objective_grad(ensemble, adv, y, spec.lambda_attack)
        adv = adv + spec.step_size * np.sign(g)
        adv = np.clip(np.clip(adv, lo, hi), 0.0, 1.0)
    return adv


def sum_logits(ensemble, x):
    return np.sum(ensemble.logits(x), axis=0)


def sum_logits_jacobian(ensemble, x):
    """``(B, K, d)`` Jacobian of the summed logits."""
    return sum(nn.input_jacobian(m, x) for m in ensemble.members)


class DeepFoolResult(NamedTuple):
    adversarial: np.ndarray
    flipped: np.ndarray
    iterations: np.ndarray
    step: np.ndarray  # accumulated linearised step, before overshoot


def deepfool(ensemble, x, spec, y=None, box=(0.0, 1.0)):
    """Minimal-L2 untargeted perturbation found by iterated linearisation.

    Each iteration moves every unfinished example onto the closest boundary
    of the linearised summed-logit discriminant. The candidate point is
    ``clip(x + (1 + overshoot) * r_total, *box)``; linearisation and the
    label-change test both happen at that clipped point. Coordinates sitting
    on a box face whose step would leave the box are dropped from the
    linearisation, and ``r_total`` is pulled back to the clipped point after
    each step. ``box=None`` disables clipping.

    ``flipped`` is false when the label never changed within the iteration
    budget, or when ``y`` is given and the input was already misclassified.
    """
    x0, single = _batch(x)
    b = x0.shape[0]
    label = np.argmax(sum_logits(ensemble, x0), axis=-1)
    r_tot = np.zeros_like(x0)
    iters = np.zeros(b, dtype=np.int64)
    active = np.ones(b, dtype=bool)
    if y is not None:
        active &= label == _labels(y, b)
    rows = np.arange(b)
    scale = 1.0 + spec.overshoot

    def candidate(base, r):
        p = base + scale * r
        return p if box is None else np.clip(p, *box)

    for _ in range(spec.iterations):
        idx = rows[active]
        if idx.size == 0:
            break
        pert = candidate(x0[idx], r_tot[idx])
        f = sum_logits(ensemble, pert)
        jac = sum_logits_jacobian(ensemble, pert)
        lab = label[idx]
        sel = np.arange(idx.size)
        w = jac - jac[sel, lab][:, None, :]
        if box is not None:
            stuck = ((pert <= box[0])[:, None, :] & (w < 0)) | ((pert >= box[1])[:, None, :] & (w > 0))
            w = np.where(stuck, 0.0, w)
        fd = f - f[sel, lab][:, None]
        wnorm = np.linalg.norm(w, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            dist = np.abs(fd) / wnorm
        dist[sel, lab] = np.inf
        dist[wnorm == 0] = np.inf
        k = np.argmin(dist, axis=-1)
        wk = w[sel, k]
        coef = np.abs(fd[sel, k]) / np.maximum(wnorm[sel, k] ** 2, np.finfo(float).tiny)
        coef[~np.isfinite(dist[sel, k])] = 0.0
        r_tot[idx] += coef[:, None] * wk
        if box is not None:
            r_tot[idx] = (candidate(x0[idx], r_tot[idx]) - x0[idx]) / scale
        iters[idx] += 1
        new_label = np.argmax(sum_logits(ensemble, candidate(x0[idx], r_tot[idx])), axis=-1)
        active[idx[new_label != lab]] = False
    adv = candidate(x0, r_tot)
    flipped = np.argmax(sum_logits(ensemble, adv), axis=-1) != label
    if y is not None:
        flipped &= label == _labels(y, b)
    step = np.linalg.norm(r_tot, axis=-1)
    if single:
        return DeepFoolResult(adv[0], bool(flipped[0]), int(iters[0]), float(step[0]))
    return DeepFoolResult(adv, flipped, iters, step)


def logit_margin(z, target):
    """``Z_t - max_{i != t} Z_i`` per row."""
    z = np.atleast_2d(z)
    rows = np.arange(z.shape[0])
    other = z.copy()
    other[rows, target] = -np.inf
    return z[rows, target] - other.max(axis=-1)


def cw_targets(ensemble, x):
    """Second most likely label under the summed logits."""
    z = sum_logits(ensemble, _batch(x)[0])
    return np.argsort(-z, axis=-1, kind="stable")[:, 1]


class CWResult(NamedTuple):
    adversarial: np.ndarray
    success: np.ndarray
    distortion: np.ndarray  # L2; +inf where unsuccessful


_TANH_SHRINK = 1.0 - 1e-6


def cw_l2(ensemble, x, target, spec):
    """Targeted L2 attack on the summed logits with a tanh box reparametrisation.

    Minimises ``||delta||^2 + c * max(max_{i != t} Z_i - Z_t, -kappa)`` with
    Adam, searching ``c`` over ``spec.cw_c_range`` for ``spec.cw_c_steps``
    rounds. Successful examples (margin >= kappa) keep their lowest-distortion
    iterate; the rest return the last iterate with distortion ``+inf``.
    """
    x0, single = _batch(x)
    b, d = x0.shape
    t = np.broadcast_to(np.asarray(target, dtype=np.int64), (b,)).copy()
    rows = np.arange(b)
    kappa = spec.kappa

    best_adv = x0.copy()
    best_l2 = np.full(b, np.inf)
    already = logit_margin(sum_logits(ensemble, x0), t) >= kappa
    best_l2[already] = 0.0

    c_min, c_max = spec.cw_c_range
    c = np.full(b, float(np.clip(spec.cw_c_init, c_min, c_max)))
    lo = np.full(b, c_min)
    hi = np.full(b, np.nan)
    w0 = np.arctanh((2.0 * x0 - 1.0) * _TANH_SHRINK)
    last = x0.copy()
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8

    todo = rows[~already]
    for _ in range(spec.cw_c_steps):
        if todo.size == 0:
            break
        xs, ts, cs = x0[todo], t[todo], c[todo]
        sel = np.arange(todo.size)
        w = w0[todo].copy()
        m = np.zeros_like(w)
        v = np.zeros_like(w)
        round_ok = np.zeros(todo.size, dtype=bool)
        for it in range(1, spec.iterations + 1):
            xn = (np.tanh(w) + 1.0) / 2.0
            delta = xn - xs
            traces = ensemble.forward(xn)
            z = sum(tr.logits for tr in traces)
            other = z.copy()
            other[sel, ts] = -np.inf
            j = np.argmax(other, axis=-1)
            gap = other[sel, j] - z[sel, ts]

            l2 = np.linalg.norm(delta, axis=-1)
            ok = -gap >= kappa
            improved = ok & (l2 < best_l2[todo])
            if np.any(improved):
                best_l2[todo[improved]] = l2[improved]
                best_adv[todo[improved]] = xn[improved]
            round_ok |= ok

            gz = np.zeros_like(z)
            hinge = gap > -kappa
            gz[sel[hinge], j[hinge]] = cs[hinge]
            gz[sel[hinge], ts[hinge]] = -cs[hinge]
            gx = 2.0 * delta + sum(nn.backward_input(tr, mem, gz) for tr, mem in zip(traces, ensemble.members))
            gw = gx * (1.0 - np.tanh(w) ** 2) / 2.0
            m = beta1 * m + (1 - beta1) * gw
            v = beta2 * v + (1 - beta2) * gw * gw
            w = w - spec.cw_lr * (m / (1 - beta1**it)) / (np.sqrt(v / (1 - beta2**it)) + adam_eps)
        last[todo] = (np.tanh(w) + 1.0) / 2.0

        # log-space bisection on c, growing tenfold until a first success
        hi[todo[round_ok]] = np.fmin(hi[todo[round_ok]], cs[round_ok])
        lo[todo[~round_ok]] = np.maximum(lo[todo[~round_ok]], cs[~round_ok])
        found = np.isfinite(hi[todo])
        new_c = np.where(found, np.sqrt(lo[todo] * np.where(found, hi[todo], 1.0)), np.minimum(cs * 10.0, c_max))
        c[todo] = new_c

    success = np.isfinite(best_l2)
    adv = np.where(success[:, None], best_adv, last)
    if single:
        return CWResult(adv[0], bool(success[0]), float(best_l2[0]))
    return CWResult(adv, success, best_l2)


@dataclass
class AdvBatch:
    originals: np.ndarray
    adversarials: np.ndarray
    labels: np.ndarray
    attack: AttackSpec
    source_model_id: str
    success: np.ndarray
    per_example_l2: np.ndarray = field(default=None)

    def __post_init__(self):
        self.originals = np.asarray(self.originals, dtype=np.float64)
        self.adversarials = np.asarray(self.adversarials, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.success = np.asarray(self.success, dtype=bool)
        if self.originals.shape != self.adversarials.shape or self.originals.ndim != 2:
            raise ValueError("originals and adversarials must be aligned (B, d) arrays")
        if self.labels.shape != (self.originals.shape[0],) or self.success.shape != self.labels.shape:
            raise ValueError("labels and success flags must align with the batch")
        if self.adversarials.size and (self.adversarials.min() < 0 or self.adversarials.max() > 1):
            raise ValueError("adversarial pixels must lie in [0, 1]")
        self.per_example_l2 = np.linalg.norm(self.adversarials - self.originals, axis=-1)

    def __len__(self):
        return self.originals.shape[0]

    @property
    def counted(self):
        """Examples that enter the mean distortion (failed C&W runs are excluded)."""
        if self.attack.kind == "cw":
            return self.success
        return np.ones(len(self), dtype=bool)


def mean_l2(batch):
    if len(batch) == 0:
        raise ValueError("empty batch")
    keep = batch.counted
    if not keep.any():
        return float("nan")
    return float(np.mean(batch.per_example_l2[keep]))


def generate(ensemble, x, y, spec, source_model_id="", targets=None):
    """Run ``spec`` against ``ensemble`` and package the result as an :class:`AdvBatch`."""
    x, _ = _batch(x)
    y = _labels(y, x.shape[0])
    if spec.kind == "fgs":
        adv = fgs(ensemble, x, y, spec)
    elif spec.kind == "bim":
        adv = basic_iterative(ensemble, x, y, spec)
    elif spec.kind == "deepfool":
        res = deepfool(ensemble, x, spec)
        return AdvBatch(x, res.adversarial, y, spec, source_model_id, res.flipped)
    else:
        if targets is None:
            targets = spec.target if spec.target is not None else cw_targets(ensemble, x)
        res = cw_l2(ensemble, x, targets, spec)
        return AdvBatch(x, res.adversarial, y, spec, source_model_id, res.success)
    pred = np.argmax(ensemble.softmaxes(adv).sum(axis=0), axis=-1)
    return AdvBatch(x, adv, y, spec, source_model_id, pred != y)


def with_lambda(spec, lambda_attack):
    return replace(spec, lambda_attack=lambda_attack)
