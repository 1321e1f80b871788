"""Two-layer rectifier networks with exact reverse-mode gradients.

Arrays of float64 play the role of tensors throughout. Every function here
accepts a single input vector of shape ``(d_in,)`` or a batch ``(B, d_in)``;
batched losses are sums of per-example losses, so the parameter gradients
returned for a batch are sums over its rows.
"""
from dataclasses import dataclass, fields

import numpy as np

LOG_FLOOR = 1e-300


class DimensionError(ValueError):
    """Raised when array shapes do not fit together."""


class NonFiniteError(ValueError):
    pass


def as_tensor(values, name="tensor"):
    """Return ``values`` as a read-only float64 array, rejecting NaN/Inf."""
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MlpParams:
    hidden_weights: np.ndarray  # (d_in, d_hidden)
    hidden_bias: np.ndarray  # (d_hidden,)
    softmax_weights: np.ndarray  # (d_hidden, K)
    softmax_bias: np.ndarray  # (K,)

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, as_tensor(getattr(self, f.name), f.name))
        w1, b1, w2, b2 = self.arrays()
        if w1.ndim != 2 or w2.ndim != 2 or b1.ndim != 1 or b2.ndim != 1:
            raise DimensionError("weights must be 2-D and biases 1-D")
        if b1.shape[0] != w1.shape[1] or w2.shape[0] != w1.shape[1] or b2.shape[0] != w2.shape[1]:
            raise DimensionError(
                f"inconsistent shapes {w1.shape}, {b1.shape}, {w2.shape}, {b2.shape}"
            )
        if w2.shape[1] < 2:
            raise DimensionError("need at least two classes")

    @property
    def arch(self):
        """``(d_in, d_hidden, K)``"""
        return (self.hidden_weights.shape[0], self.hidden_weights.shape[1], self.softmax_weights.shape[1])

    def arrays(self):
        return (self.hidden_weights, self.hidden_bias, self.softmax_weights, self.softmax_bias)

    @classmethod
    def from_arrays(cls, arrays):
        return cls(*arrays)

    def zip_map(self, fn, *others):
        """Apply ``fn`` blockwise across this and other same-shaped params."""
        return MlpParams(*(fn(*blocks) for blocks in zip(self.arrays(), *(o.arrays() for o in others))))

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, arch, vec):
        d_in, hidden, k = arch
        shapes = [(d_in, hidden), (hidden,), (hidden, k), (k,)]
        sizes = [int(np.prod(s)) for s in shapes]
        if sum(sizes) != len(vec):
            raise DimensionError(f"expected {sum(sizes)} values, got {len(vec)}")
        out, pos = [], 0
        for shape, size in zip(shapes, sizes):
            out.append(np.asarray(vec[pos:pos + size]).reshape(shape))
            pos += size
        return cls(*out)


def zeros_like(params):
    return params.zip_map(np.zeros_like)


def init_params(arch, rng, input_scale=1.0):
    """Uniform weights in ``±1/sqrt(fan_in)``, zero biases.

    ``input_scale`` widens the first-layer range. Input coordinates that are
    constant in the training data (MNIST borders) never receive a
    cross-entropy gradient, so their weights keep this initial spread.
    """
    d_in, hidden, k = arch
    lim1 = input_scale / np.sqrt(d_in)
    lim2 = 1.0 / np.sqrt(hidden)
    return MlpParams(
        rng.uniform(-lim1, lim1, size=(d_in, hidden)),
        np.zeros(hidden),
        rng.uniform(-lim2, lim2, size=(hidden, k)),
        np.zeros(k),
    )


@dataclass(frozen=True)
class ForwardTrace:
    input: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray
    logits: np.ndarray
    softmax: np.ndarray


def softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _check_input(params, x):
    x = np.asarray(x, dtype=np.float64)
    d_in = params.hidden_weights.shape[0]
    if x.ndim not in (1, 2) or x.shape[-1] != d_in:
        raise DimensionError(f"input shape {x.shape} does not match d_in={d_in}")
    return x


def forward(params, x):
    x = _check_input(params, x)
    pre = x @ params.hidden_weights + params.hidden_bias
    h = np.maximum(pre, 0.0)
    logits = h @ params.softmax_weights + params.softmax_bias
    return ForwardTrace(x, pre, h, logits, softmax(logits))


def cross_entropy(trace, y):
    """``-ln softmax[y]`` per example (scalar for a single input)."""
    p = trace.softmax
    y = np.asarray(y)
    k = p.shape[-1]
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"label out of range [0, {k})")
    if p.ndim == 1:
        return float(-np.log(max(p[int(y)], LOG_FLOOR)))
    picked = p[np.arange(p.shape[0]), y]
    return -np.log(np.maximum(picked, LOG_FLOOR))


def cross_entropy_logit_grad(trace, y):
    """Gradient of the (summed) cross-entropy with respect to the logits."""
    g = np.array(trace.softmax, copy=True)
    if g.ndim == 1:
        g[int(y)] -= 1.0
    else:
        g[np.arange(g.shape[0]), np.asarray(y)] -= 1.0
    return g


def softmax_vjp(trace, grad_softmax):
    """Pull a gradient on the softmax outputs back onto the logits."""
    p = trace.softmax
    grad_softmax = np.asarray(grad_softmax, dtype=np.float64)
    inner = np.sum(grad_softmax * p, axis=-1, keepdims=True)
    return p * (grad_softmax - inner)


def _logit_grad(trace, grad_logits, grad_softmax):
    if (grad_logits is None) == (grad_softmax is None):
        raise ValueError("pass exactly one of grad_logits / grad_softmax")
    if grad_softmax is not None:
        grad_logits = softmax_vjp(trace, grad_softmax)
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    if grad_logits.shape != trace.logits.shape:
        raise DimensionError(f"gradient shape {grad_logits.shape} != logits shape {trace.logits.shape}")
    return grad_logits


def backward_params(trace, params, grad_logits=None, grad_softmax=None):
    """Parameter gradients of a scalar loss given its gradient on logits or softmax."""
    gz = _logit_grad(trace, grad_logits, grad_softmax)
    h = trace.hidden
    gh = gz @ params.softmax_weights.T
    gpre = gh * (trace.hidden_pre > 0)
    if gz.ndim == 1:
        return MlpParams(np.outer(trace.input, gpre), gpre, np.outer(h, gz), gz)
    return MlpParams(trace.input.T @ gpre, gpre.sum(axis=0), h.T @ gz, gz.sum(axis=0))


def backward_input(trace, params, grad_logits=None, grad_softmax=None):
    """Gradient of the loss with respect to the input, same shape as the input."""
    gz = _logit_grad(trace, grad_logits, grad_softmax)
    gpre = (gz @ params.softmax_weights.T) * (trace.hidden_pre > 0)
    return gpre @ params.hidden_weights.T


def input_jacobian(params, x):
    """Jacobian of the logits with respect to the input, shape ``(B, K, d_in)``."""
    x = np.atleast_2d(_check_input(params, x))
    mask = (x @ params.hidden_weights + params.hidden_bias) > 0
    # dz_k/dx = W1 diag(mask) W2[:, k]
    return np.einsum("dh,bh,hk->bkd", params.hidden_weights, mask, params.softmax_weights, optimize=True)


def grad_check(params, x, y, step=1e-6):
    """Largest relative discrepancy between analytic and central-difference gradients.

    Covers every parameter and every input coordinate of the summed
    cross-entropy. The relative error of each coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``. Large steps inflate the
    reported error through truncation; that is diagnostic, not a failure.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)

    def loss(p, xx):
        return float(np.sum(cross_entropy(forward(p, xx), y)))

    trace = forward(params, x)
    gz = cross_entropy_logit_grad(trace, y)
    analytic_params = backward_params(trace, params, gz).flat()
    analytic_input = backward_input(trace, params, gz).ravel()

    arch = params.arch
    theta = params.flat()
    numeric_params = np.empty_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tp[i] += step
        tm = theta.copy()
        tm[i] -= step
        numeric_params[i] = (
            loss(MlpParams.from_flat(arch, tp), x) - loss(MlpParams.from_flat(arch, tm), x)
        ) / (2 * step)

    flat_x = x.ravel()
    numeric_input = np.empty_like(flat_x)
    for i in range(flat_x.size):
        xp = flat_x.copy()
        xp[i] += step
        xm = flat_x.copy()
        xm[i] -= step
        numeric_input[i] = (loss(params, xp.reshape(x.shape)) - loss(params, xm.reshape(x.shape))) / (2 * step)

    analytic = np.concatenate([analytic_params, analytic_input])
    numeric = np.concatenate([numeric_params, numeric_input])
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
