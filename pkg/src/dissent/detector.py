"""Rank-vote detection and distribution-summation classification."""
from dataclasses import dataclass

import numpy as np

from . import kernels

DEFAULT_TAU = 2
DEFAULT_MAX_FP = 0.05


@dataclass(frozen=True)
class RankVote:
    rank_sums: np.ndarray
    disagreement: int


@dataclass(frozen=True)
class Verdict:
    disagreement: int
    accepted: bool
    label: int


def _stack(softmaxes):
    p = np.asarray(softmaxes, dtype=np.float64)
    if p.ndim == 2:
        p = p[:, None, :]
    if p.ndim != 3 or p.shape[0] < 1:
        raise ValueError("expected member outputs shaped (N, K) or (N, B, K)")
    return p


def rank_sums(softmaxes):
    """Summed ranks per label, ``(B, K)`` for ``(N, B, K)`` input."""
    return kernels.rank_sums(_stack(softmaxes))


def disagreements(softmaxes):
    """Ensemble disagreement (smallest label rank sum) per example."""
    return rank_sums(softmaxes).min(axis=-1)


def rank_votes(softmaxes):
    """Rank vote for a single input given its ``(N, K)`` member outputs."""
    sums = rank_sums(softmaxes)[0]
    return RankVote(sums, int(sums.min()))


def detect(vote, tau):
    """True when the input is accepted (disagreement at most ``tau``)."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    d = vote.disagreement if isinstance(vote, RankVote) else vote
    return d <= tau


def classify_batch(softmaxes):
    # argmax returns the first maximum, i.e. the lowest tied label
    return np.argmax(_stack(softmaxes).sum(axis=0), axis=-1)


def classify(softmaxes):
    return int(classify_batch(softmaxes)[0])


def verdicts(softmaxes, tau):
    """Vectorised verdicts: ``(disagreement, accepted, label)`` arrays."""
    p = _stack(softmaxes)
    d = kernels.rank_sums(p).min(axis=-1)
    return d, d <= tau, classify_batch(p)


def verdict(softmaxes, tau):
    d, acc, label = verdicts(softmaxes, tau)
    return Verdict(int(d[0]), bool(acc[0]), int(label[0]))


def false_positive_curve(disagreement_values):
    """``[(tau, fraction rejected)]`` for tau from 0 to the largest observed value."""
    d = np.asarray(disagreement_values)
    return [(t, float(np.mean(d > t))) for t in range(int(d.max()) + 1)]


def tune_tau(disagreement_values, max_fp=DEFAULT_MAX_FP):
    """Smallest tau whose rejection rate on clean validation data is at most ``max_fp``."""
    d = np.asarray(disagreement_values)
    if d.size == 0:
        raise ValueError("need at least one validation disagreement")
    if not 0 <= max_fp <= 1:
        raise ValueError("max_fp must lie in [0, 1]")
    for tau, fp in false_positive_curve(d):
        if fp <= max_fp:
            return tau
    return int(d.max())
