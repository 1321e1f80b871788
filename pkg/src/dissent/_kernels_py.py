"""Pure numpy implementations of the per-example ensemble kernels.

Both functions take member probabilities stacked as ``(N, B, K)``:
N members, B examples, K labels.
"""
import numpy as np


def rank_sums(probs):
    """Summed per-member label ranks, shape ``(B, K)``.

    Rank 0 goes to the most likely label; equal probabilities are ranked
    by ascending label index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n, b, k = probs.shape
    order = np.argsort(-probs, axis=-1, kind="stable")
    ranks = np.empty((n, b, k), dtype=np.int64)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(k), (n, b, k)), axis=-1)
    return ranks.sum(axis=0)


def agreement(probs):
    """Mean pairwise dot product of member outputs and its gradient on logits.

    Returns ``(ja, grad)`` where ``ja`` has shape ``(B,)`` and ``grad[n, b]``
    is the derivative of ``ja[b]`` with respect to member n's logits.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.shape[0]
    if n < 2:
        raise ValueError("agreement needs at least two members")
    pairs = n * (n - 1) / 2.0
    total = probs.sum(axis=0)
    sq_total = np.einsum("bk,bk->b", total, total)
    sq_each = np.einsum("nbk,nbk->b", probs, probs)
    ja = 0.5 * (sq_total - sq_each) / pairs
    g = (total[None] - probs) / pairs
    inner = np.einsum("nbk,nbk->nb", g, probs)
    grad = probs * (g - inner[..., None])
    return ja, grad
