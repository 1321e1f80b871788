import numpy as np
import pytest

from dissent import detector as D

EXAMPLE = np.array([[0.7, 0.2, 0.1], [0.6, 0.3, 0.1], [0.1, 0.8, 0.1]])


def brute_disagreement(p):
    n, k = p.shape
    sums = [0] * k
    for m in range(n):
        order = sorted(range(k), key=lambda lab: (-p[m, lab], lab))
        for rank, lab in enumerate(order):
            sums[lab] += rank
    return sums, min(sums)


def test_rank_votes_hand_example():
    vote = D.rank_votes(EXAMPLE)
    assert vote.rank_sums.tolist() == [1, 2, 6]
    assert vote.disagreement == 1


def test_unanimous_top_label_gives_zero():
    p = np.array([[0.5, 0.3, 0.2], [0.9, 0.05, 0.05], [0.4, 0.35, 0.25]])
    assert D.rank_votes(p).disagreement == 0


def test_single_voter_always_zero():
    rng = np.random.default_rng(0)
    for p in rng.dirichlet(np.ones(6), size=50):
        assert D.rank_votes(p[None]).disagreement == 0


@pytest.mark.parametrize("d, tau, accepted", [(1, 2, True), (3, 2, False), (2, 2, True)])
def test_detect_examples(d, tau, accepted):
    assert D.detect(D.RankVote(np.zeros(3, dtype=int), d), tau) is accepted


def test_detect_rejects_negative_tau():
    with pytest.raises(ValueError):
        D.detect(0, -1)


def test_tau_at_bound_accepts_everything():
    rng = np.random.default_rng(1)
    n, k = 5, 10
    p = rng.dirichlet(np.ones(k) * 0.3, size=(n, 2000))
    _, accepted, _ = D.verdicts(p, n * (k - 1) // 2)
    assert accepted.all()


def test_classify_hand_example():
    assert EXAMPLE.sum(axis=0) == pytest.approx([1.4, 1.3, 0.3])
    assert D.classify(EXAMPLE) == 0


def test_classify_identical_members():
    p = np.tile([0.1, 0.2, 0.6, 0.1], (4, 1))
    assert D.classify(p) == 2


def test_classify_tie_goes_to_lower_label():
    assert D.classify(np.array([[0.4, 0.4, 0.2]])) == 0
    assert D.classify(np.array([[0.1, 0.45, 0.45], [0.1, 0.45, 0.45]])) == 1


@pytest.mark.parametrize(
    "values, max_fp, tau",
    [([0, 0, 1, 3], 0.05, 3), ([0, 0, 0], 0.05, 0), ([0, 5, 9], 1.0, 0), ([0, 0, 1, 3], 0.25, 1)],
)
def test_tune_tau_examples(values, max_fp, tau):
    assert D.tune_tau(values, max_fp) == tau


def test_tune_tau_validation():
    with pytest.raises(ValueError):
        D.tune_tau([], 0.05)
    with pytest.raises(ValueError):
        D.tune_tau([1], 1.5)


def test_false_positive_curve():
    assert D.false_positive_curve([0, 0, 1, 3]) == [(0, 0.5), (1, 0.25), (2, 0.25), (3, 0.0)]


def test_verdict_carries_label_when_rejected():
    p = np.array([[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]])
    v = D.verdict(p, 0)
    assert not v.accepted
    assert v.label == 0
    # ties in the tail break by label index: sums [2, 3, 4]
    assert v.disagreement == 2


def test_brute_force_oracle_n5_k10():
    rng = np.random.default_rng(2)
    n, k = 5, 10
    p = rng.dirichlet(np.ones(k) * rng.uniform(0.05, 1.0), size=(n, 10_000))
    sums = D.rank_sums(p)
    dis = sums.min(axis=-1)
    assert dis.min() >= 0 and dis.max() <= 22
    assert np.all(sums.sum(axis=-1) == n * k * (k - 1) // 2)
    for e in range(p.shape[1]):
        expect_sums, expect_d = brute_disagreement(p[:, e])
        assert dis[e] == expect_d
        assert sums[e].tolist() == expect_sums


def test_rank_sum_conservation_with_ties():
    rng = np.random.default_rng(3)
    for n, k in [(2, 2), (3, 5), (7, 4)]:
        p = np.round(rng.dirichlet(np.ones(k), size=(n, 500)) * 3) / 3
        assert np.all(D.rank_sums(p).sum(axis=-1) == n * k * (k - 1) // 2)


def test_disagreement_invariant_under_relabeling():
    rng = np.random.default_rng(4)
    p = rng.dirichlet(np.ones(10), size=(5, 1000))
    perm = rng.permutation(10)
    np.testing.assert_array_equal(D.disagreements(p), D.disagreements(p[..., perm]))


def test_classify_invariant_under_positive_scaling():
    rng = np.random.default_rng(5)
    p = rng.dirichlet(np.ones(10), size=(5, 1000))
    np.testing.assert_array_equal(D.classify_batch(p), D.classify_batch(p * 3.7))


def test_accept_rate_monotone_in_tau():
    rng = np.random.default_rng(6)
    p = rng.dirichlet(np.ones(10) * 0.2, size=(5, 2000))
    rates = [D.verdicts(p, tau)[1].mean() for tau in range(0, 23)]
    assert all(a <= b for a, b in zip(rates, rates[1:]))
