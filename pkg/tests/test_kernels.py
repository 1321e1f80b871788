import importlib

import numpy as np
import pytest

from dissent import _kernels_py, kernels

try:
    _compiled = importlib.import_module("dissent._kernels")
except ImportError:  # extension not built
    _compiled = None

BACKENDS = [pytest.param(_kernels_py, id="python")]
BACKENDS.append(pytest.param(_compiled, id="cython",
                             marks=pytest.mark.skipif(_compiled is None, reason="extension not built")))


def random_probs(rng, n, b, k, quantise=False):
    p = rng.dirichlet(np.ones(k), size=(n, b))
    if quantise:
        # coarse grid forces many exact ties
        p = np.round(p * 4) / 4 + 1e-3
        p /= p.sum(axis=-1, keepdims=True)
    return p


def brute_rank_sums(p):
    n, b, k = p.shape
    out = np.zeros((b, k), dtype=np.int64)
    for e in range(b):
        for m in range(n):
            order = sorted(range(k), key=lambda lab: (-p[m, e, lab], lab))
            for rank, lab in enumerate(order):
                out[e, lab] += rank
    return out


def brute_agreement(p):
    n = p.shape[0]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return np.array([np.mean([p[i, e] @ p[j, e] for i, j in pairs]) for e in range(p.shape[1])])


@pytest.mark.parametrize("impl", BACKENDS)
@pytest.mark.parametrize("quantise", [False, True])
def test_rank_sums_match_brute_force(impl, quantise):
    rng = np.random.default_rng(1)
    p = random_probs(rng, 5, 200, 10, quantise)
    np.testing.assert_array_equal(impl.rank_sums(p), brute_rank_sums(p))


@pytest.mark.parametrize("impl", BACKENDS)
def test_agreement_matches_pairwise_definition(impl):
    rng = np.random.default_rng(2)
    p = random_probs(rng, 4, 50, 6)
    ja, _ = impl.agreement(p)
    np.testing.assert_allclose(ja, brute_agreement(p), atol=1e-14)


@pytest.mark.parametrize("impl", BACKENDS)
def test_agreement_gradient_matches_finite_differences(impl):
    rng = np.random.default_rng(3)
    z = rng.standard_normal((3, 2, 4))

    def ja_of(zz):
        e = np.exp(zz - zz.max(axis=-1, keepdims=True))
        return impl.agreement(e / e.sum(axis=-1, keepdims=True))[0]

    e = np.exp(z - z.max(axis=-1, keepdims=True))
    _, grad = impl.agreement(e / e.sum(axis=-1, keepdims=True))
    h = 1e-6
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        fd = (ja_of(zp)[idx[1]] - ja_of(zm)[idx[1]]) / (2 * h)
        assert abs(fd - grad[idx]) < 1e-9


@pytest.mark.parametrize("impl", BACKENDS)
def test_agreement_needs_two_members(impl):
    with pytest.raises(ValueError):
        impl.agreement(np.full((1, 1, 3), 1 / 3))


@pytest.mark.skipif(_compiled is None, reason="extension not built")
def test_backends_agree():
    rng = np.random.default_rng(4)
    p = random_probs(rng, 5, 300, 10, quantise=True)
    np.testing.assert_array_equal(_compiled.rank_sums(p), _kernels_py.rank_sums(p))
    ja_c, g_c = _compiled.agreement(p)
    ja_p, g_p = _kernels_py.agreement(p)
    np.testing.assert_allclose(ja_c, ja_p, atol=1e-14)
    np.testing.assert_allclose(g_c, g_p, atol=1e-14)


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
