import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tergmix.models import (
    ModelSpec,
    Params,
    block_grad_hess,
    block_loglik,
    category_logprob,
    dyad_natural_param,
    edge_probability,
    edge_transition_logprob,
    log_sigmoid,
    soft_block_table,
    suff_stats,
)
from tergmix.netseries import transition_tallies

from conftest import random_series

KINDS = ["tergm", "stergm"]


def test_spec_aliases_and_validation():
    assert ModelSpec("tergm", 2).kind == "tergm_stability"
    assert ModelSpec("stergm", 2).p == 2
    with pytest.raises(ValueError):
        ModelSpec("ergm", 2)
    with pytest.raises(ValueError):
        ModelSpec("tergm", 0)


def test_params_validation():
    Params([0.25, 0.75], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        Params([0.5, 0.6], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        Params([0.5, 0.5], [[1.0], [np.inf]])
    with pytest.raises(ValueError):
        Params([1.0], [[1.0], [2.0]])


def test_suff_stats_hand_example():
    prev = np.zeros((4, 4), bool)
    cur = np.zeros((4, 4), bool)
    for a, i, j in [(prev, 0, 1), (prev, 1, 2), (cur, 0, 1), (cur, 2, 3)]:
        a[i, j] = a[j, i] = True
    g = suff_stats(prev, cur)
    # dyads: 01 kept, 12 dissolved, 23 formed, three others stay empty
    assert (g.g_d, g.g_s, g.g_f, g.g_p) == (2, 4, 1, 1)


@given(th=st.floats(-4, 4), tl=st.floats(-4, 4), y=st.integers(0, 1))
def test_tergm_natural_param(th, tl, y):
    spec = ModelSpec("tergm", 2)
    eta = dyad_natural_param(spec, th, tl, y)
    assert math.isclose(eta, (th + tl) * (2 * y - 1), abs_tol=1e-12)
    # a stable transition always has log-odds th + tl
    assert math.isclose(edge_transition_logprob(spec, th, tl, y, y), float(log_sigmoid(th + tl)), abs_tol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_transition_probabilities_normalise(kind, rng):
    spec = ModelSpec(kind, 3)
    theta = rng.normal(size=(3, spec.p))
    for y in (0, 1):
        for k in range(3):
            for l in range(3):
                tot = sum(math.exp(edge_transition_logprob(spec, theta[k], theta[l], y, c)) for c in (0, 1))
                assert math.isclose(tot, 1.0, rel_tol=1e-12)
    P = edge_probability(spec, theta)
    L = category_logprob(spec, theta)
    assert np.allclose(np.exp(L[1]), P[0]) and np.allclose(np.exp(L[3]), P[1])


@pytest.mark.parametrize("kind", KINDS)
def test_block_loglik_matches_dyad_sum(kind, rng):
    s = random_series(rng, 6, 3)
    spec = ModelSpec(kind, 2)
    theta = rng.normal(size=(2, spec.p))
    z = np.array([1, 2, 2, 1, 1, 2])
    direct = 0.0
    for t in range(1, s.T + 1):
        for i in range(s.n):
            for j in range(i + 1, s.n):
                direct += edge_transition_logprob(
                    spec, theta[z[i] - 1], theta[z[j] - 1], s.has_edge(t - 1, i, j), s.has_edge(t, i, j)
                )
    M = transition_tallies(s, z, 2).as_array()
    assert math.isclose(block_loglik(spec, theta, M), direct, rel_tol=1e-12)
    G = np.eye(2)[z - 1]
    assert np.allclose(soft_block_table(s, G), M)


def _fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize("kind", KINDS)
def test_block_derivatives_fd(kind):
    rng = np.random.default_rng(7)
    for _ in range(25):
        K = int(rng.integers(1, 4))
        spec = ModelSpec(kind, K)
        M = rng.uniform(0, 20, size=(4, K, K))
        M = M + M.transpose(0, 2, 1)
        x0 = rng.normal(size=K * spec.p)

        def f(x):
            return block_loglik(spec, x.reshape(spec.p, K).T, M)

        def g(x):
            return block_grad_hess(spec, x.reshape(spec.p, K).T, M)[0]

        grad, hess = block_grad_hess(spec, x0.reshape(spec.p, K).T, M)
        assert np.allclose(grad, _fd_grad(f, x0), rtol=1e-5, atol=1e-6)
        fd_h = np.column_stack([_fd_grad(lambda x, i=i: g(x)[i], x0) for i in range(len(x0))]).T
        assert np.allclose(hess, fd_h, rtol=1e-4, atol=1e-5)
        assert np.all(np.linalg.eigvalsh(hess) < 1e-12)
