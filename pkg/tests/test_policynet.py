import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltac.policynet import (
    PolicyParams,
    PolicySpec,
    _forward,
    action_distribution,
    init_policy,
    log_prob,
    sample_joint,
    score,
    weighted_score,
)


def relu_pattern(params, s):
    return [np.concatenate([(h > 0).ravel() for h in hs[:-1]]) for _, hs, _ in _forward(params, np.atleast_2d(s))]


def same_pattern(p, q, s):
    return all(np.array_equal(a, b) for a, b in zip(relu_pattern(p, s), relu_pattern(q, s)))


def random_policy(seed, n=2, d_s=4, counts=(5, 5), hidden=(6, 5), std=0.7):
    return init_policy(seed, n, d_s, counts, hidden, std)


def test_parameter_count():
    p = init_policy(0, 5, 20, [5] * 5, 64)
    assert p.dim == 5 * (20 * 64 + 64 + 64 * 64 + 64 + 64 * 5 + 5)
    assert p.dim == 29145


def test_determinism_and_zero_biases():
    a, b = init_policy(3, 2, 4, [5, 5], 8), init_policy(3, 2, 4, [5, 5], 8)
    assert np.array_equal(a.flat, b.flat)
    for W, bias in a.views[0]:
        assert np.all(bias == 0)
        assert W.std() == pytest.approx(0.1, rel=0.3)


def test_uniform_when_zero():
    p = PolicyParams(init_policy(0, 3, 4, [5] * 3, 8).spec, np.zeros(init_policy(0, 3, 4, [5] * 3, 8).dim))
    for d in action_distribution(p, np.ones(4)):
        assert np.allclose(d, 0.2)


def test_distributions_positive_and_normalized():
    p = random_policy(1)
    for d in action_distribution(p, np.random.default_rng(0).standard_normal(4)):
        assert np.all(d > 0)
        assert abs(d.sum() - 1) < 1e-12


def test_logit_shift_invariance():
    spec = PolicySpec(1, 3, (), (4,))
    p = init_policy(2, 1, 3, [4], (), 0.5)
    shifted = p.flat.copy()
    shifted[spec.state_dim * 4 :] += 7.0  # add to every output bias
    s = np.array([0.2, -0.4, 0.9])
    assert np.allclose(action_distribution(p, s)[0], action_distribution(PolicyParams(spec, shifted), s)[0])


def test_saturated_sampling():
    spec = PolicySpec(1, 2, (), (5,))
    flat = np.zeros(spec.dim)
    flat[2 * 5 + 3] = 40.0
    p = PolicyParams(spec, flat)
    rng = np.random.default_rng(0)
    draws = [sample_joint(p, np.zeros(2), rng)[0] for _ in range(1000)]
    assert all(a == 3 for a in draws)


def test_uniform_sampling_frequencies():
    spec = PolicySpec(2, 2, (), (5, 5))
    p = PolicyParams(spec, np.zeros(spec.dim))
    rng = np.random.default_rng(1)
    draws = np.array([sample_joint(p, np.zeros(2), rng) for _ in range(10000)])
    for j in range(2):
        freq = np.bincount(draws[:, j], minlength=5) / len(draws)
        assert np.all(np.abs(freq - 0.2) < 0.05)


def test_same_rng_state_same_action():
    p = random_policy(5)
    s = np.ones(4)
    assert np.array_equal(sample_joint(p, s, np.random.default_rng(9)), sample_joint(p, s, np.random.default_rng(9)))


def test_linear_block_hand_score():
    spec = PolicySpec(1, 3, (), (2,))
    p = PolicyParams(spec, np.zeros(spec.dim))
    s = np.array([0.5, -1.0, 2.0])
    for a in (0, 1):
        g = score(p, s, [a])
        seed = np.eye(2)[a] - 0.5
        assert np.allclose(g[:6].reshape(2, 3), np.outer(seed, s))
        assert np.allclose(g[6:], seed)


@pytest.mark.parametrize("probe", range(20))
def test_score_finite_difference(probe):
    rng = np.random.default_rng(probe)
    p = random_policy(probe, n=2, counts=(5, 3) if probe % 2 else (5, 5))
    h = 1e-6
    while True:
        s = rng.standard_normal(4)
        direction = rng.standard_normal(p.dim)
        if same_pattern(p.with_flat(p.flat + h * direction), p.with_flat(p.flat - h * direction), s):
            break
    a = [int(rng.integers(0, c)) for c in p.spec.action_counts]
    g = score(p, s, a)
    h = 1e-6
    while True:
        direction = rng.standard_normal(p.dim)
        if same_pattern(p.with_flat(p.flat + h * direction), p.with_flat(p.flat - h * direction), s):
            break
    fd = (log_prob(p.with_flat(p.flat + h * direction), s, a) - log_prob(p.with_flat(p.flat - h * direction), s, a)) / (2 * h)
    an = g @ direction
    assert abs(an - fd) / max(abs(an), abs(fd), 1e-8) < 1e-4


def test_score_expectation_zero_by_enumeration():
    p = random_policy(11, n=2, counts=(5, 5))
    s = np.random.default_rng(3).standard_normal(4)
    dists = action_distribution(p, s)
    total = np.zeros(p.dim)
    joint = list(itertools.product(range(5), range(5)))
    for a in joint:
        total += dists[0][a[0]] * dists[1][a[1]] * score(p, s, a)
    assert np.abs(total).max() < 1e-10
    # batched form agrees with the loop
    probs = np.array([dists[0][a] * dists[1][b] for a, b in joint])
    batched, _ = weighted_score(p, np.tile(s, (25, 1)), joint, probs)
    assert np.abs(batched).max() < 1e-10


def test_joint_probabilities_sum_to_one():
    p = random_policy(4, n=2, counts=(3, 4))
    s = np.ones(4)
    total = sum(np.exp(log_prob(p, s, a)) for a in itertools.product(range(3), range(4)))
    assert abs(total - 1) < 1e-10


def test_log_prob_of_sample_is_sum_of_components():
    p = random_policy(6)
    s = np.linspace(-1, 1, 4)
    a = sample_joint(p, s, np.random.default_rng(2))
    dists = action_distribution(p, s)
    assert abs(log_prob(p, s, a) - sum(np.log(d[x]) for d, x in zip(dists, a))) < 1e-12


def test_score_block_locality():
    p = random_policy(8, n=3, counts=(5, 5, 5))
    s = np.ones(4) * 0.3
    base = score(p, s, [0, 1, 2])
    other = score(p, s, [0, 4, 2])
    changed = np.flatnonzero(base != other)
    lo, hi = p.spec.offsets[1], p.spec.offsets[1] + p.spec.block_size(1)
    assert changed.size > 0 and changed.min() >= lo and changed.max() < hi


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 12))
def test_weighted_score_matches_loop(seed, n):
    rng = np.random.default_rng(seed)
    p = random_policy(seed, n=3, counts=(5, 2, 4))
    S = rng.standard_normal((n, 4))
    A = np.column_stack([rng.integers(0, c, n) for c in (5, 2, 4)])
    w = rng.standard_normal(n)
    g, norms = weighted_score(p, S, A, w)
    ref = sum(w[q] * score(p, S[q], A[q]) for q in range(n))
    assert np.allclose(g, ref, atol=1e-12)
    assert np.allclose(norms, [np.linalg.norm(score(p, S[q], A[q])) for q in range(n)])


def test_score_clip_bounds_each_sample():
    p = random_policy(2, std=2.0)
    rng = np.random.default_rng(0)
    S = rng.standard_normal((6, 4)) * 3
    A = np.column_stack([rng.integers(0, 5, 6), rng.integers(0, 5, 6)])
    for q in range(6):
        g, norms = weighted_score(p, S[q : q + 1], A[q : q + 1], [1.0], clip=0.5)
        assert np.linalg.norm(g) <= 0.5 + 1e-12
        assert norms[0] == pytest.approx(np.linalg.norm(score(p, S[q], A[q])))
