import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltac.valuenet import (
    ProjectionBall,
    ValueNetParams,
    init_valuenet,
    project,
    value,
    value_batch,
    value_grad,
    weighted_value_grad,
)


def tiny(theta=2.0, b=1.0):
    return ValueNetParams([np.array([[theta]])], np.array([b]), "tanh")


def fd_grad(params, s, h=1e-5):
    out = []
    for ell, w in enumerate(params.layers):
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            plus = [x.copy() for x in params.layers]
            minus = [x.copy() for x in params.layers]
            plus[ell][idx] += h
            minus[ell][idx] -= h
            vp = value(ValueNetParams(plus, params.b, params.activation), s)
            vm = value(ValueNetParams(minus, params.b, params.activation), s)
            g[idx] = (vp - vm) / (2 * h)
        out.append(g)
    return out


def rel_err(a, b, floor=1e-7):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def test_init_shapes_and_determinism():
    p = init_valuenet(4, 64, 2, 20)
    q = init_valuenet(4, 64, 2, 20)
    assert [w.shape for w in p.layers] == [(64, 20), (64, 64)]
    assert p.b.shape == (64,)
    assert all(np.array_equal(x, y) for x, y in zip(p.layers, q.layers))
    assert np.array_equal(p.b, q.b)


def test_init_standard_normal_mean():
    p = init_valuenet(0, 64, 3, 20)
    entries = np.concatenate([p.flat(), p.b])
    assert abs(entries.mean()) < 5 / np.sqrt(entries.size)


def test_hand_values():
    assert value(tiny(), np.array([0.5])) == pytest.approx(0.7615941559557649, abs=1e-12)
    g, v = value_grad(tiny(), np.array([0.5]))
    assert g[0][0, 0] == pytest.approx(0.20998717080701303, abs=1e-12)


def test_zero_cases():
    p = init_valuenet(1, 8, 2, 3)
    zero = ValueNetParams([np.zeros_like(w) for w in p.layers], p.b, "tanh")
    assert value(zero, np.array([0.3, -0.1, 0.9])) == 0.0
    assert value(p, np.zeros(3)) == 0.0
    nob = ValueNetParams(p.layers, np.zeros(8), "tanh")
    g, _ = value_grad(nob, np.array([0.3, -0.1, 0.9]))
    assert all(np.all(x == 0) for x in g)


def test_dimension_mismatch():
    p = init_valuenet(1, 4, 1, 3)
    with pytest.raises(ValueError):
        value(p, np.zeros(2))


@pytest.mark.parametrize("probe", range(20))
def test_tanh_gradient_finite_difference(probe):
    rng = np.random.default_rng(100 + probe)
    depth = 1 + probe % 3
    p = init_valuenet(rng, int(rng.integers(1, 7)), depth, 3, "tanh")
    s = rng.uniform(-1, 1, 3)
    s /= max(1.0, np.linalg.norm(s))
    g, _ = value_grad(p, s)
    for a, f in zip(g, fd_grad(p, s)):
        assert rel_err(a, f).max() < 1e-5


@pytest.mark.parametrize("probe", range(20))
def test_relu_gradient_away_from_kinks(probe):
    rng = np.random.default_rng(500 + probe)
    p = init_valuenet(rng, 5, 2, 3, "relu")
    while True:
        s = rng.uniform(-1, 1, 3)
        x, ok = s, True
        for w in p.layers:
            h = w @ x
            ok &= np.abs(h).min() > 1e-3
            x = np.maximum(h, 0) / np.sqrt(p.width)
        if ok:
            break
    g, _ = value_grad(p, s)
    for a, f in zip(g, fd_grad(p, s)):
        assert rel_err(a, f).max() < 1e-4


def test_weighted_grad_matches_loop():
    rng = np.random.default_rng(7)
    p = init_valuenet(rng, 6, 2, 4)
    S = rng.standard_normal((9, 4))
    w = rng.standard_normal(9)
    g, v = weighted_value_grad(p, S, w)
    ref = [np.zeros_like(x) for x in p.layers]
    for q in range(9):
        gq, vq = value_grad(p, S[q])
        assert vq == pytest.approx(v[q], abs=1e-14)
        for r, x in zip(ref, gq):
            r += w[q] * x
    assert all(np.allclose(a, b, atol=1e-13) for a, b in zip(g, ref))
    assert np.allclose(value_batch(p, S), v)


def test_projection_examples():
    center = ValueNetParams([np.zeros((2, 2))], np.ones(2))
    p = ValueNetParams([np.full((2, 2), 1.0)], np.ones(2))  # norm 2
    out = project(p, ProjectionBall(center, 1.0))
    assert np.allclose(out.layers[0], 0.5)
    inside = ValueNetParams([np.full((2, 2), 0.1)], np.ones(2))
    assert project(inside, ProjectionBall(center, 1.0)) is inside
    with pytest.raises(ValueError):
        ProjectionBall(center, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 5.0), st.floats(0.0, 20.0))
def test_projection_properties(seed, radius, spread):
    rng = np.random.default_rng(seed)
    c = init_valuenet(rng, 4, 2, 3)
    p = ValueNetParams([w + spread * rng.standard_normal(w.shape) for w in c.layers], c.b)
    ball = ProjectionBall(c, radius)
    once = project(p, ball)
    dist = np.sqrt(sum(((a - b) ** 2).sum() for a, b in zip(once.layers, c.layers)))
    assert dist <= radius * (1 + 1e-12)
    twice = project(once, ball)
    assert all(np.allclose(a, b, rtol=0, atol=1e-14) for a, b in zip(once.layers, twice.layers))
    assert np.array_equal(once.b, p.b)


def test_width_scaling_keeps_values_bounded():
    rng = np.random.default_rng(0)
    for m in (1, 4, 16, 64):
        for _ in range(250):
            p = init_valuenet(rng, m, 2, 5)
            s = rng.uniform(-1, 1, 5) / np.sqrt(5)
            assert abs(value(p, s)) < 100
