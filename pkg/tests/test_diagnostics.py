import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltac.config import RunConfig
from ltac.diagnostics import (
    MissingCacheError,
    SingularBlockError,
    averaged_gradient_term,
    block_matrix,
    compact_form_check,
    consensus_error,
    critic_loss,
    delta_factor,
    dk_surrogate,
    mean_preservation_residual,
    stepsize_bounds,
    vblocks,
    vhat_inv_norm,
)
from ltac.finite_mdp import FiniteMDP
from ltac.ltadmm import train
from ltac.policynet import init_policy
from ltac.sampler import ChainCursor, collect
from ltac.topology import build_structures, complete_graph, lambda_bounds, path_graph, ring_graph
from ltac.valuenet import ValueNetParams


def test_consensus_error_examples():
    assert consensus_error(np.ones((4, 3))) == 0.0
    v = np.array([1.0, -2.0, 0.5])
    assert consensus_error(np.array([v, -v])) == pytest.approx(2 * v @ v)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(-100, 100))
def test_consensus_error_translation_invariant(seed, c):
    W = np.random.default_rng(seed).standard_normal((5, 4))
    assert consensus_error(W + c) == pytest.approx(consensus_error(W), rel=1e-9, abs=1e-9)


def test_dk_terms():
    assert dk_surrogate(np.zeros((3, 4, 5)), 0.0).total == 0.0
    g = np.array([1.0, 2.0, -2.0])
    assert averaged_gradient_term(g[None, None, :]) == pytest.approx(9.0)
    rng = np.random.default_rng(0)
    G = rng.standard_normal((3, 5, 7))
    ref = 0.0
    for t in range(3):
        s = np.zeros(7)
        for i in range(5):
            s += G[t, i]
        s /= 5
        ref += sum(x * x for x in s)
    assert abs(averaged_gradient_term(G) - ref / 3) < 1e-12
    terms = dk_surrogate(G, 0.25, B_eval=20)
    assert terms.total == pytest.approx(terms.averaged_term + 0.25)
    assert terms.label == "estimate" and terms.B_eval == 20


def test_critic_loss_zero_for_perfect_critic():
    r, gamma = 0.1, 0.5
    mdp = FiniteMDP(np.ones((1, 1, 1)), np.array([[r]]), np.array([[1.0]]))
    v = r / (1 - gamma)
    net = ValueNetParams([np.array([[np.arctanh(v)]])], np.array([1.0]))
    batch = collect(ChainCursor(mdp, np.random.default_rng(0)), init_policy(0, 1, 1, [1], (), 0.0), 10)
    assert critic_loss([net], batch, gamma) < 1e-10
    off = ValueNetParams([np.array([[0.3]])], np.array([1.0]))
    assert critic_loss([off], batch, gamma) > 0


def test_stepsize_examples():
    g = ring_graph(5)
    assert stepsize_bounds(1.0, 3, 0.5, 0.25, 5, g).alpha_bars[2] == 0.25
    assert stepsize_bounds(1.0, 1, 0.5, 0.7, 5, g).alpha_bars[0] == pytest.approx(0.28867513459481287, abs=1e-12)
    rep = stepsize_bounds(1.0, 3, 0.5, 0.01, 5, g)
    assert rep.beta_window == pytest.approx((0.18426213483334735, 0.36852426966669471), abs=1e-9)
    assert not rep.beta_in_window and "below" in rep.warning


def test_stepsize_frozen_constants():
    # independent evaluation with 30-digit arithmetic
    rep = stepsize_bounds(1.0, 3, 0.5, 0.25, 5, ring_graph(5))
    assert rep.beta_in_window and rep.warning is None
    expected = [0.0962250448649376, 0.0931694990624912, 0.25, 0.000183077473998396, 0.00176471274553735, 0.00666700832137641]
    assert np.allclose(rep.alpha_bars, expected, rtol=1e-12)
    assert rep.alpha_bar == pytest.approx(0.000183077473998396, rel=1e-12)
    assert rep.beta0 == pytest.approx(598.948602470993, rel=1e-12)
    assert rep.c2_tilde == pytest.approx(2943371.51785502, rel=1e-12)
    assert rep.c4 == pytest.approx(319.439254651196, rel=1e-12)
    assert rep.vhat_inv_norm == pytest.approx(4.4796320548258068, rel=1e-12)
    assert rep.delta == pytest.approx(0.740881372890605, rel=1e-12)


def test_stepsize_rejects_nonpositive():
    for bad in ({"L": 0}, {"tau": 0}, {"rho": -1}, {"beta": 0}):
        args = {"L": 1.0, "tau": 3, "rho": 0.5, "beta": 0.25, "N": 5} | bad
        with pytest.raises(ValueError):
            stepsize_bounds(graph=ring_graph(5), **args)


def test_alpha_bar_monotone_in_L_and_tau():
    g = ring_graph(5)
    lam_u = lambda_bounds(g)[1]
    for tau in (1, 2, 3, 4):
        beta = 1.5 / (tau * lam_u * 0.5)
        vals = [stepsize_bounds(L, tau, 0.5, beta, 5, g).alpha_bar for L in (0.5, 1, 2, 4, 8)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
    for L in (0.5, 1.0, 3.0):
        beta = 0.05  # fixed beta, so only tau varies
        vals = [stepsize_bounds(L, tau, 0.5, beta, 5, g).alpha_bar for tau in (1, 2, 3, 4, 6)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("graph", [ring_graph(5), complete_graph(4), path_graph(4), ring_graph(8)])
def test_vblocks_invert_and_diagonalize(graph):
    lam_l, lam_u = lambda_bounds(graph)
    rho, tau = 0.5, 3
    beta = 1.4 / (tau * lam_u * rho)
    for lam, V, Vi in vblocks(graph, beta, rho, tau):
        assert np.abs(V @ Vi - np.eye(3)).max() < 1e-10
        D = Vi @ block_matrix(lam, beta, rho, tau) @ V
        assert np.abs(D - np.diag(np.diag(D))).max() < 1e-10
    # the block for lambda_l has eigenvalues with real part delta
    lam, V, Vi = [b for b in vblocks(graph, beta, rho, tau) if abs(b[0] + lam_l) < 1e-9][0]
    eig = np.diag(Vi @ block_matrix(lam, beta, rho, tau) @ V)
    nonzero = eig[np.abs(eig) > 1e-9]
    assert np.allclose(nonzero.real, delta_factor(lam_l, rho, tau, beta))


def test_vhat_norm_matches_dense_assembly():
    g = ring_graph(6)
    blocks = vblocks(g, 0.2, 0.5, 2)
    dense = np.zeros((3 * len(blocks), 3 * len(blocks)), dtype=complex)
    for k, (_, _, Vi) in enumerate(blocks):
        dense[3 * k : 3 * k + 3, 3 * k : 3 * k + 3] = Vi
    assert vhat_inv_norm(g, 0.2, 0.5, 2) == pytest.approx(np.linalg.norm(dense, 2), rel=1e-12)


def test_singular_block_reported():
    g = ring_graph(5)
    lam_u = lambda_bounds(g)[1]
    with pytest.raises(SingularBlockError) as err:
        vhat_inv_norm(g, 2.0 / (3 * lam_u * 0.5), 0.5, 3)
    assert err.value.eigenvalue == pytest.approx(-lam_u)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 2.0), st.integers(1, 6), st.floats(0.01, 0.999))
def test_delta_below_one_in_window(rho, tau, frac):
    lam_l, lam_u = lambda_bounds(ring_graph(5))
    beta = frac * 2 / (tau * lam_u * rho)
    assert lam_u * rho * tau * beta < 2
    assert delta_factor(lam_l, rho, tau, beta) < 1


def quad_history(K):
    return train(RunConfig.from_dict({
        "graph": {"type": "ring", "n": 3},
        "train": {"oracle": "quadratic", "K": K, "alpha": 0.1, "beta": 1 / 3},
        "diag": {"cache_compact_form": True},
    }))


def test_compact_form_check():
    h = quad_history(10)
    assert compact_form_check(h.compact) < 1e-12
    assert compact_form_check(quad_history(0).compact) == 0.0
    h.compact.omegas[4] = h.compact.omegas[4] + 1e-6
    assert compact_form_check(h.compact) > 5e-7


def test_compact_form_needs_cache():
    h = train(RunConfig.from_dict({"graph": {"type": "ring", "n": 3}, "train": {"oracle": "quadratic", "K": 2}}))
    with pytest.raises(MissingCacheError):
        compact_form_check(h.compact)


def test_compact_form_matrices_match_edge_updates():
    # Z-update row (i, j) of the matrix form is (z_ij - z_ji)/2 + rho w_j
    g = path_graph(4)
    st_ = build_structures(g)
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((len(g.directed_edges), 2))
    W = rng.standard_normal((4, 2))
    M = 0.5 * Z - 0.5 * st_.permutation @ Z + 0.5 * st_.permutation @ st_.incidence @ W
    for s, (i, j) in enumerate(g.directed_edges):
        assert np.allclose(M[s], 0.5 * (Z[s] - Z[g.slot_index[(j, i)]]) + 0.5 * W[j])


def test_mean_preservation_residual_values():
    g = ring_graph(3)
    W = np.arange(6.0).reshape(3, 2)
    Z = np.repeat(0.5 * W, 2, axis=0)
    assert mean_preservation_residual(Z, W, 0.5, g) == 0.0
    Z[0, 1] += 0.25
    assert mean_preservation_residual(Z, W, 0.5, g) == pytest.approx(0.25)
