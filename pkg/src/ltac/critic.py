"""Projected TD(0) critic trained on contiguous Markovian mini-batches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .policynet import PolicyParams
from .sampler import Batch, ChainCursor, Transition, collect
from .valuenet import ProjectionBall, ValueNetParams, project, value, value_batch, weighted_value_grad

__all__ = ["CriticRunResult", "td_error", "td_errors", "td_semigradient", "decentralized_td"]


@dataclass
class CriticRunResult:
    theta_out: ValueNetParams
    final_state: np.ndarray
    td_loss_trace: list[float] = field(default_factory=list)
    picked: int = 1


def td_error(params: ValueNetParams, tr: Transition, gamma: float) -> float:
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    return tr.r + gamma * value(params, tr.s_next) - value(params, tr.s)


def td_errors(params: ValueNetParams, batch: Batch, gamma: float) -> np.ndarray:
    """Vector of TD errors ``r + gamma V(s') - V(s)`` over a batch."""
    both = value_batch(params, np.vstack([batch.states, batch.next_states]))
    n = len(batch)
    return batch.rewards + gamma * both[n:] - both[:n]


def td_semigradient(params: ValueNetParams, batch: Batch, gamma: float) -> tuple[list[np.ndarray], np.ndarray]:
    """Batch-mean semi-gradient ``(1/n) sum_j delta_j grad V(s_j)``.

    The bootstrapped target is treated as a constant.
    """
    deltas = td_errors(params, batch, gamma)
    grads, _ = weighted_value_grad(params, batch.states, deltas / len(batch))
    return grads, deltas


def decentralized_td(
    cursor: ChainCursor,
    policy: PolicyParams,
    theta_init: ValueNetParams,
    n_c: int,
    eta: float,
    t_c: int,
    ball: ProjectionBall,
    rng: np.random.Generator,
    gamma: float = 0.95,
) -> CriticRunResult:
    """Run ``t_c`` projected TD iterations on consecutive batches of ``n_c`` samples.

    The returned parameter is the iterate after a uniformly drawn
    iteration ``d'`` in ``1..t_c``.  ``d'`` is drawn before training, so
    only that one snapshot is kept.
    """
    if n_c < 1 or t_c < 1:
        raise ValueError("n_c and t_c must be >= 1")
    if eta < 0:
        raise ValueError("eta must be non-negative")
    pick = int(rng.integers(1, t_c + 1))
    theta = theta_init
    chosen = None
    trace = []
    batch = None
    for it in range(1, t_c + 1):
        batch = collect(cursor, policy, n_c)
        grads, deltas = td_semigradient(theta, batch, gamma)
        trace.append(float(np.mean(deltas**2)))
        theta = project(theta.add_scaled(grads, eta), ball)
        if it == pick:
            chosen = theta
    return CriticRunResult(chosen, batch.next_states[-1].copy(), trace, pick)
