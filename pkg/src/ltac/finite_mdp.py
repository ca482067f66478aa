"""Small tabular MDPs with feature-embedded states.

Used as a ground-truth environment: stationary distributions and policy
values can be solved exactly with linear algebra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["FiniteMDP", "FiniteState", "two_state_chain"]


@dataclass
class FiniteState:
    index: int
    step_count: int = 0


class FiniteMDP:
    """Single-agent MDP with transition tensor ``P[s, a, s']`` and rewards ``R[s, a]``.

    ``features[s]`` is the state vector handed to policies and critics.
    There are no terminal states; ``reset_from`` is only used to start a
    chain from the uniform distribution.
    """

    n_agents = 1
    step_draws = 1
    reset_draws = 1

    def __init__(self, P, R, features):
        self.P = np.asarray(P, dtype=float)
        self.R = np.asarray(R, dtype=float)
        self.features = np.asarray(features, dtype=float)
        n_s, n_a, n_s2 = self.P.shape
        if n_s != n_s2 or self.R.shape != (n_s, n_a) or self.features.shape[0] != n_s:
            raise ValueError("inconsistent MDP shapes")
        if not np.allclose(self.P.sum(-1), 1.0):
            raise ValueError("transition rows must sum to one")
        self._cdf = np.cumsum(self.P, axis=-1)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def state_dim(self) -> int:
        return self.features.shape[1]

    @property
    def action_counts(self) -> tuple[int, ...]:
        return (self.P.shape[1],)

    def reset_from(self, u) -> FiniteState:
        return FiniteState(min(int(u[0] * self.n_states), self.n_states - 1))

    def step(self, state: FiniteState, actions, u):
        a = int(actions[0])
        s = state.index
        nxt = int(np.searchsorted(self._cdf[s, a], u[0], side="right"))
        nxt = min(nxt, self.n_states - 1)
        return FiniteState(nxt, state.step_count + 1), np.array([self.R[s, a]]), False

    def observe(self, state: FiniteState) -> np.ndarray:
        return self.features[state.index]

    def policy_matrices(self, action_probs: np.ndarray):
        """Return ``(P_pi, r_pi)`` for a tabular policy ``action_probs[s, a]``."""
        P_pi = np.einsum("sa,sat->st", action_probs, self.P)
        r_pi = (action_probs * self.R).sum(-1)
        return P_pi, r_pi

    def stationary(self, action_probs: np.ndarray) -> np.ndarray:
        P_pi, _ = self.policy_matrices(action_probs)
        n = self.n_states
        M = np.vstack([P_pi.T - np.eye(n), np.ones(n)])
        rhs = np.zeros(n + 1)
        rhs[-1] = 1.0
        return np.linalg.lstsq(M, rhs, rcond=None)[0]

    def values(self, action_probs: np.ndarray, gamma: float) -> np.ndarray:
        """Solve the Bellman system ``(I - gamma P_pi) V = r_pi``."""
        P_pi, r_pi = self.policy_matrices(action_probs)
        return np.linalg.solve(np.eye(self.n_states) - gamma * P_pi, r_pi)


def two_state_chain(p01: float = 0.1, p10: float = 0.2, rewards=(0.0, 0.0), features=None) -> FiniteMDP:
    """Two states, two actions, action-independent transitions."""
    P1 = np.array([[1 - p01, p01], [p10, 1 - p10]])
    P = np.stack([P1, P1], axis=1)
    R = np.tile(np.asarray(rewards, dtype=float)[:, None], (1, 2))
    if features is None:
        features = np.eye(2)
    return FiniteMDP(P, R, features)
