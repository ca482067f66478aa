"""Markovian trajectory collection on agent-owned environment replicas.

A ``ChainCursor`` is one agent's private view of a single long trajectory.
Each step consumes one fixed-size row of uniforms (action draws, then
transition draws, then restart draws), so the chain is a deterministic
function of the seed and the sequence of policies used to drive it,
however the steps are split into calls.

When the environment signals the end of an episode the replica restarts
immediately and the chain carries on; the restart is logged so that
continuity checks can skip that boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .navenv import NavEnv, NavState
from .policynet import PolicyParams, actions_from_uniforms

__all__ = ["Transition", "Batch", "ChainCursor", "burn_in", "collect"]


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray


@dataclass
class Batch:
    """Consecutive transitions stored column-wise.

    ``rewards`` belong to the owning agent; ``all_rewards`` keeps every
    agent's reward for team-level bookkeeping.  ``resets[q]`` is true when
    the replica restarted right after transition ``q``.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    resets: np.ndarray
    all_rewards: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)

    def __getitem__(self, q: int) -> Transition:
        return Transition(self.states[q], self.actions[q], float(self.rewards[q]), self.next_states[q])

    def __iter__(self) -> Iterator[Transition]:
        return (self[q] for q in range(len(self)))

    def continuity_violations(self) -> list[int]:
        """Indices ``q`` where ``s_next[q] != s[q+1]`` without a logged restart."""
        bad = []
        for q in range(len(self) - 1):
            if not self.resets[q] and not np.array_equal(self.next_states[q], self.states[q + 1]):
                bad.append(q)
        return bad


@dataclass
class ChainCursor:
    env: object
    rng: np.random.Generator
    owner: int = 0
    state: object = None
    steps: int = 0
    reset_log: list[int] = field(default_factory=list)
    compiled: bool = True

    def __post_init__(self):
        if self.state is None:
            self.state = self.env.reset_from(self.rng.random(self.env.reset_draws))

    @property
    def observation(self) -> np.ndarray:
        return self.env.observe(self.state)

    @property
    def draws_per_step(self) -> int:
        return self.env.n_agents + self.env.step_draws + self.env.reset_draws

    def advance(self, params: PolicyParams, count: int) -> Batch:
        U = self.rng.random((count, self.draws_per_step))
        if self.compiled and isinstance(self.env, NavEnv):
            batch = self._nav_advance(params, U)
        else:
            batch = self._generic_advance(params, U)
        start = self.steps
        self.steps += count
        self.reset_log.extend(start + int(q) + 1 for q in np.flatnonzero(batch.resets))
        return batch

    def _generic_advance(self, params: PolicyParams, U: np.ndarray) -> Batch:
        env = self.env
        n, sd = env.n_agents, env.step_draws
        S, A, R, Sn, done = [], [], [], [], []
        state = self.state
        for row in U:
            s = env.observe(state)
            a = actions_from_uniforms(params, s, row[:n])
            nxt, r, d = env.step(state, a, row[n : n + sd])
            S.append(s)
            A.append(a)
            R.append(r)
            Sn.append(env.observe(nxt))
            done.append(d)
            state = env.reset_from(row[n + sd :]) if d else nxt
        self.state = state
        R_all = np.array(R, dtype=float)
        return Batch(
            np.array(S), np.array(A, dtype=int), R_all[:, self.owner], np.array(Sn),
            np.array(done, dtype=bool), R_all,
        )

    def _nav_advance(self, params: PolicyParams, U: np.ndarray) -> Batch:
        from ._kernels import nav_rollout

        cfg = self.env.cfg
        spec = params.spec
        n = cfg.n_agents
        count = U.shape[0]
        dims = np.array([[spec.state_dim, *spec.hidden, spec.action_counts[j]] for j in range(n)], dtype=np.int64)
        offsets = np.array(spec.offsets, dtype=np.int64)
        st = self.state
        pos = np.ascontiguousarray(st.positions, dtype=float).copy()
        vel = np.ascontiguousarray(st.velocities, dtype=float).copy()
        land = np.ascontiguousarray(st.landmarks, dtype=float).copy()
        d_s = 4 * n
        S = np.empty((count, d_s))
        Sn = np.empty((count, d_s))
        A = np.empty((count, n), dtype=np.int64)
        R = np.empty((count, n))
        done = np.empty(count, dtype=np.bool_)
        obs_scale = 1.0 / (2.0 * np.sqrt(n)) if cfg.scale_state else 1.0
        steps = nav_rollout(
            params.flat, offsets, dims, pos, vel, land, int(st.step_count), U,
            np.asarray(cfg.mass, dtype=float), np.asarray(cfg.v_max, dtype=float),
            float(cfg.damping), float(cfg.dt), float(cfg.d_coll), float(cfg.force_mag),
            float(cfg.bound), float(cfg.done_threshold), int(cfg.max_steps),
            float(cfg.reward_scale), float(cfg.reward_shift), obs_scale,
            S, A, R, Sn, done,
        )
        self.state = NavState(pos, vel, land, int(steps))
        return Batch(S, A, R[:, self.owner].copy(), Sn, done, R)


def burn_in(cursor: ChainCursor, params: PolicyParams, length: int) -> ChainCursor:
    """Run the chain ``length`` steps under ``params`` and discard the samples."""
    if length < 0:
        raise ValueError("burn-in length must be >= 0")
    if length:
        cursor.advance(params, length)
    return cursor


def collect(cursor: ChainCursor, params: PolicyParams, count: int) -> Batch:
    if count < 1:
        raise ValueError("count must be >= 1")
    return cursor.advance(params, count)
