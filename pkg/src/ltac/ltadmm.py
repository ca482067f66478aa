"""Local-training ADMM actor-critic.

Each outer round every agent takes ``tau`` local actor steps from its
round anchor ``omega_k`` while the bridge variables stay frozen; then one
communication round updates every bridge variable ``z_ij`` from a single
message sent by neighbour ``j``.  The gradient used in the local steps
comes from a pluggable oracle: the actor-critic estimator (burn-in,
projected TD critic, Markovian actor batch) or an exact quadratic used to
verify the algebra deterministically.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .critic import decentralized_td, td_errors
from .diagnostics import (
    CompactTrace,
    RoundMetrics,
    averaged_gradient_term,
    consensus_error,
    critic_loss,
    mean_preservation_residual,
    objective_gradient_estimate,
)
from .navenv import NavEnv
from .policynet import PolicyParams, PolicySpec, init_policy, weighted_score
from .sampler import ChainCursor, burn_in, collect
from .topology import Graph
from .valuenet import ProjectionBall, ValueNetParams, init_valuenet

__all__ = [
    "TopologyMismatchError",
    "InvariantViolation",
    "BridgeVars",
    "MessageLedger",
    "AgentState",
    "LocalGradient",
    "QuadraticOracle",
    "ActorCriticOracle",
    "RoundResult",
    "TrainingHistory",
    "penalty_term",
    "local_actor_step",
    "communicate",
    "train_round",
    "train",
    "agent_stream",
]

# stream purposes for per-agent generators
_ENV, _CRITIC_INIT, _CRITIC_PICK, _PROBE, _QUAD_INIT = range(5)


class TopologyMismatchError(KeyError):
    pass


class InvariantViolation(AssertionError):
    pass


def agent_stream(seed: int, agent: int, purpose: int) -> np.random.Generator:
    """Independent generator for ``(agent, purpose)`` derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(agent), int(purpose))))


@dataclass
class BridgeVars:
    """Bridge vectors ``z_ij`` stored as rows in the graph's directed-slot order."""

    edges: tuple[tuple[int, int], ...]
    values: np.ndarray

    @classmethod
    def init(cls, graph: Graph, omega0: np.ndarray, rho: float) -> "BridgeVars":
        """``z_ij = rho * omega0`` on every directed edge."""
        omega0 = np.asarray(omega0, dtype=float)
        vals = np.tile(rho * omega0, (len(graph.directed_edges), 1))
        return cls(graph.directed_edges, vals)

    @classmethod
    def from_mapping(cls, graph: Graph, mapping: dict) -> "BridgeVars":
        missing = [e for e in graph.directed_edges if e not in mapping]
        if missing:
            raise TopologyMismatchError(f"no bridge variable for directed edge {missing[0]}")
        extra = [e for e in mapping if e not in graph.slot_index]
        if extra:
            raise TopologyMismatchError(f"bridge variable on non-edge {extra[0]}")
        return cls(graph.directed_edges, np.array([np.asarray(mapping[e], dtype=float) for e in graph.directed_edges]))

    def __getitem__(self, edge) -> np.ndarray:
        try:
            return self.values[self.edges.index(tuple(edge))]
        except ValueError:
            raise TopologyMismatchError(f"no bridge variable for directed edge {tuple(edge)}") from None

    def keys(self):
        return list(self.edges)

    def as_dict(self) -> dict:
        return {e: self.values[s] for s, e in enumerate(self.edges)}

    def row(self, i: int) -> np.ndarray:
        """``z_ij`` for the neighbours ``j`` of ``i`` (contiguous slots)."""
        idx = [s for s, (a, _) in enumerate(self.edges) if a == i]
        return self.values[idx[0] : idx[-1] + 1] if idx else self.values[:0]

    def copy(self) -> "BridgeVars":
        return BridgeVars(self.edges, self.values.copy())

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class MessageLedger:
    """Counts every vector that crosses an agent boundary, by type."""

    rounds: int = 0
    counts: Counter = field(default_factory=Counter)
    per_round: list[int] = field(default_factory=list)
    _open: int | None = None

    def begin_round(self):
        if self._open is not None:
            raise RuntimeError("communication round already open")
        self._open = 0

    def send(self, kind: str, src: int, dst: int):
        if self._open is None:
            raise RuntimeError("message sent outside a communication round")
        if src == dst:
            raise RuntimeError("a message must cross an agent boundary")
        self.counts[kind] += 1
        self._open += 1

    def end_round(self):
        self.per_round.append(self._open)
        self.rounds += 1
        self._open = None

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def kinds(self) -> set[str]:
        return set(self.counts)

    def to_dict(self) -> dict:
        return {"rounds": self.rounds, "counts": dict(self.counts), "total": self.total, "per_round": list(self.per_round)}


def penalty_term(omega_i: np.ndarray, z_row: np.ndarray, rho: float) -> np.ndarray:
    """``rho |N_i| omega_i - sum_j z_ij``."""
    z_row = np.atleast_2d(np.asarray(z_row, dtype=float))
    if z_row.shape[0] < 1:
        raise ValueError("agent has no neighbours")
    return rho * z_row.shape[0] * np.asarray(omega_i, dtype=float) - z_row.sum(axis=0)


def local_actor_step(phi: np.ndarray, g: np.ndarray, alpha: float, beta: float, penalty: np.ndarray) -> np.ndarray:
    """``phi + alpha g - beta penalty``."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    return phi + alpha * g - beta * penalty


def communicate(Z: BridgeVars, omegas, rho: float, graph: Graph, ledger: MessageLedger | None = None, fault: str | None = None) -> BridgeVars:
    """One communication round.

    Agent ``j`` sends ``m_ji = z_ji - 2 rho omega_j`` to each neighbour
    ``i``, which sets ``z_ij <- (z_ij - m_ji) / 2``.  ``fault="flip_bridge_sign"``
    replaces the minus by a plus (used only to check that the verifier
    notices a broken update).
    """
    if tuple(Z.edges) != graph.directed_edges:
        have, want = set(Z.edges), set(graph.directed_edges)
        missing = sorted(want - have)
        if missing:
            raise TopologyMismatchError(f"no bridge variable for directed edge {missing[0]}")
        extra = sorted(have - want)
        if extra:
            raise TopologyMismatchError(f"bridge variable on non-edge {extra[0]}")
        raise TopologyMismatchError("bridge variables are not in the graph's slot order")
    W = np.asarray(omegas, dtype=float)
    slots = graph.slot_index
    partner = np.array([slots[(j, i)] for (i, j) in graph.directed_edges])
    sender = np.array([j for (_, j) in graph.directed_edges])
    msgs = Z.values[partner] - 2.0 * rho * W[sender]
    if ledger is not None:
        ledger.begin_round()
        for i, j in graph.directed_edges:
            ledger.send("policy", j, i)
        ledger.end_round()
    if fault is None:
        new = 0.5 * (Z.values - msgs)
    elif fault == "flip_bridge_sign":
        new = 0.5 * (Z.values + msgs)
    else:
        raise ValueError(f"unknown fault {fault!r}")
    return BridgeVars(Z.edges, new)


# agents and gradient oracles ----------------------------------------------------


@dataclass
class AgentState:
    index: int
    omega: np.ndarray
    phi: np.ndarray
    theta: ValueNetParams | None = None
    ball: ProjectionBall | None = None
    cursor: ChainCursor | None = None
    rng: np.random.Generator | None = None


@dataclass
class LocalGradient:
    g: np.ndarray
    team_reward: float = float("nan")
    td_loss: float = float("nan")
    score_norm_max: float = 0.0


class QuadraticOracle:
    """Exact ascent gradients of ``J_i(w) = -q_i/2 ||w - c_i||^2``."""

    mode = "exact-quadratic"

    def __init__(self, targets, curvature=None):
        self.targets = np.atleast_2d(np.asarray(targets, dtype=float))
        n = self.targets.shape[0]
        if curvature is None:
            curvature = 1.0
        q = np.broadcast_to(np.asarray(curvature, dtype=float), (n,)).copy()
        if np.any(q <= 0):
            raise ValueError("curvatures must be positive")
        self.curvature = q

    @property
    def dim(self) -> int:
        return self.targets.shape[1]

    def gradient(self, agent: AgentState, phi: np.ndarray) -> LocalGradient:
        i = agent.index
        g = self.curvature[i] * (self.targets[i] - phi)
        return LocalGradient(g, team_reward=self.objective(i, phi))

    def objective(self, i: int, w) -> float:
        d = np.asarray(w) - self.targets[i]
        return float(-0.5 * self.curvature[i] * d @ d)

    def optimum(self) -> np.ndarray:
        q = self.curvature
        return (q[:, None] * self.targets).sum(0) / q.sum()

    def global_gradient(self, w) -> np.ndarray:
        return (self.curvature[:, None] * (self.targets - np.asarray(w))).mean(axis=0)


class ActorCriticOracle:
    """Agent-local estimator ``g = (1/B) sum_q delta_q psi_q``.

    Before each estimate the agent's chain is burned in under the current
    local policy, its critic runs projected TD warm-started from the
    previous output, and the actor batch continues the same chain.
    """

    mode = "actor-critic"

    def __init__(self, spec: PolicySpec, cfg: RunConfig):
        self.spec = spec
        self.B = cfg.train.B
        self.burn_in = cfg.sampler.burn_in
        self.critic = cfg.critic
        self.score_clip = cfg.policy.score_clip

    def gradient(self, agent: AgentState, phi: np.ndarray) -> LocalGradient:
        c = self.critic
        policy = PolicyParams(self.spec, phi)
        burn_in(agent.cursor, policy, self.burn_in)
        res = decentralized_td(agent.cursor, policy, agent.theta, c.Nc, c.eta, c.Tc, agent.ball, agent.rng, c.gamma)
        agent.theta = res.theta_out
        batch = collect(agent.cursor, policy, self.B)
        deltas = td_errors(agent.theta, batch, c.gamma)
        g, norms = weighted_score(policy, batch.states, batch.actions, deltas / self.B, self.score_clip)
        return LocalGradient(g, float(batch.all_rewards.mean()), float(np.mean(res.td_loss_trace)), float(norms.max()))


@dataclass
class RoundResult:
    Z: BridgeVars
    g_trace: np.ndarray  # (tau, N, d)
    team_reward: float
    td_loss: float
    score_norm_max: float
    anchor_intact: bool


def train_round(agents: list[AgentState], Z: BridgeVars, graph: Graph, alpha: float, beta: float, rho: float,
                tau: int, oracle, ledger: MessageLedger | None = None, fault: str | None = None) -> RoundResult:
    """One outer iteration: local training on every agent, then one communication round.

    Mutates ``agent.omega`` / ``agent.phi`` / ``agent.theta`` in place and
    returns the new bridge variables with the cached local gradients.
    """
    n = len(agents)
    anchors = [a.omega.copy() for a in agents]
    z_before = Z.values.copy()
    d = Z.dim
    g_trace = np.zeros((tau, n, d))
    rewards, losses, smax = [], [], 0.0
    for a in agents:
        a.phi = a.omega.copy()
        z_row = Z.row(a.index)
        for t in range(tau):
            lg = oracle.gradient(a, a.phi)
            g_trace[t, a.index] = lg.g
            pen = penalty_term(a.omega, z_row, rho)
            a.phi = local_actor_step(a.phi, lg.g, alpha, beta, pen)
            rewards.append(lg.team_reward)
            losses.append(lg.td_loss)
            smax = max(smax, lg.score_norm_max)
    intact = all(np.array_equal(a.omega, w) for a, w in zip(agents, anchors)) and np.array_equal(Z.values, z_before)
    for a in agents:
        a.omega = a.phi.copy()
    Z_next = communicate(Z, np.array([a.omega for a in agents]), rho, graph, ledger, fault)
    return RoundResult(Z_next, g_trace, float(np.mean(rewards)), float(np.mean(losses)), smax, intact)


# full training ------------------------------------------------------------------


@dataclass
class TrainingHistory:
    metrics: list[RoundMetrics]
    initial_omega: np.ndarray
    final_omegas: np.ndarray
    config: dict
    ledger: MessageLedger
    policy_spec: dict | None = None
    compact: CompactTrace | None = None
    violations: list[str] = field(default_factory=list)
    final_Z: np.ndarray | None = None
    wall_times: list[float] = field(default_factory=list)

    @property
    def omega_bar(self) -> np.ndarray:
        return self.final_omegas.mean(axis=0)

    @property
    def comm_rounds(self) -> int:
        return self.ledger.rounds

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "policy_spec": self.policy_spec,
            "initial_omega": self.initial_omega.tolist(),
            "final_omegas": self.final_omegas.tolist(),
            "omega_bar": self.omega_bar.tolist(),
            "ledger": self.ledger.to_dict(),
            "violations": list(self.violations),
            "metrics": [m.to_dict() for m in self.metrics],
            "wall_times": list(self.wall_times),
        }


def _setup(cfg: RunConfig, graph: Graph):
    n = graph.n
    if cfg.train.oracle == "quadratic":
        q = cfg.quadratic
        targets = np.eye(n) if q.targets is None else np.asarray(q.targets, dtype=float)
        if targets.shape[0] != n:
            raise ValueError(f"quadratic.targets needs {n} rows, got {targets.shape[0]}")
        oracle = QuadraticOracle(targets, q.curvature)
        omega0 = q.init_std * agent_stream(cfg.train_seed, n, _QUAD_INIT).standard_normal(oracle.dim)
        agents = [AgentState(i, omega0.copy(), omega0.copy()) for i in range(n)]
        return oracle, agents, omega0, None, None

    env = NavEnv(cfg.env)
    params = init_policy(cfg.train_seed, n, env.state_dim, env.action_counts, cfg.policy.hidden, cfg.policy.init_std)
    omega0 = params.flat.copy()
    c = cfg.critic
    agents = []
    for i in range(n):
        theta = init_valuenet(agent_stream(cfg.train_seed, i, _CRITIC_INIT), c.width, c.depth, env.state_dim, c.activation)
        cursor = ChainCursor(env, agent_stream(cfg.sampler_seed, i, _ENV), owner=i)
        agents.append(AgentState(i, omega0.copy(), omega0.copy(), theta, ProjectionBall(theta.copy(), c.radius),
                                 cursor, agent_stream(cfg.sampler_seed, i, _CRITIC_PICK)))
    probe = ChainCursor(env, agent_stream(cfg.sampler_seed, n, _PROBE))
    return ActorCriticOracle(params.spec, cfg), agents, omega0, params.spec, probe


def train(cfg: RunConfig, fault: str | None = None, progress=None) -> TrainingHistory:
    """Run ``cfg.train.K`` rounds and record per-round metrics.

    With ``train.strict`` set, a broken invariant raises
    ``InvariantViolation``; otherwise it is recorded in ``violations``.
    """
    tc = cfg.train
    graph = cfg.graph_obj
    n = graph.n
    oracle, agents, omega0, spec, probe = _setup(cfg, graph)
    Z = BridgeVars.init(graph, omega0, tc.rho)
    ledger = MessageLedger()
    compact = CompactTrace(graph, tc.alpha, tc.beta, tc.rho, tc.tau) if cfg.diag.cache_compact_form else None
    history = TrainingHistory([], omega0.copy(), np.array([a.omega for a in agents]), cfg.to_dict(), ledger,
                              spec.to_dict() if spec is not None else None, compact)

    def check(ok: bool, msg: str):
        if ok:
            return
        if tc.strict:
            raise InvariantViolation(msg)
        history.violations.append(msg)

    W = np.array([a.omega for a in agents])
    r0 = mean_preservation_residual(Z.values, W, tc.rho, graph)
    check(r0 < 1e-12, f"round -1: mean preservation residual {r0:.3e}")
    returns: list[float] = []
    window = cfg.diag.return_window
    for k in range(tc.K):
        start = time.perf_counter()
        W = np.array([a.omega for a in agents])
        w_bar = W.mean(axis=0)
        if compact is not None:
            compact.omegas.append(W.copy())
            compact.zs.append(Z.values.copy())

        # diagnostics at the round anchor average, before training moves anything
        if spec is not None:
            pol_bar = PolicyParams(spec, w_bar)
            pbatch = collect(probe, pol_bar, cfg.diag.B_eval)
            thetas = [a.theta for a in agents]
            est = objective_gradient_estimate(pol_bar, thetas, pbatch, cfg.critic.gamma, cfg.policy.score_clip)
            grad_norm = float(est @ est)
            c_loss = critic_loss(thetas, pbatch, cfg.critic.gamma)
        else:
            gg = oracle.global_gradient(w_bar)
            grad_norm = float(gg @ gg)
            c_loss = float("nan")

        res = train_round(agents, Z, graph, tc.alpha, tc.beta, tc.rho, tc.tau, oracle, ledger, fault)
        Z = res.Z
        W_next = np.array([a.omega for a in agents])
        if compact is not None:
            compact.gsums.append(res.g_trace.sum(axis=0))

        mp = mean_preservation_residual(Z.values, W_next, tc.rho, graph)
        drift = W_next.mean(axis=0) - w_bar - (tc.alpha / n) * res.g_trace.sum(axis=(0, 1))
        mr = float(np.abs(drift).max(initial=0.0))
        check(mp < 1e-12, f"round {k}: mean preservation residual {mp:.3e}")
        check(mr < 1e-10, f"round {k}: average-iterate recursion residual {mr:.3e}")
        check(res.anchor_intact, f"round {k}: anchor or bridge variables changed during local training")
        check(ledger.rounds == k + 1, f"round {k}: {ledger.rounds} communication rounds logged")
        check(ledger.per_round[-1] == 2 * len(graph.edges), f"round {k}: {ledger.per_round[-1]} messages sent")
        check(ledger.kinds() <= {"policy"}, f"round {k}: non-policy message kinds {sorted(ledger.kinds())}")

        returns.append(res.team_reward)
        avg_term = averaged_gradient_term(res.g_trace)
        elapsed = time.perf_counter() - start
        history.wall_times.append(elapsed)
        history.metrics.append(RoundMetrics(
            round=k,
            comm_rounds=ledger.rounds,
            return_mean=float(np.mean(returns[-window:])),
            consensus_error=consensus_error(W_next),
            critic_loss=c_loss,
            dk_surrogate=avg_term + grad_norm,
            grad_norm_est=grad_norm,
            wall_time_s=elapsed if cfg.diag.record_wall_time else 0.0,
            averaged_term=avg_term,
            round_return=res.team_reward,
            score_norm_max=res.score_norm_max,
            mean_preservation=mp,
            mean_recursion=mr,
        ))
        if progress is not None:
            progress(history.metrics[-1])

    history.final_omegas = np.array([a.omega for a in agents])
    history.final_Z = Z.values.copy()
    if compact is not None:
        compact.omegas.append(history.final_omegas.copy())
        compact.zs.append(Z.values.copy())
    return history
