"""Cooperative navigation with damped, force-driven point masses.

Each agent moves in the square ``[-1, 1]^2`` toward its own landmark.  An
action applies a unit-axis force (or nothing, for ``stay``); velocities are
damped, accelerated, speed-clipped, then integrated.  Rewards are the
negative landmark distance minus one per nearby agent.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

__all__ = [
    "ACTIONS",
    "STAY",
    "InvalidActionError",
    "NavConfig",
    "NavState",
    "NavEnv",
    "reset",
    "reset_from_uniforms",
    "step",
    "flatten_state",
    "unflatten_positions",
]

# up, down, left, right, stay
ACTIONS = np.array([[0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
STAY = 4


class InvalidActionError(ValueError):
    pass


def _per_agent(value, n: int, name: str) -> tuple[float, ...]:
    if np.isscalar(value):
        out = (float(value),) * n
    else:
        out = tuple(float(v) for v in value)
        if len(out) != n:
            raise ValueError(f"env.{name} needs {n} entries, got {len(out)}")
    if any(v <= 0 for v in out):
        raise ValueError(f"env.{name} must be positive")
    return out


@dataclass(frozen=True)
class NavConfig:
    n_agents: int = 5
    mass: float | tuple[float, ...] = 1.0
    damping: float = 0.25
    dt: float = 0.1
    v_max: float | tuple[float, ...] = 1.0
    d_coll: float = 0.1
    force_mag: float = 1.0
    bound: float = 1.0
    done_threshold: float = 0.15
    max_steps: int = 25
    scale_state: bool = True
    reward_scale: float = 1.0
    reward_shift: float = 0.0

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("env.n_agents must be >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("env.damping must lie in [0, 1)")
        object.__setattr__(self, "mass", _per_agent(self.mass, self.n_agents, "mass"))
        object.__setattr__(self, "v_max", _per_agent(self.v_max, self.n_agents, "v_max"))
        for name in ("dt", "d_coll", "force_mag", "bound", "done_threshold"):
            if getattr(self, name) <= 0:
                raise ValueError(f"env.{name} must be positive")
        if self.max_steps < 1:
            raise ValueError("env.max_steps must be >= 1")

    @classmethod
    def from_dict(cls, d: dict | None) -> "NavConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"env.{sorted(unknown)[0]}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mass"] = list(self.mass)
        out["v_max"] = list(self.v_max)
        return out

    @property
    def state_dim(self) -> int:
        return 4 * self.n_agents


@dataclass
class NavState:
    positions: np.ndarray
    velocities: np.ndarray
    landmarks: np.ndarray
    step_count: int = 0

    def copy(self) -> "NavState":
        return NavState(
            self.positions.copy(), self.velocities.copy(), self.landmarks.copy(), self.step_count
        )


def reset_from_uniforms(cfg: NavConfig, u: np.ndarray) -> NavState:
    """Reset from ``4 * n_agents`` uniforms on [0, 1): positions, then landmarks."""
    n = cfg.n_agents
    xy = -cfg.bound + 2.0 * cfg.bound * np.asarray(u, dtype=float).reshape(2 * n, 2)
    return NavState(xy[:n].copy(), np.zeros((n, 2)), xy[n:].copy(), 0)


def reset(cfg: NavConfig, rng: np.random.Generator) -> NavState:
    return reset_from_uniforms(cfg, rng.random(4 * cfg.n_agents))


def _rewards(cfg: NavConfig, pos: np.ndarray, land: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dist = np.linalg.norm(pos - land, axis=1)
    diff = pos[:, None, :] - pos[None, :, :]
    pair = np.sqrt((diff**2).sum(-1))
    close = pair < cfg.d_coll
    np.fill_diagonal(close, False)
    r = -dist - close.sum(axis=1)
    return r, dist


def step(cfg: NavConfig, state: NavState, actions) -> tuple[NavState, np.ndarray, bool]:
    """Advance one time step.

    Returns the new state, the per-agent rewards evaluated at the new
    positions, and the episode-done flag.
    """
    a = np.asarray(actions, dtype=int)
    if a.shape != (cfg.n_agents,):
        raise InvalidActionError(f"expected {cfg.n_agents} actions, got shape {a.shape}")
    if a.min() < 0 or a.max() >= len(ACTIONS):
        raise InvalidActionError(f"action indices must lie in 0..{len(ACTIONS) - 1}: {a.tolist()}")

    mass = np.asarray(cfg.mass)
    vmax = np.asarray(cfg.v_max)
    force = cfg.force_mag * ACTIONS[a]
    v_pre = (1.0 - cfg.damping) * state.velocities + (cfg.dt / mass)[:, None] * force
    speed = np.linalg.norm(v_pre, axis=1)
    over = speed > vmax
    v_new = v_pre.copy()
    v_new[over] *= (vmax[over] / speed[over])[:, None]
    p_new = np.clip(state.positions + cfg.dt * v_new, -cfg.bound, cfg.bound)

    moving = a != STAY
    positions = np.where(moving[:, None], p_new, state.positions)
    velocities = np.where(moving[:, None], v_new, state.velocities)

    r, dist = _rewards(cfg, positions, state.landmarks)
    r = cfg.reward_scale * r + cfg.reward_shift
    count = state.step_count + 1
    done = bool(dist.sum() < cfg.done_threshold or count >= cfg.max_steps)
    return NavState(positions, velocities, state.landmarks, count), r, done


def flatten_state(state: NavState, scale: bool = True) -> np.ndarray:
    """Agent positions then landmark positions, optionally scaled to the unit ball."""
    s = np.concatenate([state.positions.ravel(), state.landmarks.ravel()])
    if scale:
        s = s * (1.0 / (2.0 * np.sqrt(len(state.positions))))
    return s


def unflatten_positions(s: np.ndarray, n_agents: int, scale: bool = True) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=float)
    if scale:
        s = s * (2.0 * np.sqrt(n_agents))
    return s[: 2 * n_agents].reshape(n_agents, 2), s[2 * n_agents :].reshape(n_agents, 2)


class NavEnv:
    """Environment handle used by the sampler.

    The sampler feeds every step a fixed block of uniforms: one per agent
    for the action draw, ``step_draws`` for the transition and
    ``reset_draws`` for a possible episode restart.  Navigation dynamics
    are deterministic, so only the restart consumes draws.
    """

    step_draws = 0

    def __init__(self, cfg: NavConfig | None = None):
        self.cfg = cfg or NavConfig()
        self.reset_draws = 4 * self.cfg.n_agents

    @property
    def n_agents(self) -> int:
        return self.cfg.n_agents

    @property
    def state_dim(self) -> int:
        return self.cfg.state_dim

    @property
    def action_counts(self) -> tuple[int, ...]:
        return (len(ACTIONS),) * self.cfg.n_agents

    def reset_from(self, u: np.ndarray) -> NavState:
        return reset_from_uniforms(self.cfg, u)

    def step(self, state: NavState, actions, u: np.ndarray | None = None):
        return step(self.cfg, state, actions)

    def observe(self, state: NavState) -> np.ndarray:
        return flatten_state(state, self.cfg.scale_state)

    def with_config(self, **changes) -> "NavEnv":
        return NavEnv(replace(self.cfg, **changes))
