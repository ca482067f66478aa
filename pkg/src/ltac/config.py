"""Run configuration: typed sections, defaults, and strict key checking.

A config is a JSON object with the sections ``env``, ``critic``,
``policy``, ``sampler``, ``train``, ``quadratic``, ``diag`` and ``graph``
plus the top-level ``seed`` and ``out``.  Every key is optional; unknown
keys are rejected with a ``ConfigError`` naming the dotted key.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any

from .navenv import NavConfig
from .topology import TopologyError, graph_from_config

__all__ = [
    "ConfigError",
    "CriticConfig",
    "PolicyConfig",
    "SamplerConfig",
    "TrainConfig",
    "QuadraticConfig",
    "DiagConfig",
    "RunConfig",
    "parse_override",
    "apply_overrides",
]


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, message: str = ""):
        self.key = key
        super().__init__(f"{key}: {message}" if message else key)


@dataclass(frozen=True)
class CriticConfig:
    width: int = 64
    depth: int = 2
    activation: str = "tanh"
    radius: float = 10.0
    Nc: int = 20
    Tc: int = 3
    eta: float = 0.001
    gamma: float = 0.95

    def validate(self):
        if self.width < 1:
            raise ConfigError("critic.width", "must be >= 1")
        if self.depth < 1:
            raise ConfigError("critic.depth", "must be >= 1")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError("critic.activation", "must be 'tanh' or 'relu'")
        if self.radius <= 0:
            raise ConfigError("critic.radius", "must be positive")
        if self.Nc < 1:
            raise ConfigError("critic.Nc", "must be >= 1")
        if self.Tc < 1:
            raise ConfigError("critic.Tc", "must be >= 1")
        if self.eta < 0:
            raise ConfigError("critic.eta", "must be non-negative")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("critic.gamma", "must lie in (0, 1)")


@dataclass(frozen=True)
class PolicyConfig:
    hidden: int = 64
    score_clip: float | None = None
    init_std: float = 0.1

    def validate(self):
        if self.hidden < 1:
            raise ConfigError("policy.hidden", "must be >= 1")
        if self.score_clip is not None and self.score_clip <= 0:
            raise ConfigError("policy.score_clip", "must be positive or null")
        if self.init_std < 0:
            raise ConfigError("policy.init_std", "must be non-negative")


@dataclass(frozen=True)
class SamplerConfig:
    burn_in: int = 200
    seed: int | None = None

    def validate(self):
        if self.burn_in < 0:
            raise ConfigError("sampler.burn_in", "must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    K: int = 100
    tau: int = 3
    B: int = 20
    alpha: float = 0.001
    beta: float = 0.01
    rho: float = 0.5
    seed: int | None = None
    oracle: str = "actor-critic"
    strict: bool = True

    def validate(self):
        if self.K < 0:
            raise ConfigError("train.K", "must be >= 0")
        if self.tau < 1:
            raise ConfigError("train.tau", "must be >= 1")
        if self.B < 1:
            raise ConfigError("train.B", "must be >= 1")
        if self.alpha < 0:
            raise ConfigError("train.alpha", "must be non-negative")
        if self.beta <= 0:
            raise ConfigError("train.beta", "must be positive")
        if self.rho <= 0:
            raise ConfigError("train.rho", "must be positive")
        if self.oracle not in ("actor-critic", "quadratic"):
            raise ConfigError("train.oracle", "must be 'actor-critic' or 'quadratic'")


@dataclass(frozen=True)
class QuadraticConfig:
    """Targets ``c_i`` (one row per agent) and curvatures ``q_i``.

    ``None`` means unit basis vectors and unit curvature.
    """

    targets: list | None = None
    curvature: list | float | None = None
    init_std: float = 1.0

    def validate(self):
        if self.curvature is not None:
            qs = [self.curvature] if isinstance(self.curvature, (int, float)) else self.curvature
            if any(float(q) <= 0 for q in qs):
                raise ConfigError("quadratic.curvature", "must be positive")


@dataclass(frozen=True)
class DiagConfig:
    B_eval: int = 20
    L: float = 1.0
    cache_compact_form: bool = False
    record_wall_time: bool = False
    return_window: int = 20

    def validate(self):
        if self.B_eval < 1:
            raise ConfigError("diag.B_eval", "must be >= 1")
        if self.L <= 0:
            raise ConfigError("diag.L", "must be positive")
        if self.return_window < 1:
            raise ConfigError("diag.return_window", "must be >= 1")


_SECTIONS = {
    "critic": CriticConfig,
    "policy": PolicyConfig,
    "sampler": SamplerConfig,
    "train": TrainConfig,
    "quadratic": QuadraticConfig,
    "diag": DiagConfig,
}


def _build_section(name: str, cls, data):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(name, "section must be an object")
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
    try:
        obj = cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from exc
    obj.validate()
    return obj


@dataclass(frozen=True)
class RunConfig:
    env: NavConfig = field(default_factory=NavConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    quadratic: QuadraticConfig = field(default_factory=QuadraticConfig)
    diag: DiagConfig = field(default_factory=DiagConfig)
    graph: dict = field(default_factory=lambda: {"type": "ring", "n": 5})
    seed: int = 0
    out: str | None = None

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(key, "unknown key")
        kwargs: dict[str, Any] = {}
        for name, scls in _SECTIONS.items():
            kwargs[name] = _build_section(name, scls, d.get(name))

        # missing graph keys fall back to the ring-5 default
        graph_cfg = {"type": "ring", "n": 5} | dict(d.get("graph") or {})
        try:
            graph = graph_from_config(graph_cfg)
        except (TopologyError, TypeError, ValueError) as exc:
            raise ConfigError("graph", str(exc)) from exc
        kwargs["graph"] = graph_cfg

        env_cfg = dict(d.get("env") or {})
        env_cfg.setdefault("n_agents", graph.n)
        try:
            env = NavConfig.from_dict(env_cfg)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0]), "unknown key") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError("env", str(exc)) from exc
        if env.n_agents != graph.n:
            raise ConfigError("env.n_agents", f"is {env.n_agents} but the graph has {graph.n} nodes")
        kwargs["env"] = env

        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed", "must be a non-negative integer")
        kwargs["seed"] = seed
        kwargs["out"] = d.get("out")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {name: asdict(getattr(self, name)) for name in _SECTIONS}
        out["env"] = self.env.to_dict()
        out["graph"] = dict(self.graph)
        out["seed"] = self.seed
        out["out"] = self.out
        return out

    @property
    def graph_obj(self):
        return graph_from_config(self.graph)

    @property
    def train_seed(self) -> int:
        return self.seed if self.train.seed is None else self.train.seed

    @property
    def sampler_seed(self) -> int:
        return self.seed if self.sampler.seed is None else self.sampler.seed


def parse_override(text: str) -> tuple[list[str], Any]:
    """Split ``a.b=value``; the value is parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(text, "empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(d: dict, overrides) -> dict:
    """Return a copy of the raw config dict with ``key=value`` overrides applied."""
    out = json.loads(json.dumps(d or {}))
    for text in overrides or ():
        path, value = parse_override(text)
        node = out
        for part in path[:-1]:
            nxt = node.get(part)
            if nxt is None:
                nxt = node[part] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(".".join(path), "cannot descend into a non-object")
            node = nxt
        node[path[-1]] = value
    return out
