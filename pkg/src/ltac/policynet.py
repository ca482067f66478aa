"""Factorised joint softmax policy over all agents.

Every agent's sub-policy is a small MLP from the global state to logits
over its own actions, and the joint policy is the product of the
sub-policies.  All blocks live in one flat parameter vector laid out by
agent, then layer, then (weight row-major, bias); the ADMM arithmetic
works directly on that vector.

Blocks with identical shapes are evaluated together through strided
views of the flat vector, so a forward pass for five agents costs one
batched matmul per layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import as_strided

__all__ = [
    "PolicySpec",
    "PolicyParams",
    "init_policy",
    "action_distribution",
    "log_prob",
    "sample_joint",
    "actions_from_uniforms",
    "score",
    "weighted_score",
]


@dataclass(frozen=True)
class PolicySpec:
    n_agents: int
    state_dim: int
    hidden: tuple[int, ...]
    action_counts: tuple[int, ...]

    def __post_init__(self):
        if len(self.action_counts) != self.n_agents:
            raise ValueError("need one action count per agent")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be >= 1")
        if any(a < 1 for a in self.action_counts):
            raise ValueError("action counts must be >= 1")

    def layer_shapes(self, agent: int) -> list[tuple[int, int]]:
        sizes = [self.state_dim, *self.hidden, self.action_counts[agent]]
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]

    def block_size(self, agent: int) -> int:
        return sum(o * i + o for o, i in self.layer_shapes(agent))

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        out, pos = [], 0
        for j in range(self.n_agents):
            out.append(pos)
            pos += self.block_size(j)
        return tuple(out)

    @property
    def dim(self) -> int:
        return self.offsets[-1] + self.block_size(self.n_agents - 1)

    @cached_property
    def groups(self) -> tuple[tuple[int, ...], ...]:
        """Agents evaluated together: all of them if shapes agree, else one each."""
        if len(set(self.action_counts)) == 1:
            return (tuple(range(self.n_agents)),)
        return tuple((j,) for j in range(self.n_agents))

    def to_dict(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "state_dim": self.state_dim,
            "hidden": list(self.hidden),
            "action_counts": list(self.action_counts),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicySpec":
        return cls(int(d["n_agents"]), int(d["state_dim"]), tuple(d["hidden"]), tuple(d["action_counts"]))


def _group_views(vec: np.ndarray, spec: PolicySpec, group: tuple[int, ...]):
    """Per-layer ``(W, b)`` views with a leading agent axis over ``group``."""
    first = group[0]
    stride = spec.block_size(first) * vec.itemsize
    g = len(group)
    item = vec.itemsize
    pos = spec.offsets[first]
    views = []
    for out_dim, in_dim in spec.layer_shapes(first):
        W = as_strided(vec[pos:], shape=(g, out_dim, in_dim), strides=(stride, in_dim * item, item))
        pos += out_dim * in_dim
        b = as_strided(vec[pos:], shape=(g, out_dim), strides=(stride, item))
        pos += out_dim
        views.append((W, b))
    return views


@dataclass(frozen=True)
class PolicyParams:
    """A full copy of the joint policy parameter as one flat vector."""

    spec: PolicySpec
    flat: np.ndarray = field(repr=False)

    def __post_init__(self):
        flat = np.ascontiguousarray(self.flat, dtype=float)
        if flat.shape != (self.spec.dim,):
            raise ValueError(f"flat vector has shape {flat.shape}, expected ({self.spec.dim},)")
        object.__setattr__(self, "flat", flat)

    @cached_property
    def views(self):
        return [_group_views(self.flat, self.spec, g) for g in self.spec.groups]

    def block(self, agent: int) -> np.ndarray:
        start = self.spec.offsets[agent]
        return self.flat[start : start + self.spec.block_size(agent)]

    def with_flat(self, vec: np.ndarray) -> "PolicyParams":
        return PolicyParams(self.spec, vec)

    @property
    def dim(self) -> int:
        return self.spec.dim


def init_policy(seed, n_agents: int, state_dim: int, action_counts, hidden=64, std: float = 0.1) -> PolicyParams:
    """Weights drawn from N(0, std^2), biases zero.

    ``hidden`` is either an int (two hidden layers of that width) or an
    explicit sequence of widths; an empty sequence gives linear blocks.
    """
    if isinstance(hidden, (int, np.integer)):
        if hidden < 1:
            raise ValueError("hidden width must be >= 1")
        hidden = (int(hidden), int(hidden))
    spec = PolicySpec(int(n_agents), int(state_dim), tuple(int(h) for h in hidden), tuple(int(a) for a in action_counts))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    flat = np.zeros(spec.dim)
    params = PolicyParams(spec, flat)
    for gviews in params.views:
        for W, _ in gviews:
            W[...] = std * rng.standard_normal(W.shape)
    return PolicyParams(spec, flat)


def _forward(params: PolicyParams, S: np.ndarray):
    """Forward pass per group; returns ``[(inputs, pre-activations, probs)]``."""
    out = []
    for gviews in params.views:
        x = S[None, :, :]
        xs, hs = [], []
        for ell, (W, b) in enumerate(gviews):
            xs.append(x)
            h = np.matmul(x, W.transpose(0, 2, 1)) + b[:, None, :]
            hs.append(h)
            if ell < len(gviews) - 1:
                x = np.maximum(h, 0.0)
        logits = hs[-1]
        z = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=-1, keepdims=True)
        out.append((xs, hs, probs))
    return out


def _as_batch(params: PolicyParams, s) -> np.ndarray:
    S = np.atleast_2d(np.asarray(s, dtype=float))
    if S.shape[-1] != params.spec.state_dim:
        raise ValueError(f"state has dimension {S.shape[-1]}, policy expects {params.spec.state_dim}")
    return S


def action_distribution(params: PolicyParams, s) -> list[np.ndarray]:
    """Per-agent action probabilities at a single state."""
    S = _as_batch(params, s)
    res: list[np.ndarray] = [None] * params.spec.n_agents  # type: ignore[list-item]
    for group, (_, _, probs) in zip(params.spec.groups, _forward(params, S)):
        for k, j in enumerate(group):
            res[j] = probs[k, 0]
    return res


def log_prob(params: PolicyParams, s, a) -> float:
    """``log pi(a|s) = sum_j log pi^j(a^j|s)``."""
    dists = action_distribution(params, s)
    return float(sum(np.log(p[int(aj)]) for p, aj in zip(dists, a)))


def sample_joint(params: PolicyParams, s, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per agent, by inverse CDF on ``rng.random(n_agents)``."""
    return actions_from_uniforms(params, s, rng.random(params.spec.n_agents))


def actions_from_uniforms(params: PolicyParams, s, u) -> np.ndarray:
    S = _as_batch(params, s)
    actions = np.empty(params.spec.n_agents, dtype=int)
    for group, (_, _, probs) in zip(params.spec.groups, _forward(params, S)):
        p = probs[:, 0, :]
        cdf = np.cumsum(p, axis=-1)
        idx = np.array(group)
        picks = (cdf < u[idx, None]).sum(axis=-1)
        actions[idx] = np.minimum(picks, p.shape[-1] - 1)
    return actions


def weighted_score(params: PolicyParams, S, A, weights, clip: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Return ``sum_q w_q * psi(A[q] | S[q])`` and the per-sample norms ``||psi_q||``.

    With ``clip`` set, each per-sample score is rescaled to norm at most
    ``clip`` before weighting.
    """
    S = _as_batch(params, S)
    A = np.atleast_2d(np.asarray(A, dtype=int))
    w = np.asarray(weights, dtype=float)
    n = S.shape[0]
    spec = params.spec
    caches = _forward(params, S)

    # per-group backward with unit sample weights; weighting is applied last
    seeds = []
    sq_norm = np.zeros(n)
    for group, (xs, hs, probs), gviews in zip(spec.groups, caches, params.views):
        idx = np.array(group)
        onehot = np.zeros_like(probs)
        acts = A[:, idx].T  # (g, n)
        np.put_along_axis(onehot, acts[:, :, None], 1.0, axis=-1)
        dh = onehot - probs
        per_layer = []
        for ell in range(len(gviews) - 1, -1, -1):
            x = xs[ell]
            xb = np.broadcast_to(x, (dh.shape[0],) + x.shape[1:])
            per_layer.append((ell, dh, xb))
            sq_norm += ((dh * dh).sum(-1) * ((xb * xb).sum(-1) + 1.0)).sum(0)
            if ell:
                dx = np.matmul(dh, gviews[ell][0])
                dh = dx * (hs[ell - 1] > 0.0)
        seeds.append(per_layer)

    norms = np.sqrt(sq_norm)
    coef = w.copy()
    if clip is not None:
        coef = coef * np.minimum(1.0, clip / np.maximum(norms, 1e-300))

    grad = np.zeros(spec.dim)
    for per_layer, group in zip(seeds, spec.groups):
        gviews = _group_views(grad, spec, group)
        for ell, dh, xb in per_layer:
            cdh = dh * coef[None, :, None]
            gW, gb = gviews[ell]
            gW[...] = np.matmul(cdh.transpose(0, 2, 1), xb)
            gb[...] = cdh.sum(axis=1)
    return grad, norms


def score(params: PolicyParams, s, a) -> np.ndarray:
    """``grad_omega log pi(a|s)`` as a flat vector."""
    S = _as_batch(params, s)
    grad, _ = weighted_score(params, S, np.atleast_2d(a), [1.0])
    return grad
