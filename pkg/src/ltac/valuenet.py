"""Width-normalised multi-layer value network with a frozen output vector.

    x^0 = s,   x^l = rho(theta^l x^{l-1}) / sqrt(m),   V(s) = b . x^L / sqrt(m)

Only the ``theta`` layers are trained; ``b`` stays at its initial draw.
Gradients are exact reverse-mode derivatives written out by hand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ValueNetParams",
    "ProjectionBall",
    "init_valuenet",
    "value",
    "value_batch",
    "value_grad",
    "weighted_value_grad",
    "project",
]

_ACTIVATIONS = ("tanh", "relu")


def _act(name: str, h: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(h)
    return np.maximum(h, 0.0)


def _act_deriv(name: str, h: np.ndarray, out: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - out * out
    # subgradient 0 at the kink
    return (h > 0.0).astype(h.dtype)


@dataclass
class ValueNetParams:
    """Critic weights ``theta^1..theta^L`` plus the frozen output vector ``b``."""

    layers: list[np.ndarray]
    b: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        m = self.b.shape[0]
        for ell, w in enumerate(self.layers):
            if w.shape[0] != m or (ell > 0 and w.shape[1] != m):
                raise ValueError(f"layer {ell + 1} has shape {w.shape}, width is {m}")

    @property
    def width(self) -> int:
        return self.b.shape[0]

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].shape[1]

    def copy(self) -> "ValueNetParams":
        return ValueNetParams([w.copy() for w in self.layers], self.b.copy(), self.activation)

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.layers])

    def with_flat(self, vec: np.ndarray) -> "ValueNetParams":
        out, start = [], 0
        for w in self.layers:
            out.append(np.asarray(vec[start : start + w.size], dtype=float).reshape(w.shape).copy())
            start += w.size
        if start != len(vec):
            raise ValueError("flat vector length does not match the layer shapes")
        return ValueNetParams(out, self.b, self.activation)

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(w * w) for w in self.layers)))

    def add_scaled(self, grads: list[np.ndarray], scale: float) -> "ValueNetParams":
        return ValueNetParams(
            [w + scale * g for w, g in zip(self.layers, grads)], self.b, self.activation
        )


@dataclass(frozen=True)
class ProjectionBall:
    center: ValueNetParams
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("projection radius must be positive")


def init_valuenet(seed, width: int, depth: int, input_dim: int, activation: str = "tanh") -> ValueNetParams:
    """Draw every entry of ``theta`` and ``b`` from N(0, 1)."""
    if width < 1 or depth < 1 or input_dim < 1:
        raise ValueError("width, depth and input_dim must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = [rng.standard_normal((width, input_dim))]
    layers += [rng.standard_normal((width, width)) for _ in range(depth - 1)]
    b = rng.standard_normal(width)
    return ValueNetParams(layers, b, activation)


def _forward(params: ValueNetParams, X: np.ndarray):
    inv = 1.0 / np.sqrt(params.width)
    xs, hs, acts = [X], [], []
    x = X
    for w in params.layers:
        h = x @ w.T
        a = _act(params.activation, h)
        x = inv * a
        hs.append(h)
        acts.append(a)
        xs.append(x)
    v = inv * (x @ params.b)
    return v, xs, hs, acts


def _check_input(params: ValueNetParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != params.input_dim:
        raise ValueError(f"state has dimension {X.shape[-1]}, critic expects {params.input_dim}")
    return X


def value(params: ValueNetParams, s) -> float:
    s = _check_input(params, s)
    if s.ndim != 1:
        raise ValueError("value() takes a single state vector")
    return float(_forward(params, s[None, :])[0][0])


def value_batch(params: ValueNetParams, S) -> np.ndarray:
    S = _check_input(params, np.atleast_2d(S))
    return _forward(params, S)[0]


def weighted_value_grad(params: ValueNetParams, S, weights) -> tuple[list[np.ndarray], np.ndarray]:
    """Return ``sum_q weights[q] * grad_theta V(S[q])`` and the values ``V(S)``."""
    S = _check_input(params, np.atleast_2d(S))
    w = np.asarray(weights, dtype=float)
    inv = 1.0 / np.sqrt(params.width)
    v, xs, hs, acts = _forward(params, S)
    grads: list[np.ndarray] = [None] * params.depth  # type: ignore[list-item]
    dx = inv * np.outer(w, params.b)
    for ell in range(params.depth - 1, -1, -1):
        dh = inv * dx * _act_deriv(params.activation, hs[ell], acts[ell])
        grads[ell] = dh.T @ xs[ell]
        if ell:
            dx = dh @ params.layers[ell]
    return grads, v


def value_grad(params: ValueNetParams, s) -> tuple[list[np.ndarray], float]:
    s = _check_input(params, s)
    grads, v = weighted_value_grad(params, s[None, :], [1.0])
    return grads, float(v[0])


def _distance(a: ValueNetParams, b: ValueNetParams) -> float:
    return float(np.sqrt(sum(np.sum((x - y) ** 2) for x, y in zip(a.layers, b.layers))))


def project(params: ValueNetParams, ball: ProjectionBall) -> ValueNetParams:
    """Euclidean projection onto the ball, using the concatenated Frobenius norm."""
    if [w.shape for w in params.layers] != [w.shape for w in ball.center.layers]:
        raise ValueError("parameter shapes do not match the ball center")
    dist = _distance(params, ball.center)
    if dist <= ball.radius:
        return params
    scale = ball.radius / dist
    layers = [c + scale * (w - c) for w, c in zip(params.layers, ball.center.layers)]
    return ValueNetParams(layers, params.b, params.activation)
