"""Convergence metrics, step-size bounds, spectral blocks and the compact-form verifier.

Parameter collections are handled as dense arrays: ``Omega`` is ``(N, d)``
with one row per agent and ``Z`` is ``(M, d)`` with one row per directed
edge slot in the layout of ``Graph.directed_edges``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .policynet import PolicyParams, weighted_score
from .sampler import Batch
from .topology import Graph, build_structures, lambda_bounds
from .valuenet import ValueNetParams, value_batch

__all__ = [
    "RoundMetrics",
    "DkTerms",
    "StepsizeReport",
    "CompactTrace",
    "MissingCacheError",
    "SingularBlockError",
    "consensus_error",
    "averaged_gradient_term",
    "dk_surrogate",
    "critic_loss",
    "objective_gradient_estimate",
    "mean_preservation_residual",
    "block_matrix",
    "vblock",
    "vhat_inv_norm",
    "delta_factor",
    "beta_window",
    "stepsize_bounds",
    "compact_form_check",
]


class MissingCacheError(RuntimeError):
    pass


class SingularBlockError(ArithmeticError):
    def __init__(self, eigenvalue: float):
        self.eigenvalue = eigenvalue
        super().__init__(f"V block is singular for eigenvalue {eigenvalue!r} of Ã - D")


@dataclass
class RoundMetrics:
    round: int
    comm_rounds: int
    return_mean: float
    consensus_error: float
    critic_loss: float
    dk_surrogate: float
    grad_norm_est: float
    wall_time_s: float
    averaged_term: float = 0.0
    round_return: float = 0.0
    score_norm_max: float = 0.0
    mean_preservation: float = 0.0
    mean_recursion: float = 0.0

    CSV_COLUMNS = (
        "round", "comm_rounds", "return_mean", "consensus_error",
        "critic_loss", "dk_surrogate", "grad_norm_est", "wall_time_s",
    )

    def to_dict(self) -> dict:
        return asdict(self)


def _rows(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[None, :] if X.ndim == 1 else X


def consensus_error(Omega) -> float:
    """``sum_i ||omega_i - mean(omega)||^2``."""
    W = _rows(Omega)
    dev = W - W.mean(axis=0)
    return float((dev * dev).sum())


def averaged_gradient_term(g_trace) -> float:
    """``(1/tau) sum_t ||(1/N) sum_i g_{i,t}||^2`` for ``g_trace`` of shape ``(tau, N, d)``."""
    G = np.asarray(g_trace, dtype=float)
    if G.ndim != 3:
        raise ValueError("g_trace must have shape (tau, N, d)")
    avg = G.mean(axis=1)
    return float((avg * avg).sum(axis=1).mean())


@dataclass(frozen=True)
class DkTerms:
    total: float
    averaged_term: float
    grad_norm_estimate: float
    B_eval: int | None = None
    label: str = "estimate"


def dk_surrogate(g_trace, grad_norm_est: float, B_eval: int | None = None, exact: bool = False) -> DkTerms:
    """The round's D_k value: estimated ``||grad J(mean omega)||^2`` plus the exact averaged term."""
    avg = averaged_gradient_term(g_trace)
    return DkTerms(avg + float(grad_norm_est), avg, float(grad_norm_est), B_eval, "exact" if exact else "estimate")


def _agent_deltas(theta: ValueNetParams, batch: Batch, rewards: np.ndarray, gamma: float) -> np.ndarray:
    both = value_batch(theta, np.vstack([batch.states, batch.next_states]))
    n = len(batch)
    return rewards + gamma * both[n:] - both[:n]


def critic_loss(thetas, batch: Batch, gamma: float) -> float:
    """Mean over agents and probe transitions of the squared TD error.

    Agent ``i`` is scored with its own critic and its own reward column.
    """
    if len(batch) == 0:
        raise ValueError("probe batch is empty")
    losses = [np.mean(_agent_deltas(th, batch, batch.all_rewards[:, i], gamma) ** 2) for i, th in enumerate(thetas)]
    return float(np.mean(losses))


def objective_gradient_estimate(policy: PolicyParams, thetas, batch: Batch, gamma: float, clip=None) -> np.ndarray:
    """``(1/N) sum_i (1/B) sum_q delta_{i,q} psi_q`` on a probe batch drawn under ``policy``."""
    n = len(batch)
    weights = np.zeros(n)
    for i, th in enumerate(thetas):
        weights += _agent_deltas(th, batch, batch.all_rewards[:, i], gamma)
    weights /= n * len(thetas)
    g, _ = weighted_score(policy, batch.states, batch.actions, weights, clip)
    return g


def mean_preservation_residual(Z, Omega, rho: float, graph: Graph) -> float:
    """``||1^T A^T Z - rho 1^T D Omega||_inf``."""
    Z = _rows(Z)
    W = _rows(Omega)
    deg = graph.degrees.astype(float)
    return float(np.abs(Z.sum(axis=0) - rho * (deg @ W)).max(initial=0.0))


# spectral blocks ---------------------------------------------------------------


def block_matrix(lam: float, beta: float, rho: float, tau: int) -> np.ndarray:
    """The 3x3 block that the V blocks diagonalize, for one eigenvalue ``lam`` of Ã - D."""
    bt = beta * tau
    return np.array([
        [1.0, bt, 0.0],
        [rho * lam, rho * lam * bt + 0.5, -0.5],
        [0.0, -0.5, 0.5],
    ])


def vblock(lam: float, beta: float, rho: float, tau: int) -> np.ndarray:
    """V block with entries d12, d13, d22, d23 for eigenvalue ``lam < 0`` of Ã - D.

    Inside the admissible beta window the square-root argument is negative,
    so the block is complex.
    """
    bt = beta * tau
    x = beta * lam * rho * tau
    root = np.emath.sqrt(x * (x + 2.0))
    d12 = -bt + root / (lam * rho)
    d13 = -bt - root / (lam * rho)
    d22 = lam * rho * d12 - 1.0
    d23 = lam * rho * d13 - 1.0
    return np.array([[-bt, d12, d13], [1.0, d22, d23], [1.0, 1.0, 1.0]], dtype=complex)


def _nonzero_signless_eigs(graph: Graph, tol: float = 1e-9) -> np.ndarray:
    eigs = np.linalg.eigvalsh(build_structures(graph).signless)
    scale = max(1.0, float(np.abs(eigs).max()))
    return np.sort(eigs[np.abs(eigs) > tol * scale])


def vblocks(graph: Graph, beta: float, rho: float, tau: int):
    """``[(lam, V, V^{-1})]`` for every nonzero eigenvalue of Ã - D."""
    out = []
    for lam in _nonzero_signless_eigs(graph):
        V = vblock(lam, beta, rho, tau)
        if np.linalg.cond(V) > 1e12:
            raise SingularBlockError(float(lam))
        out.append((float(lam), V, np.linalg.inv(V)))
    return out


def vhat_inv_norm(graph: Graph, beta: float, rho: float, tau: int) -> float:
    """Operator norm of the block-diagonal inverse, i.e. the largest block norm.

    The permutation and orthogonal factors do not change the operator
    norm, so only the 3x3 blocks are inverted.
    """
    return max(float(np.linalg.norm(Vi, 2)) for _, _, Vi in vblocks(graph, beta, rho, tau))


def delta_factor(lambda_l: float, rho: float, tau: int, beta: float) -> float:
    return 1.0 - lambda_l * rho * tau * beta / 2.0


def beta_window(lambda_u: float, tau: int, rho: float) -> tuple[float, float]:
    """Half-open interval ``[1/(tau lambda_u rho), 2/(tau lambda_u rho))``."""
    lo = 1.0 / (tau * lambda_u * rho)
    return lo, 2.0 * lo


@dataclass
class StepsizeReport:
    alpha_bars: list[float]
    alpha_bar: float
    beta_window: tuple[float, float]
    beta_in_window: bool
    warning: str | None
    beta0: float
    c2_tilde: float
    c4: float
    delta: float
    L: float
    tau: int
    rho: float
    beta: float
    N: int
    lambda_l: float
    lambda_u: float
    signless_norm: float
    vhat_inv_norm: float | None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta_window"] = list(self.beta_window)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StepsizeReport":
        d = dict(d)
        d["beta_window"] = tuple(d["beta_window"])
        return cls(**d)


def stepsize_bounds(L: float, tau: int, rho: float, beta: float, N: int, graph: Graph) -> StepsizeReport:
    """Evaluate the six step-size bounds and their constants.

    When beta lies outside the admissible window the report is still
    produced, with ``beta_in_window`` false and a warning message.  The
    V-block norm is then evaluated at the given beta if the blocks are
    invertible, and left as ``None`` otherwise.
    """
    for name, v in (("L", L), ("tau", tau), ("rho", rho), ("beta", beta), ("N", N)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    lam_l, lam_u = lambda_bounds(graph)
    lt_norm = float(np.linalg.norm(build_structures(graph).signless, 2))
    lo, hi = beta_window(lam_u, tau, rho)
    inside = lo <= beta < hi
    warning = None
    if beta < lo:
        warning = f"beta={beta} is below the theoretical window [{lo:.6g}, {hi:.6g})"
    elif beta >= hi:
        warning = f"beta={beta} is at or above the theoretical window [{lo:.6g}, {hi:.6g})"

    notes = ["||V^-1|| is the largest 3x3 block norm; permutation and orthogonal factors are norm preserving"]
    try:
        vnorm = vhat_inv_norm(graph, beta, rho, tau)
    except SingularBlockError as exc:
        vnorm = None
        notes.append(str(exc))

    beta0 = 72.0 * beta * tau**2 / (lam_l * rho) + 216.0 * tau**3 * beta**2
    c4 = (8.0 * L**2 / N) * (72.0 * beta * tau / (lam_l * rho) + 216.0 * tau**2 * beta**2)
    a1 = min(1.0, 1.0 / (2.0 * L * tau * math.sqrt(3.0)))
    a2 = math.sqrt(N) / (8.0 * L * tau)
    a3 = 3.0 / (4.0 * L * tau)
    if vnorm is not None:
        lt_fac = 1.0 + 2.0 * rho**2 * lt_norm**2
        c2 = 48.0 * lt_fac * L**2 * tau**4 * N * vnorm**2
        a4 = lam_l / (lam_u * math.sqrt(16.0 * lt_fac * tau * L**2 * vnorm**2 * beta0))
        a5 = (lam_l**2 / (16.0 * c4 * lam_u**2 * c2)) ** 0.25
        a6 = (lam_l**2 * beta**2 / (48.0 * c4 * tau * lam_u**2 * L**2 * N * vnorm**2)) ** 0.25
        bars = [a1, a2, a3, a4, a5, a6]
    else:
        c2 = float("nan")
        bars = [a1, a2, a3, float("nan"), float("nan"), float("nan")]
    finite = [b for b in bars if not math.isnan(b)]
    return StepsizeReport(
        alpha_bars=bars, alpha_bar=min(finite), beta_window=(lo, hi), beta_in_window=inside,
        warning=warning, beta0=beta0, c2_tilde=c2, c4=c4, delta=delta_factor(lam_l, rho, tau, beta),
        L=float(L), tau=int(tau), rho=float(rho), beta=float(beta), N=int(N),
        lambda_l=lam_l, lambda_u=lam_u, signless_norm=lt_norm, vhat_inv_norm=vnorm, notes=notes,
    )


# compact form ------------------------------------------------------------------


@dataclass
class CompactTrace:
    """Per-round record needed to re-evaluate the matrix recursion.

    ``omegas[k]`` and ``zs[k]`` are the states at the start of round ``k``
    (length K+1); ``gsums[k]`` is ``sum_t G(Phi_k^t)`` as an ``(N, d)`` array.
    """

    graph: Graph
    alpha: float
    beta: float
    rho: float
    tau: int
    omegas: list = field(default_factory=list)
    zs: list = field(default_factory=list)
    gsums: list = field(default_factory=list)
    enabled: bool = True


def compact_form_check(trace: CompactTrace | None) -> float:
    """Max absolute residual of both matrix recursions over the recorded rounds.

    ``Omega_{k+1} = Omega_k + alpha sum_t G + tau beta (A^T Z_k - rho D Omega_k)``
    ``Z_{k+1} = Z_k/2 - P Z_k/2 + rho P A Omega_{k+1}``
    """
    if trace is None or not trace.enabled:
        raise MissingCacheError("compact-form caching was not enabled for this run")
    K = len(trace.gsums)
    if len(trace.omegas) != K + 1 or len(trace.zs) != K + 1:
        raise MissingCacheError("trace is incomplete")
    st = build_structures(trace.graph)
    A, P, D = st.incidence, st.permutation, st.degree
    worst = 0.0
    for k in range(K):
        W, Z, G = trace.omegas[k], trace.zs[k], trace.gsums[k]
        W_pred = W + trace.alpha * G + trace.tau * trace.beta * (A.T @ Z - trace.rho * (D @ W))
        Z_pred = 0.5 * Z - 0.5 * (P @ Z) + trace.rho * (P @ (A @ trace.omegas[k + 1]))
        worst = max(worst, float(np.abs(W_pred - trace.omegas[k + 1]).max()), float(np.abs(Z_pred - trace.zs[k + 1]).max()))
    return worst
