"""Communication graphs and the matrices of the compact ADMM recursion.

Directed edge slots are grouped by source node: node ``i`` owns the slots
``(i, j)`` for its neighbours ``j`` in increasing order.  The incidence
matrix ``A`` maps a node to each of its slots, and ``P`` swaps slot
``(i, j)`` with ``(j, i)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "TopologyError",
    "Graph",
    "GraphStructures",
    "ring_graph",
    "complete_graph",
    "path_graph",
    "graph_from_config",
    "build_structures",
    "lambda_bounds",
]


class TopologyError(ValueError):
    """Raised for invalid or disconnected communication graphs."""


def _is_connected(n: int, edges: tuple[tuple[int, int], ...]) -> bool:
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == n


@dataclass(frozen=True)
class Graph:
    """Connected undirected graph on nodes ``0..n-1``.

    Edges are stored canonically as sorted ``(i, j)`` pairs with ``i < j``.
    """

    n: int
    edges: tuple[tuple[int, int], ...]

    def __init__(self, n: int, edges) -> None:
        n = int(n)
        if n < 3:
            raise TopologyError(f"graph needs at least 3 nodes, got {n}")
        canon = set()
        for e in edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise TopologyError(f"self-loop at node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise TopologyError(f"edge ({i}, {j}) has a node outside [0, {n})")
            key = (min(i, j), max(i, j))
            if key in canon:
                raise TopologyError(f"duplicate edge {key}")
            canon.add(key)
        ordered = tuple(sorted(canon))
        if not _is_connected(n, ordered):
            raise TopologyError("graph is not connected")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "edges", ordered)

    def neighbors(self, i: int) -> list[int]:
        return self._neighbors[i]

    @cached_property
    def _neighbors(self) -> list[list[int]]:
        nb: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            nb[i].append(j)
            nb[j].append(i)
        return [sorted(v) for v in nb]

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(v) for v in self._neighbors], dtype=int)

    @cached_property
    def directed_edges(self) -> tuple[tuple[int, int], ...]:
        """Directed slots in the fixed layout used by ``A`` and ``P``."""
        return tuple((i, j) for i in range(self.n) for j in self._neighbors[i])

    @cached_property
    def slot_index(self) -> dict[tuple[int, int], int]:
        return {e: s for s, e in enumerate(self.directed_edges)}

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n))
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = 1.0
        return adj

    def laplacian(self) -> np.ndarray:
        return np.diag(self.degrees.astype(float)) - self.adjacency()

    def to_config(self) -> dict:
        return {"type": "edges", "n": self.n, "edges": [list(e) for e in self.edges]}


@dataclass(frozen=True)
class GraphStructures:
    """Matrices of the compact-form recursion for one graph.

    ``incidence`` is ``M x n`` with ``M = sum_i |N_i|``; ``permutation`` is
    ``M x M``; ``signless`` is ``Ã - D`` (the negated Laplacian);
    ``spectrum`` holds the Laplacian eigenvalues in ascending order.
    """

    incidence: np.ndarray
    permutation: np.ndarray
    degree: np.ndarray
    adjacency: np.ndarray
    signless: np.ndarray
    spectrum: np.ndarray = field(repr=False)

    @property
    def laplacian(self) -> np.ndarray:
        return -self.signless


def ring_graph(n: int) -> Graph:
    if n < 3:
        raise TopologyError(f"ring graph needs n >= 3, got {n}")
    return Graph(n, [(i, (i + 1) % n) for i in range(n)])


def complete_graph(n: int) -> Graph:
    return Graph(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def path_graph(n: int) -> Graph:
    return Graph(n, [(i, i + 1) for i in range(n - 1)])


def graph_from_config(cfg: dict) -> Graph:
    """Build a graph from ``{"type": "ring", "n": 5}`` or an explicit edge list."""
    kind = cfg.get("type")
    extra = set(cfg) - {"type", "n", "edges"}
    if extra:
        raise TopologyError(f"unknown graph key(s): {sorted(extra)}")
    if "n" not in cfg:
        raise TopologyError("graph config needs 'n'")
    if kind == "ring":
        return ring_graph(int(cfg["n"]))
    if kind == "complete":
        return complete_graph(int(cfg["n"]))
    if kind == "path":
        return path_graph(int(cfg["n"]))
    if kind == "edges":
        return Graph(int(cfg["n"]), cfg.get("edges", []))
    raise TopologyError(f"unknown graph type {kind!r}")


def build_structures(g: Graph) -> GraphStructures:
    slots = g.directed_edges
    m = len(slots)
    A = np.zeros((m, g.n))
    P = np.zeros((m, m))
    for s, (i, j) in enumerate(slots):
        A[s, i] = 1.0
        P[s, g.slot_index[(j, i)]] = 1.0
    D = np.diag(g.degrees.astype(float))
    adj = g.adjacency()
    signless = adj - D
    spectrum = np.sort(np.linalg.eigvalsh(D - adj))
    return GraphStructures(A, P, D, adj, signless, spectrum)


def lambda_bounds(g: Graph, tol: float = 1e-9) -> tuple[float, float]:
    """Smallest nonzero and largest Laplacian eigenvalue."""
    spec = np.sort(np.linalg.eigvalsh(g.laplacian()))
    scale = max(1.0, float(spec[-1]))
    if spec[1] <= tol * scale:
        raise TopologyError("Laplacian has a repeated zero eigenvalue; graph is disconnected")
    return float(spec[1]), float(spec[-1])
