"""Undirected NIDS network topologies.

Nodes are 0-based integer indices. Every builder returns a connected,
simple, undirected :class:`Graph`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.sparse.csgraph import connected_components


class InvalidSizeError(ValueError):
    """Raised when a builder is asked for an impossible graph."""


class InvalidNodeError(ValueError):
    """Raised when a node id is not present in the graph."""


@dataclass(frozen=True)
class Graph:
    """Connected simple undirected graph over nodes ``0..n-1``.

    Attributes:
        n: Node count.
        edges: Sorted tuple of ``(u, v)`` pairs with ``u < v``.
        adjacency: Boolean ``n x n`` matrix.
        degrees: Integer degree vector.
    """

    n: int
    edges: tuple
    adjacency: np.ndarray = field(repr=False, compare=False)
    degrees: np.ndarray = field(repr=False, compare=False)

    def neighbors(self, i: int) -> list[int]:
        """Ascending list of neighbours of ``i``."""
        return np.flatnonzero(self.adjacency[i]).tolist()

    def observed_set(self, i: int) -> list[int]:
        """Neighbours of ``i`` plus ``i`` itself, ascending."""
        row = self.adjacency[i].copy()
        row[i] = True
        return np.flatnonzero(row).tolist()

    @property
    def max_degree(self) -> int:
        return int(self.degrees.max()) if self.n else 0

    def to_edge_list(self) -> str:
        """Edge list text, one ``"u v"`` pair per line."""
        return "".join(f"{u} {v}\n" for u, v in self.edges)


@dataclass(frozen=True)
class DisconnectionReport:
    """Returned by :func:`remove_node` when the remainder falls apart.

    Attributes:
        removed: The node that was removed (index in the original graph).
        components: Connected components of the remainder, as lists of
            indices in the *original* graph's numbering.
    """

    removed: int
    components: tuple


def _is_connected(adj: np.ndarray) -> bool:
    if adj.shape[0] <= 1:
        return True
    count, _ = connected_components(adj, directed=False)
    return count == 1


def from_edges(n: int, edges: Iterable[tuple[int, int]]) -> Graph:
    """Build a graph from an edge iterable and validate it.

    Raises:
        InvalidSizeError: On self-loops, duplicate edges, out-of-range
            endpoints, or a disconnected result.
    """
    if n < 1:
        raise InvalidSizeError(f"graph needs at least one node, got n={n}")
    adj = np.zeros((n, n), dtype=bool)
    norm = set()
    for u, v in edges:
        u, v = int(u), int(v)
        if not (0 <= u < n and 0 <= v < n):
            raise InvalidSizeError(f"edge ({u}, {v}) out of range for n={n}")
        if u == v:
            raise InvalidSizeError(f"self-loop on node {u}")
        key = (min(u, v), max(u, v))
        if key in norm:
            raise InvalidSizeError(f"duplicate edge {key}")
        norm.add(key)
        adj[u, v] = adj[v, u] = True
    if not _is_connected(adj):
        raise InvalidSizeError("graph is not connected")
    adj.setflags(write=False)
    degrees = adj.sum(axis=1).astype(int)
    degrees.setflags(write=False)
    return Graph(n=n, edges=tuple(sorted(norm)), adjacency=adj, degrees=degrees)


def build_ring(n: int) -> Graph:
    """Cycle graph on ``n >= 3`` nodes."""
    if n < 3:
        raise InvalidSizeError(f"ring needs n >= 3, got {n}")
    return from_edges(n, ((i, (i + 1) % n) for i in range(n)))


def build_torus(rows: int, cols: int) -> Graph:
    """2-D torus; node ``(r, c)`` has index ``r * cols + c``."""
    if rows < 3 or cols < 3:
        raise InvalidSizeError(f"torus needs both dimensions >= 3, got {rows}x{cols}")
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            edges.append((i, r * cols + (c + 1) % cols))
            edges.append((i, ((r + 1) % rows) * cols + c))
    return from_edges(rows * cols, edges)


def build_petersen() -> Graph:
    """Petersen graph: outer 5-cycle 0-4, inner pentagram 5-9, spokes."""
    outer = [(i, (i + 1) % 5) for i in range(5)]
    inner = [(5 + i, 5 + (i + 2) % 5) for i in range(5)]
    spokes = [(i, i + 5) for i in range(5)]
    return from_edges(10, outer + inner + spokes)


def is_biconnected(g: Graph) -> bool:
    """True if removing any single node leaves the graph connected."""
    if g.n < 3:
        return False
    for v in range(g.n):
        keep = np.arange(g.n) != v
        if not _is_connected(g.adjacency[np.ix_(keep, keep)]):
            return False
    return True


def build_random(n: int, m: int, seed: int, biconnected: bool = False,
                 max_tries: int = 100_000) -> Graph:
    """Uniform random connected simple graph with ``n`` nodes, ``m`` edges.

    Draws ``m`` distinct node pairs uniformly and rejects disconnected
    draws.

    Args:
        n: Node count.
        m: Edge count, ``n - 1 <= m <= n (n - 1) / 2``.
        seed: Seed for ``numpy.random.default_rng``.
        biconnected: Also reject draws that a single node removal would
            disconnect. The experiment harness uses this so that removing
            an attacker never aborts a phase.
        max_tries: Rejection budget.
    """
    if n < 2 or m < n - 1 or m > n * (n - 1) // 2:
        raise InvalidSizeError(f"no connected simple graph with n={n}, m={m}")
    if biconnected and (n < 3 or m < n):
        raise InvalidSizeError(f"no biconnected simple graph with n={n}, m={m}")
    pairs = np.array(list(itertools.combinations(range(n), 2)))
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        pick = rng.choice(len(pairs), size=m, replace=False)
        adj = np.zeros((n, n), dtype=bool)
        adj[pairs[pick, 0], pairs[pick, 1]] = True
        adj |= adj.T
        if not _is_connected(adj):
            continue
        g = from_edges(n, map(tuple, pairs[np.sort(pick)]))
        if biconnected and not is_biconnected(g):
            continue
        return g
    raise InvalidSizeError(f"rejection sampling failed after {max_tries} draws")


def remove_node(g: Graph, v: int) -> Graph | DisconnectionReport:
    """Drop ``v`` and its edges; relabel survivors ``0..n-2`` in order.

    Returns:
        The reduced graph, or a :class:`DisconnectionReport` if the
        remainder is not connected.
    """
    if not (0 <= v < g.n):
        raise InvalidNodeError(f"node {v} not in graph with n={g.n}")
    keep = np.flatnonzero(np.arange(g.n) != v)
    sub = g.adjacency[np.ix_(keep, keep)]
    count, labels = connected_components(sub, directed=False)
    if count > 1:
        comps = tuple(tuple(keep[labels == c].tolist()) for c in range(count))
        return DisconnectionReport(removed=v, components=comps)
    rows, cols = np.nonzero(np.triu(sub))
    return from_edges(len(keep), zip(rows.tolist(), cols.tolist()))


def build_topology(name: str, size: int | None = None, seed: int = 0,
                   biconnected: bool = False) -> Graph:
    """Build a named topology.

    Args:
        name: ``ring``, ``torus``, ``petersen`` or ``random``.
        size: Node count. Torus sizes must be perfect squares. Random
            graphs use ``size`` nodes and ``1.5 * size`` edges, which
            gives the Petersen counts at the default size 10.
        seed: Random-graph seed.
        biconnected: Forwarded to :func:`build_random`.
    """
    if name == "ring":
        return build_ring(9 if size is None else size)
    if name == "torus":
        size = 9 if size is None else size
        side = int(round(size ** 0.5))
        if side * side != size:
            raise InvalidSizeError(f"torus size must be a perfect square, got {size}")
        return build_torus(side, side)
    if name == "petersen":
        if size not in (None, 10):
            raise InvalidSizeError("petersen graph has exactly 10 nodes")
        return build_petersen()
    if name == "random":
        n = 10 if size is None else size
        return build_random(n, (3 * n) // 2, seed, biconnected=biconnected)
    raise InvalidSizeError(f"unknown topology {name!r}")
