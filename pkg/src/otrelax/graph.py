"""Undirected graphs, sparsity-pattern projections and chordal structure.

Vertices are 0-based internally. The JSON form uses 1-based indices.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Graph:
    """Undirected, loop-free graph on ``n`` vertices.

    Edges are stored canonically as sorted ``(i, j)`` tuples with ``i < j``.
    """

    n: int
    edges: tuple[tuple[int, int], ...] = ()
    _adj: tuple[frozenset[int], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("graph needs at least one vertex")
        canon = set()
        for e in self.edges:
            i, j = int(e[0]), int(e[1])
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge {e} out of range for n={self.n}")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", tuple(sorted(canon)))
        adj = [set() for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        object.__setattr__(self, "_adj", tuple(frozenset(a) for a in adj))

    # constructors

    @classmethod
    def path(cls, n: int) -> "Graph":
        return cls(n, tuple((i, i + 1) for i in range(n - 1)))

    @classmethod
    def complete(cls, n: int) -> "Graph":
        return cls(n, tuple((i, j) for i in range(n) for j in range(i + 1, n)))

    @classmethod
    def cycle(cls, n: int) -> "Graph":
        return cls(n, tuple((i, (i + 1) % n) for i in range(n)))

    @classmethod
    def empty(cls, n: int) -> "Graph":
        return cls(n, ())

    # queries

    def neighbors(self, v: int) -> frozenset[int]:
        return self._adj[v]

    def has_edge(self, i: int, j: int) -> bool:
        return j in self._adj[i]

    def degree(self, v: int) -> int:
        return len(self._adj[v])

    @property
    def is_complete(self) -> bool:
        return len(self.edges) == self.n * (self.n - 1) // 2

    def distances_from(self, source: int) -> np.ndarray:
        """BFS hop distances; unreachable vertices get ``-1``."""
        dist = np.full(self.n, -1, dtype=int)
        dist[source] = 0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for w in self._adj[u]:
                if dist[w] < 0:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return dist

    def connected_components(self) -> list[list[int]]:
        seen = np.zeros(self.n, dtype=bool)
        comps = []
        for v in range(self.n):
            if seen[v]:
                continue
            d = self.distances_from(v)
            comp = [int(u) for u in np.flatnonzero(d >= 0)]
            seen[comp] = True
            comps.append(comp)
        return comps

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            a[i, j] = a[j, i] = True
        return a

    def union(self, extra: Iterable[tuple[int, int]]) -> "Graph":
        return Graph(self.n, self.edges + tuple(extra))

    # serialization

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [[i + 1, j + 1] for i, j in self.edges]}

    @classmethod
    def from_dict(cls, data: dict) -> "Graph":
        return cls(int(data["n"]), tuple((int(i) - 1, int(j) - 1) for i, j in data["edges"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Graph":
        return cls.from_dict(json.loads(text))


def graph_power(g: Graph, h: int) -> Graph:
    """Graph joining every pair of vertices within hop distance ``h`` of each other."""
    if h < 0:
        raise ValueError("power must be nonnegative")
    if h == 0:
        return Graph.empty(g.n)
    if h == 1:
        return g
    edges = []
    for i in range(g.n):
        d = g.distances_from(i)
        for j in range(i + 1, g.n):
            if 0 < d[j] <= h:
                edges.append((i, j))
    return Graph(g.n, tuple(edges))


def _check_square(a: np.ndarray, n: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape != (n, n):
        raise ValueError(f"matrix of shape {a.shape} does not match graph on {n} vertices")
    return a


def project_pattern(a: np.ndarray, g: Graph, mode: str = "onto") -> np.ndarray:
    """Project a symmetric matrix onto the pattern of ``g`` or its complement.

    ``mode="onto"`` keeps the diagonal and the entries on edges of ``g``;
    ``mode="complement"`` keeps only the off-diagonal entries that are
    not edges. The two projections sum to ``a``.
    """
    a = _check_square(a, g.n)
    mask = g.adjacency() | np.eye(g.n, dtype=bool)
    if mode == "onto":
        return np.where(mask, a, 0.0)
    if mode == "complement":
        return np.where(mask, 0.0, a)
    raise ValueError(f"unknown projection mode {mode!r}")


def in_pattern(a: np.ndarray, g: Graph, atol: float = 0.0) -> bool:
    """True when every off-pattern entry of ``a`` is within ``atol`` of zero."""
    return bool(np.all(np.abs(project_pattern(a, g, "complement")) <= atol))


# chordality


def maximum_cardinality_search(g: Graph) -> list[int]:
    """Visit order of maximum-cardinality search (ties broken by lowest index).

    The reverse of the visit order is a perfect elimination ordering
    exactly when ``g`` is chordal.
    """
    weight = np.zeros(g.n, dtype=int)
    visited = np.zeros(g.n, dtype=bool)
    order = []
    for _ in range(g.n):
        cand = np.where(visited, -1, weight)
        v = int(np.argmax(cand))
        order.append(v)
        visited[v] = True
        for w in g.neighbors(v):
            if not visited[w]:
                weight[w] += 1
    return order


def is_perfect_elimination_ordering(g: Graph, order: Sequence[int]) -> bool:
    pos = {v: k for k, v in enumerate(order)}
    for v in order:
        later = [w for w in g.neighbors(v) if pos[w] > pos[v]]
        if not later:
            continue
        u = min(later, key=pos.__getitem__)
        for w in later:
            if w != u and not g.has_edge(u, w):
                return False
    return True


def is_chordal(g: Graph) -> bool:
    return is_perfect_elimination_ordering(g, maximum_cardinality_search(g)[::-1])


def chordal_completion(g: Graph) -> tuple[Graph, list[int]]:
    """Minimum-degree elimination fill-in.

    Returns the completed graph and its elimination ordering, which is a
    perfect elimination ordering of the completed graph.
    """
    adj = [set(g.neighbors(v)) for v in range(g.n)]
    alive = set(range(g.n))
    fill = []
    order = []
    while alive:
        v = min(alive, key=lambda u: (len(adj[u]), u))
        nbrs = sorted(adj[v])
        for a_idx, a in enumerate(nbrs):
            for b in nbrs[a_idx + 1:]:
                if b not in adj[a]:
                    adj[a].add(b)
                    adj[b].add(a)
                    fill.append((a, b))
        for w in nbrs:
            adj[w].discard(v)
        alive.remove(v)
        order.append(v)
    return g.union(fill), order


def _cliques_from_peo(g: Graph, order: Sequence[int]) -> list[tuple[int, ...]]:
    pos = {v: k for k, v in enumerate(order)}
    cands = []
    for v in order:
        c = frozenset([v] + [w for w in g.neighbors(v) if pos[w] > pos[v]])
        cands.append(c)
    cands.sort(key=len, reverse=True)
    maximal: list[frozenset] = []
    for c in cands:
        if not any(c <= m for m in maximal):
            maximal.append(c)
    cliques = sorted(tuple(sorted(c)) for c in maximal)
    return cliques


def maximal_cliques(g: Graph) -> tuple[bool, list[tuple[int, ...]]]:
    """Chordality flag and the maximal cliques of ``g``.

    For a non-chordal graph the cliques returned are those of its
    minimum-degree chordal completion.
    """
    peo = maximum_cardinality_search(g)[::-1]
    if is_perfect_elimination_ordering(g, peo):
        return True, _cliques_from_peo(g, peo)
    filled, order = chordal_completion(g)
    return False, _cliques_from_peo(filled, order)


def clique_tree(cliques: Sequence[Sequence[int]]) -> list[tuple[int, int]]:
    """Maximum-weight spanning forest of the clique intersection graph.

    Edges index into ``cliques``. For the cliques of a chordal graph the
    result satisfies the running-intersection property.
    """
    sets = [set(c) for c in cliques]
    p = len(sets)
    in_tree = [False] * p
    tree = []
    for root in range(p):
        if in_tree[root]:
            continue
        in_tree[root] = True
        best = {j: (len(sets[root] & sets[j]), root) for j in range(p) if not in_tree[j]}
        while best:
            j = max(best, key=lambda k: (best[k][0], -k))
            w, parent = best.pop(j)
            if w == 0:
                best[j] = (w, parent)
                break
            in_tree[j] = True
            tree.append((parent, j))
            for k in best:
                wk = len(sets[j] & sets[k])
                if wk > best[k][0]:
                    best[k] = (wk, j)
    return tree
