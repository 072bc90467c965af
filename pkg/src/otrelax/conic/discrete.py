"""Exact and entropic transport between finite measures."""

from __future__ import annotations

from collections import deque

import numpy as np
from scipy.special import logsumexp

MASS_TOL = 1e-12
UNDERFLOW = 1e-300


def _check_marginals(cost, p, q):
    cost = np.asarray(cost, dtype=float)
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if cost.shape != (p.size, q.size):
        raise ValueError(f"cost shape {cost.shape} does not match marginals ({p.size}, {q.size})")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost must be finite")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("marginals must be nonnegative")
    if abs(p.sum() - 1.0) > MASS_TOL or abs(q.sum() - 1.0) > MASS_TOL:
        raise ValueError(f"marginals must sum to 1 (got {p.sum():.15g}, {q.sum():.15g})")
    return cost, p, q


def _initial_basis(cost, p, q):
    """Greedy cheapest-cell basic feasible solution completed to a spanning tree.

    Cells are filled in order of increasing cost (ties by index). Zero-flow
    cells that merge two components of the bipartite row/column graph are
    then added until ``N + M - 1`` cells form a tree.
    """
    n, m = p.size, q.size
    supply, demand = p.copy(), q.copy()
    parent = list(range(n + m))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    flow = {}
    order = np.argsort(cost.ravel(), kind="stable")
    for idx in order:
        i, j = divmod(int(idx), m)
        if supply[i] <= 0.0 or demand[j] <= 0.0:
            continue
        # each allocation exhausts its row or its column, so no cycle forms
        amount = min(supply[i], demand[j])
        flow[(i, j)] = amount
        supply[i] -= amount
        demand[j] -= amount
        parent[find(i)] = find(n + j)
    # zero-flow cells join the remaining components into one tree
    for idx in order:
        if len(flow) == n + m - 1:
            break
        i, j = divmod(int(idx), m)
        ri, rj = find(i), find(n + j)
        if ri != rj:
            flow[(i, j)] = 0.0
            parent[ri] = rj
    return flow


def _potentials(n, m, cost, adj):
    u = np.full(n, np.nan)
    v = np.full(m, np.nan)
    u[0] = 0.0
    queue = deque([("r", 0)])
    while queue:
        side, a = queue.popleft()
        if side == "r":
            for b in adj[("r", a)]:
                if np.isnan(v[b]):
                    v[b] = cost[a, b] - u[a]
                    queue.append(("c", b))
        else:
            for b in adj[("c", a)]:
                if np.isnan(u[b]):
                    u[b] = cost[b, a] - v[a]
                    queue.append(("r", b))
    return u, v


def _component(adj, start):
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        other = "c" if node[0] == "r" else "r"
        for b in adj[node]:
            nxt = (other, b)
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def _tree_path(adj, i, j):
    """Cells on the tree path from row node ``i`` to column node ``j``."""
    start, goal = ("r", i), ("c", j)
    parent = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        side, a = node
        other = "c" if side == "r" else "r"
        for b in adj[node]:
            nxt = (other, b)
            if nxt not in parent:
                parent[nxt] = node
                queue.append(nxt)
    cells = []
    node = goal
    while parent[node] is not None:
        prev = parent[node]
        r = prev[1] if prev[0] == "r" else node[1]
        c = node[1] if node[0] == "c" else prev[1]
        cells.append((r, c))
        node = prev
    return cells[::-1]


def exact_discrete_ot(cost, p, q, max_pivots: int | None = None):
    """Exact optimal transport by the transportation network simplex.

    The entering arc is the lowest-index (row-major) cell with negative
    reduced cost; among tied leaving cells the lowest index leaves. This
    rule cannot cycle and makes the result deterministic.

    Returns
    -------
    value : float
        ``<cost, plan>`` at the optimum.
    plan : ndarray
        Optimal transport plan with row sums ``p`` and column sums ``q``.
    """
    cost, p, q = _check_marginals(cost, p, q)
    n, m = p.size, q.size
    flow = _initial_basis(cost, p, q)
    adj = {("r", i): set() for i in range(n)}
    adj.update({("c", j): set() for j in range(m)})
    for i, j in flow:
        adj[("r", i)].add(j)
        adj[("c", j)].add(i)
    scale = 1.0 + np.abs(cost).max(initial=0.0)
    max_pivots = max_pivots if max_pivots is not None else 50 * (n * m + n + m)

    u, v = _potentials(n, m, cost, adj)
    for _ in range(max_pivots):
        reduced = cost - u[:, None] - v[None, :]
        candidates = np.flatnonzero(reduced.ravel() < -1e-12 * scale)
        if candidates.size == 0:
            break
        ei, ej = divmod(int(candidates[0]), m)
        path = _tree_path(adj, ei, ej)
        # cycle: entering cell (+), then path cells alternate -, +, ...
        minus = path[0::2]
        plus = path[1::2]
        theta = min(flow[c] for c in minus)
        leaving = min(c for c in minus if flow[c] <= theta)
        for c in minus:
            flow[c] -= theta
        for c in plus:
            flow[c] += theta
        del flow[leaving]
        adj[("r", leaving[0])].discard(leaving[1])
        adj[("c", leaving[1])].discard(leaving[0])
        # only the part of the tree now hanging off column ej changes potentials
        r = float(reduced[ei, ej])
        for side, a in _component(adj, ("c", ej)):
            if side == "c":
                v[a] += r
            else:
                u[a] -= r
        flow[(ei, ej)] = theta
        adj[("r", ei)].add(ej)
        adj[("c", ej)].add(ei)
    else:
        raise RuntimeError("network simplex exceeded its pivot budget")

    plan = np.zeros((n, m))
    for (i, j), val in flow.items():
        plan[i, j] = max(val, 0.0)
    if np.abs(plan.sum(axis=1) - p).max() > 1e-9 or np.abs(plan.sum(axis=0) - q).max() > 1e-9:
        raise RuntimeError("network simplex lost feasibility")
    return float(np.sum(cost * plan)), plan


def sinkhorn(cost, p, q, eps_scale: float = 0.01, tol: float = 1e-4, max_iter: int = 100000,
             return_plan: bool = False):
    """Entropic optimal transport value ``<cost, plan_eps>``.

    The regularization is ``eps = eps_scale * mean(cost)``. Iterations stop
    when the row marginal of the plan (the column marginal is matched
    exactly after each sweep) is within ``tol`` in L1. The kernel is used
    directly unless an entry would underflow below 1e-300, in which case
    the scaling vectors are kept in the log domain.

    The final plan is rounded onto the exact transport polytope (scale
    down rows and columns that carry too much mass, then spread the
    deficit as a rank-one correction), so the returned value is the cost
    of a feasible plan and never drops below the exact optimum.
    """
    cost, p, q = _check_marginals(cost, p, q)
    if eps_scale <= 0:
        raise ValueError("eps_scale must be positive")
    mean = float(np.mean(cost))
    eps = eps_scale * (mean if mean > 0 else 1.0)
    rows = p > 0
    cols = q > 0
    c = cost[np.ix_(rows, cols)]
    a, b = p[rows], q[cols]
    shift = c.min(initial=0.0)
    z = -(c - shift) / eps

    if np.exp(z.min(initial=0.0)) >= UNDERFLOW:
        K = np.exp(z)
        u = np.ones(a.size)
        for _ in range(max_iter):
            v = b / (K.T @ u)
            u_new = a / (K @ v)
            err = np.abs(u * (K @ v) - a).sum()
            u = u_new
            if err <= tol:
                break
        v = b / (K.T @ u)
        sub = u[:, None] * K * v[None, :]
    else:
        la, lb = np.log(a), np.log(b)
        f = np.zeros(a.size)
        g = np.zeros(b.size)
        for _ in range(max_iter):
            g = lb - logsumexp(z + f[:, None], axis=0)
            row = np.exp(logsumexp(z + f[:, None] + g[None, :], axis=1))
            if np.abs(row - a).sum() <= tol:
                break
            f = la - logsumexp(z + g[None, :], axis=1)
        sub = np.exp(z + f[:, None] + g[None, :])

    plan = np.zeros_like(cost)
    plan[np.ix_(rows, cols)] = _round_to_marginals(sub, a, b)
    value = float(np.sum(cost * plan))
    return (value, plan) if return_plan else value


def _round_to_marginals(plan, a, b):
    r = plan.sum(axis=1)
    plan = plan * np.minimum(a / np.where(r > 0, r, 1.0), 1.0)[:, None]
    c = plan.sum(axis=0)
    plan = plan * np.minimum(b / np.where(c > 0, c, 1.0), 1.0)[None, :]
    da = a - plan.sum(axis=1)
    db = b - plan.sum(axis=0)
    mass = da.sum()
    if mass > 0:
        plan = plan + np.outer(da, db) / mass
    return plan
