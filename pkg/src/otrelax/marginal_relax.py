"""Discrete measures on product spaces and marginal relaxations of transport.

Coordinates of the source (``x``) and target (``y``) spaces are grouped
into ``K`` clusters. Cluster ``k`` couples the joint states of its
``x``-group and ``y``-group, ``Z_k = X_k x Y_k``, and a
relaxation works with one-cluster couplings ``pi_k`` on ``Z_k`` and
two-cluster couplings ``pi_ij`` on ``Z_i x Z_j`` instead of a coupling
on the full product space.

State indices inside a cluster are row-major over the group's
coordinates, and ``Z_k`` is indexed by ``a = ix * |Y_k| + iy``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conic import ConicProgram, ConicSolution, ProgramBuilder, dual_lower_bound
from .graph import Graph

VARIANTS = ("dnn", "lp", "psd")


@dataclass(frozen=True)
class ClusterSpec:
    """Partition of ``x``- and ``y``-coordinates into ``K`` paired groups.

    Parameters
    ----------
    x_groups, y_groups : sequences of coordinate tuples (0-based)
    x_sizes, y_sizes : number of states of every coordinate
    """

    x_groups: tuple[tuple[int, ...], ...]
    y_groups: tuple[tuple[int, ...], ...]
    x_sizes: tuple[int, ...]
    y_sizes: tuple[int, ...]

    def __post_init__(self):
        xg = tuple(tuple(int(v) for v in g) for g in self.x_groups)
        yg = tuple(tuple(int(v) for v in g) for g in self.y_groups)
        object.__setattr__(self, "x_groups", xg)
        object.__setattr__(self, "y_groups", yg)
        object.__setattr__(self, "x_sizes", tuple(int(s) for s in self.x_sizes))
        object.__setattr__(self, "y_sizes", tuple(int(s) for s in self.y_sizes))
        if len(xg) != len(yg) or not xg:
            raise ValueError("x and y must be split into the same positive number of clusters")
        for groups, sizes, side in ((xg, self.x_sizes, "x"), (yg, self.y_sizes, "y")):
            if any(len(g) == 0 for g in groups):
                raise ValueError(f"empty {side}-cluster")
            flat = sorted(v for g in groups for v in g)
            if flat != list(range(len(sizes))):
                raise ValueError(f"{side}-clusters must be disjoint and cover every coordinate")
            if any(s < 1 for s in sizes):
                raise ValueError("state counts must be positive")

    @classmethod
    def uniform(cls, x_groups, y_groups=None, states: int = 2) -> "ClusterSpec":
        y_groups = x_groups if y_groups is None else y_groups
        nx = sum(len(g) for g in x_groups)
        ny = sum(len(g) for g in y_groups)
        return cls(tuple(x_groups), tuple(y_groups), (states,) * nx, (states,) * ny)

    @property
    def K(self) -> int:
        return len(self.x_groups)

    def x_states(self, k: int) -> int:
        return int(np.prod([self.x_sizes[v] for v in self.x_groups[k]]))

    def y_states(self, k: int) -> int:
        return int(np.prod([self.y_sizes[v] for v in self.y_groups[k]]))

    def z_states(self, k: int) -> int:
        return self.x_states(k) * self.y_states(k)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability table on a finite product space, stored flat (row-major)."""

    axes: tuple[int, ...]
    weights: np.ndarray

    def __post_init__(self):
        axes = tuple(int(a) for a in self.axes)
        w = np.asarray(self.weights, dtype=float).ravel()
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "weights", w)
        if w.size != int(np.prod(axes)):
            raise ValueError("weights do not match the axis sizes")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1 (got {w.sum():.15g})")

    @property
    def table(self) -> np.ndarray:
        return self.weights.reshape(self.axes)

    def to_dict(self) -> dict:
        return {"axes": list(self.axes), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "DiscreteMeasure":
        return cls(tuple(data["axes"]), np.asarray(data["weights"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DiscreteMeasure":
        return cls.from_dict(json.loads(text))


def marginalize(m: DiscreteMeasure, keep: Sequence[int]) -> DiscreteMeasure:
    """Marginal on the axes ``keep``, returned with its axes in the order given."""
    keep = [int(a) for a in keep]
    if not keep:
        raise ValueError("keep must name at least one axis")
    if len(set(keep)) != len(keep) or any(not 0 <= a < len(m.axes) for a in keep):
        raise ValueError("keep must list distinct existing axes")
    drop = tuple(a for a in range(len(m.axes)) if a not in keep)
    t = m.table.sum(axis=drop) if drop else m.table
    remaining = [a for a in range(len(m.axes)) if a in keep]
    t = np.transpose(t, [remaining.index(a) for a in keep])
    t = t / t.sum()
    return DiscreteMeasure(tuple(m.axes[a] for a in keep), t.ravel())


@dataclass
class ClusterMarginals:
    """One- and two-cluster marginals of one side (``x`` or ``y``).

    ``single[k]`` is a vector over the states of group ``k``; ``pair[(i, j)]``
    (``i < j``) a matrix over group ``i`` states by group ``j`` states.
    """

    single: list[np.ndarray]
    pair: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_measure(cls, m: DiscreteMeasure, groups, pairs) -> "ClusterMarginals":
        single = [marginalize(m, g).weights for g in groups]
        pair = {}
        for i, j in pairs:
            i, j = min(i, j), max(i, j)
            t = marginalize(m, tuple(groups[i]) + tuple(groups[j])).weights
            pair[(i, j)] = t.reshape(single[i].size, single[j].size)
        return cls(single, pair)


def _as_marginals(m, groups, sizes, pairs, side) -> ClusterMarginals:
    if isinstance(m, DiscreteMeasure):
        if len(m.axes) != len(sizes) or tuple(m.axes) != tuple(sizes):
            raise ValueError(f"{side}-measure axes do not match the cluster spec")
        return ClusterMarginals.from_measure(m, groups, pairs)
    if not isinstance(m, ClusterMarginals):
        raise TypeError("expected a DiscreteMeasure or ClusterMarginals")
    for k, g in enumerate(groups):
        if m.single[k].size != int(np.prod([sizes[v] for v in g])):
            raise ValueError(f"{side}-marginal of cluster {k} has the wrong size")
    for ij in pairs:
        if tuple(sorted(ij)) not in m.pair:
            raise ValueError(f"missing {side}-pair marginal for clusters {ij}")
    return m


@dataclass(frozen=True)
class MarginalAssembly:
    """A marginal relaxation with addresses of every coupling inside the program.

    ``entry_map["pi_k"][k]`` and ``entry_map["pi_ij"][(i, j)]`` are integer
    arrays of program columns holding ``pi_k`` (length ``|Z_k|``) and
    ``pi_ij`` (shape ``|Z_i| x |Z_j|``).
    """

    program: ConicProgram
    variant: str
    spec: ClusterSpec
    reference_graph: Graph
    entry_map: dict
    pairs: tuple[tuple[int, int], ...]

    def couplings(self, solution: ConicSolution | np.ndarray) -> tuple[list[np.ndarray], dict]:
        """``pi_k`` as ``|X_k| x |Y_k|`` arrays and ``pi_ij`` as ``|Z_i| x |Z_j|`` arrays."""
        x = solution.x if isinstance(solution, ConicSolution) else np.asarray(solution)
        spec = self.spec
        pik = [x[cols].reshape(spec.x_states(k), spec.y_states(k)) for k, cols in enumerate(self.entry_map["pi_k"])]
        pij = {ij: x[cols] for ij, cols in self.entry_map["pi_ij"].items()}
        return pik, pij


def check_costs(spec: ClusterSpec, costs: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Per-cluster cost tables ``c_k`` of shape ``|X_k| x |Y_k|``."""
    if len(costs) != spec.K:
        raise ValueError("one cost table per cluster is required")
    out = []
    for k, c in enumerate(costs):
        c = np.asarray(c, dtype=float)
        if c.shape != (spec.x_states(k), spec.y_states(k)):
            raise ValueError(f"cost table {k} has shape {c.shape}, expected "
                             f"({spec.x_states(k)}, {spec.y_states(k)})")
        if not np.all(np.isfinite(c)):
            raise ValueError("cost tables must be finite")
        out.append(c)
    return out


def separable_costs(spec: ClusterSpec, x_values, y_values, pair_cost=None) -> list[np.ndarray]:
    """Cost tables for ``c(x, y) = sum_k sum_{v in cluster k} pair_cost(x_v, y_w)``.

    Coordinates are matched in group order, so ``x_groups[k][t]`` is
    compared with ``y_groups[k][t]``; ``x_values[v]`` lists the value of
    every state of coordinate ``v``. The default pair cost is the squared
    difference.
    """
    pair_cost = pair_cost or (lambda a, b: (a - b) ** 2)
    tables = []
    for k in range(spec.K):
        gx, gy = spec.x_groups[k], spec.y_groups[k]
        if len(gx) != len(gy):
            raise ValueError("separable costs need equally sized x and y groups")
        xs = np.array(list(itertools.product(*[x_values[v] for v in gx])), dtype=float)
        ys = np.array(list(itertools.product(*[y_values[v] for v in gy])), dtype=float)
        tables.append(sum(pair_cost(xs[:, t][:, None], ys[:, t][None, :]) for t in range(len(gx))))
    return tables


def _pairs(spec: ClusterSpec, ref_graph: Graph, variant: str) -> tuple[tuple[int, int], ...]:
    if variant == "lp":
        return tuple(sorted(ref_graph.edges))
    return tuple((i, j) for i in range(spec.K) for j in range(i + 1, spec.K))


def build_otmar(
    mu,
    nu,
    spec: ClusterSpec,
    ref_graph: Graph,
    variant: str,
    costs: Sequence[np.ndarray],
) -> MarginalAssembly:
    """Marginal relaxation of discrete transport.

    Parameters
    ----------
    mu, nu : DiscreteMeasure or ClusterMarginals
        Source measure on the ``x`` coordinates, target on the ``y`` ones.
        Precomputed cluster marginals avoid forming the full tables.
    spec : ClusterSpec
    ref_graph : Graph
        Graph on the ``K`` clusters whose edges carry two-cluster marginal
        constraints.
    variant : {"dnn", "lp", "psd"}
        ``dnn``: couplings for every cluster pair, nonnegative, and the
        block matrix of couplings positive semidefinite. ``lp``: couplings
        only on the edges, nonnegative, no matrix condition. ``psd``:
        couplings for every pair with the block matrix condition but no
        sign condition on the two-cluster couplings.
    costs : per-cluster tables ``c_k`` of shape ``|X_k| x |Y_k|``

    Notes
    -----
    The block matrix has ``Diag(pi_k)`` on the diagonal and ``pi_ij`` off
    it. For ``dnn`` with ``K <= 2`` its positive semidefiniteness follows
    from nonnegativity and consistency (it equals ``sum P_ab (e_a + e_b)
    (e_a + e_b)^T``), so the PSD block is not materialized there.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    if ref_graph.n != spec.K:
        raise ValueError("reference graph needs one vertex per cluster")
    costs = check_costs(spec, costs)
    pairs = _pairs(spec, ref_graph, variant)
    edges = tuple(sorted(ref_graph.edges))
    mx = _as_marginals(mu, spec.x_groups, spec.x_sizes, edges, "x")
    my = _as_marginals(nu, spec.y_groups, spec.y_sizes, edges, "y")
    K = spec.K
    nz = [spec.z_states(k) for k in range(K)]
    nxs = [spec.x_states(k) for k in range(K)]
    nys = [spec.y_states(k) for k in range(K)]

    b = ProgramBuilder()
    pik_cols: list[np.ndarray] = []
    pij_cols: dict[tuple[int, int], np.ndarray] = {}
    offsets = np.concatenate([[0], np.cumsum(nz)])
    use_matrix = variant == "psd" or (variant == "dnn" and K >= 3)

    if variant == "psd":
        if K == 1:
            # a diagonal block matrix is PSD iff its diagonal is nonnegative
            k0 = b.add_block("pi_0", "nonneg", nz[0])
            pik_cols.append(np.array([b.col(k0, a) for a in range(nz[0])]))
        else:
            km = b.add_block("M", "psd", int(offsets[-1]))
            for k in range(K):
                o = int(offsets[k])
                pik_cols.append(np.array([b.col(km, o + a, o + a) for a in range(nz[k])]))
            for i, j in pairs:
                oi, oj = int(offsets[i]), int(offsets[j])
                pij_cols[(i, j)] = np.array(
                    [[b.col(km, oi + a, oj + c) for c in range(nz[j])] for a in range(nz[i])]
                )
    else:
        for k in range(K):
            kb = b.add_block(f"pi_{k}", "nonneg", nz[k])
            pik_cols.append(np.array([b.col(kb, a) for a in range(nz[k])]))
        for i, j in pairs:
            kb = b.add_block(f"pi_{i}_{j}", "nonneg", nz[i] * nz[j])
            pij_cols[(i, j)] = np.arange(nz[i] * nz[j]).reshape(nz[i], nz[j]) + b.col(kb, 0)

    # objective sum_k pi_k(c_k)
    for k in range(K):
        for a, cval in enumerate(costs[k].ravel()):
            if cval != 0.0:
                b.add_objective(int(pik_cols[k][a]), float(cval))

    # per-cluster marginals
    for k in range(K):
        grid = pik_cols[k].reshape(nxs[k], nys[k])
        for ix in range(nxs[k]):
            b.add_constraint([(int(c), 1.0) for c in grid[ix]], float(mx.single[k][ix]), "marginal-x")
        for iy in range(nys[k]):
            b.add_constraint([(int(c), 1.0) for c in grid[:, iy]], float(my.single[k][iy]), "marginal-y")

    # two-cluster marginals on the edges
    for i, j in edges:
        cols = pij_cols[(i, j)].reshape(nxs[i], nys[i], nxs[j], nys[j])
        for xi in range(nxs[i]):
            for xj in range(nxs[j]):
                coeffs = [(int(c), 1.0) for c in cols[xi, :, xj, :].ravel()]
                b.add_constraint(coeffs, float(mx.pair[(i, j)][xi, xj]), "marginal-x")
        for yi in range(nys[i]):
            for yj in range(nys[j]):
                coeffs = [(int(c), 1.0) for c in cols[:, yi, :, yj].ravel()]
                b.add_constraint(coeffs, float(my.pair[(i, j)][yi, yj]), "marginal-y")

    # consistency of pair couplings with the cluster couplings
    for i, j in pairs:
        cols = pij_cols[(i, j)]
        for a in range(nz[i]):
            b.add_constraint([(int(c), 1.0) for c in cols[a]] + [(int(pik_cols[i][a]), -1.0)], 0.0, "consistency")
        for c_ in range(nz[j]):
            b.add_constraint([(int(c), 1.0) for c in cols[:, c_]] + [(int(pik_cols[j][c_]), -1.0)], 0.0,
                             "consistency")

    if variant == "psd" and K > 1:
        # Diag(pi_k): off-diagonal entries inside diagonal blocks vanish
        for k in range(K):
            o = int(offsets[k])
            for a in range(nz[k]):
                for c_ in range(a + 1, nz[k]):
                    b.add_constraint([(b.col(km, o + a, o + c_), 1.0)], 0.0, "structure")
    elif use_matrix:
        km = b.add_block("M", "psd", int(offsets[-1]))
        for k in range(K):
            o = int(offsets[k])
            for a in range(nz[k]):
                b.add_constraint([(b.col(km, o + a, o + a), 1.0), (int(pik_cols[k][a]), -1.0)], 0.0, "link")
                for c_ in range(a + 1, nz[k]):
                    b.add_constraint([(b.col(km, o + a, o + c_), 1.0)], 0.0, "structure")
        for i, j in pairs:
            oi, oj = int(offsets[i]), int(offsets[j])
            for a in range(nz[i]):
                for c_ in range(nz[j]):
                    b.add_constraint(
                        [(b.col(km, oi + a, oj + c_), 1.0), (int(pij_cols[(i, j)][a, c_]), -1.0)], 0.0, "link"
                    )

    entry_map = {"pi_k": pik_cols, "pi_ij": pij_cols, "offsets": offsets}
    return MarginalAssembly(b.build(), variant, spec, ref_graph, entry_map, pairs)


def block_matrix(spec: ClusterSpec, pik: Sequence[np.ndarray], pij: dict) -> np.ndarray:
    """The block matrix with ``Diag(pi_k)`` on the diagonal and ``pi_ij`` off it.

    Pairs missing from ``pij`` are filled with the product coupling
    ``pi_i pi_j^T``, which satisfies every constraint except the matrix
    condition.
    """
    vecs = [np.asarray(p, dtype=float).ravel() for p in pik]
    sizes = [v.size for v in vecs]
    off = np.concatenate([[0], np.cumsum(sizes)])
    M = np.zeros((off[-1], off[-1]))
    for k, v in enumerate(vecs):
        M[off[k]:off[k + 1], off[k]:off[k + 1]] = np.diag(v)
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            blk = pij.get((i, j))
            blk = np.outer(vecs[i], vecs[j]) if blk is None else np.asarray(blk, dtype=float)
            M[off[i]:off[i + 1], off[j]:off[j + 1]] = blk
            M[off[j]:off[j + 1], off[i]:off[i + 1]] = blk.T
    return M


def variable_count(spec: ClusterSpec, ref_graph: Graph, variant: str) -> int:
    """Number of scalar unknowns in the couplings ``pi_k`` and ``pi_ij``."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    nz = [spec.z_states(k) for k in range(spec.K)]
    pairs = _pairs(spec, ref_graph, variant)
    return int(sum(nz) + sum(nz[i] * nz[j] for i, j in pairs))


def block_bounds(assembly: MarginalAssembly) -> dict[str, float]:
    """Trace (PSD) or total-mass (NONNEG) bound of every block at any feasible point.

    Every coupling block is a probability table, and the matrix block has the
    ``Diag(pi_k)`` on its diagonal, so its trace is ``K``.
    """
    out = {}
    for blk in assembly.program.blocks:
        out[blk.name] = float(assembly.spec.K) if blk.cone == "psd" else 1.0
    return out


def lower_bound(assembly: MarginalAssembly, solution: ConicSolution) -> float:
    """Rigorous lower bound on the relaxation optimum from the solution's multipliers."""
    return dual_lower_bound(assembly.program, solution.dual, block_bounds(assembly))
