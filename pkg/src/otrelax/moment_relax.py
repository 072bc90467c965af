"""Cluster moment relaxations of optimal transport between continuous measures.

Every cluster ``k`` pairs a group of ``x``-coordinates with a group of
``y``-coordinates and carries the monomial basis ``Phi_k`` of total degree
at most ``n`` in those variables, with the constant first. Moment matrices
``M_k = pi(Phi_k Phi_k^T)`` and ``M_ij = pi(Phi_i Phi_j^T)`` are SDP variables;
entries whose monomials coincide share one *moment id* and are tied by
consistency equalities, while the ``x``-pure and ``y``-pure moments are
pinned to those of ``mu`` and ``nu``.

Variables are indexed globally as ``x_0..x_{dx-1}`` followed by
``y_0..y_{dy-1}``. All monomials are evaluated in affinely rescaled
coordinates ``s = (v - offset) / scale``; the quadratic cost is encoded with
the squared scale factors so reported objective values are in the original
units.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np

from .conic import ConicProgram, ConicSolution, ProgramBuilder
from .graph import Graph, maximal_cliques
from .marginal_relax import ClusterSpec

VARIANTS = ("full", "sparse", "psd")


# ---------------------------------------------------------------------------
# rescaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scaling:
    """Per-variable affine map ``s = (v - offset) / scale`` over ``(x, y)``."""

    offset: np.ndarray
    scale: np.ndarray
    dx: int

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).ravel())
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float).ravel())
        if self.offset.shape != self.scale.shape:
            raise ValueError("offset and scale must have the same length")
        if np.any(self.scale <= 0) or not np.all(np.isfinite(self.scale)):
            raise ValueError("scale factors must be positive and finite")
        if not 0 <= self.dx <= self.offset.size:
            raise ValueError("dx out of range")

    @classmethod
    def identity(cls, dx: int, dy: int) -> "Scaling":
        return cls(np.zeros(dx + dy), np.ones(dx + dy), dx)

    @classmethod
    def from_samples(cls, spec: ClusterSpec, x_samples, y_samples, margin: float = 0.0) -> "Scaling":
        """Map the joint range of every paired ``(x_v, y_w)`` coordinate onto ``[-1, 1]``.

        ``x_v`` and ``y_w`` at the same position of the same cluster share
        one transform, which keeps ``(x_v - y_w)^2`` a multiple of
        ``(s_x - s_y)^2``.
        """
        xs = np.atleast_2d(np.asarray(x_samples, dtype=float))
        ys = np.atleast_2d(np.asarray(y_samples, dtype=float))
        dx, dy = len(spec.x_sizes), len(spec.y_sizes)
        offset = np.zeros(dx + dy)
        scale = np.ones(dx + dy)
        for xg, yg in zip(spec.x_groups, spec.y_groups):
            _check_paired(xg, yg)
            for v, w in zip(xg, yg):
                lo = min(xs[:, v].min(), ys[:, w].min())
                hi = max(xs[:, v].max(), ys[:, w].max())
                mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo) * (1.0 + margin)
                offset[v] = offset[dx + w] = mid
                scale[v] = scale[dx + w] = half if half > 0 else 1.0
        return cls(offset, scale, dx)

    def side(self, side: str) -> tuple[np.ndarray, np.ndarray]:
        sl = slice(0, self.dx) if side == "x" else slice(self.dx, None)
        return self.offset[sl], self.scale[sl]

    def to_unit(self, points, side: str) -> np.ndarray:
        off, sc = self.side(side)
        return (np.atleast_2d(np.asarray(points, dtype=float)) - off) / sc

    def to_dict(self) -> dict:
        return {"offset": self.offset.tolist(), "scale": self.scale.tolist(), "dx": self.dx}

    @classmethod
    def from_dict(cls, data: dict) -> "Scaling":
        return cls(np.asarray(data["offset"]), np.asarray(data["scale"]), int(data["dx"]))


def _check_paired(xg, yg):
    if len(xg) != len(yg):
        raise ValueError("the squared cost needs x- and y-groups of equal size in every cluster")


# ---------------------------------------------------------------------------
# bases and moment ids
# ---------------------------------------------------------------------------


def graded_lex_exponents(nvars: int, degree: int) -> np.ndarray:
    """All exponent vectors with total degree ``<= degree``, graded-lex order.

    Lower total degree first; within one degree the first variable carries
    the highest power first, so the order for ``(x, y)`` and degree 2 is
    ``1, x, y, x^2, xy, y^2``.
    """
    rows = []
    for t in range(degree + 1):
        rows.extend(_compositions(t, nvars))
    return np.asarray(rows, dtype=int).reshape(-1, nvars)


def _compositions(total: int, parts: int) -> list[tuple[int, ...]]:
    if parts == 0:
        return [()] if total == 0 else []
    if parts == 1:
        return [(total,)]
    out = []
    for first in range(total, -1, -1):
        out.extend((first,) + rest for rest in _compositions(total - first, parts - 1))
    return out


def _glex_key(e: tuple[int, ...]):
    return (sum(e), tuple(-v for v in e))


def _monomials(points: np.ndarray, exponents: np.ndarray) -> np.ndarray:
    """``out[p, t] = prod_i points[p, i] ** exponents[t, i]``."""
    points = np.atleast_2d(points)
    out = np.ones((points.shape[0], exponents.shape[0]))
    for i in range(exponents.shape[1]):
        col = exponents[:, i]
        if np.any(col):
            out *= points[:, i : i + 1] ** col[None, :]
    return out


@dataclass(frozen=True, eq=False)
class ClusterBasisAssembly:
    """Cluster bases ``Phi_k`` and the global moment-id table.

    Attributes
    ----------
    spec : ClusterSpec
        Coordinate grouping; the state counts in it are not used here.
    degree : int
        Maximal total degree ``n`` of the basis monomials.
    variables : tuple of tuples
        Global variable indices of cluster ``k`` (its x-coordinates, then
        its y-coordinates, in group order).
    bases : tuple of ndarrays
        ``bases[k]`` has one row per basis monomial (local exponents over
        ``variables[k]``); row 0 is the constant.
    exponents : ndarray
        ``exponents[id]`` is the global exponent vector of moment ``id``;
        ids are numbered in graded-lex order.
    moment_index : dict
        Inverse of ``exponents``.
    scaling : Scaling
    """

    spec: ClusterSpec
    degree: int
    variables: tuple[tuple[int, ...], ...]
    bases: tuple[np.ndarray, ...]
    exponents: np.ndarray
    moment_index: dict[tuple[int, ...], int]
    scaling: Scaling
    _pair_ids: dict = field(repr=False, default_factory=dict)

    @property
    def K(self) -> int:
        return self.spec.K

    @property
    def dx(self) -> int:
        return len(self.spec.x_sizes)

    @property
    def dy(self) -> int:
        return len(self.spec.y_sizes)

    @property
    def n_moments(self) -> int:
        return self.exponents.shape[0]

    def size(self, k: int) -> int:
        return self.bases[k].shape[0]

    def global_basis(self, k: int) -> np.ndarray:
        """Basis exponents of cluster ``k`` embedded in the global variable set."""
        out = np.zeros((self.size(k), self.dx + self.dy), dtype=int)
        out[:, list(self.variables[k])] = self.bases[k]
        return out

    def pair_ids(self, i: int, j: int) -> np.ndarray:
        """Moment ids of the entries of ``Phi_i Phi_j^T``."""
        if i > j:
            return self.pair_ids(j, i).T
        return self._pair_ids[(i, j)]

    def kind(self, mid: int) -> str:
        """``"constant"``, ``"x"`` (x-pure), ``"y"`` (y-pure) or ``"mixed"``."""
        e = self.exponents[mid]
        has_x, has_y = bool(e[: self.dx].any()), bool(e[self.dx :].any())
        if not has_x and not has_y:
            return "constant"
        if has_x and has_y:
            return "mixed"
        return "x" if has_x else "y"

    @property
    def constant_id(self) -> int:
        return 0

    def required_ids(self, ref_graph: Graph | None = None) -> list[int]:
        """Ids of the pure moments read off ``M_k`` (all ``k``) and ``M_ij`` (edges)."""
        ref_graph = Graph.complete(self.K) if ref_graph is None else ref_graph
        _check_graph(ref_graph, self.K)
        ids: set[int] = set()
        for k in range(self.K):
            ids.update(np.unique(self.pair_ids(k, k)).tolist())
        for i, j in ref_graph.edges:
            ids.update(np.unique(self.pair_ids(i, j)).tolist())
        return sorted(m for m in ids if self.kind(m) in ("constant", "x", "y"))

    def side_exponent(self, mid: int, side: str) -> tuple[int, ...]:
        e = self.exponents[mid]
        return tuple(int(v) for v in (e[: self.dx] if side == "x" else e[self.dx :]))

    def required_exponents(self, side: str, ref_graph: Graph | None = None) -> list[tuple[int, ...]]:
        """Exponent vectors (over one side's coordinates) that ``pin_moments`` needs."""
        if side not in ("x", "y"):
            raise ValueError("side must be 'x' or 'y'")
        return [self.side_exponent(m, side) for m in self.required_ids(ref_graph) if self.kind(m) == side]

    def monomials(self, points, exponents, side: str) -> np.ndarray:
        """Monomials ``s^alpha`` of rescaled points of one side, one column per exponent."""
        s = self.scaling.to_unit(points, side)
        return _monomials(s, np.asarray(list(exponents), dtype=int).reshape(-1, s.shape[1]))

    def evaluate(self, k: int, z) -> np.ndarray:
        """``Phi_k`` at joint points ``z = (x, y)`` in original units, shape ``(n_points, size(k))``."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        s = (z - self.scaling.offset) / self.scaling.scale
        return _monomials(s[:, list(self.variables[k])], self.bases[k])


def build_basis(spec: ClusterSpec, n: int, scaling: Scaling | None = None) -> ClusterBasisAssembly:
    """Graded-lex monomial bases of degree ``<= n`` and global moment ids."""
    if n < 1:
        raise ValueError("degree must be at least 1")
    dx, dy = len(spec.x_sizes), len(spec.y_sizes)
    scaling = Scaling.identity(dx, dy) if scaling is None else scaling
    if scaling.offset.size != dx + dy or scaling.dx != dx:
        raise ValueError("scaling does not match the coordinate counts")
    variables = tuple(tuple(xg) + tuple(dx + w for w in yg) for xg, yg in zip(spec.x_groups, spec.y_groups))
    bases = tuple(graded_lex_exponents(len(v), n) for v in variables)

    glob = []
    for k, var in enumerate(variables):
        g = np.zeros((bases[k].shape[0], dx + dy), dtype=int)
        g[:, list(var)] = bases[k]
        glob.append(g)
    raw = {}
    seen: set[tuple[int, ...]] = set()
    for i in range(spec.K):
        for j in range(i, spec.K):
            sums = glob[i][:, None, :] + glob[j][None, :, :]
            raw[(i, j)] = sums
            seen.update(map(tuple, sums.reshape(-1, dx + dy).tolist()))
    ordered = sorted(seen, key=_glex_key)
    index = {e: t for t, e in enumerate(ordered)}
    pair_ids = {}
    for key, sums in raw.items():
        flat = [index[tuple(r)] for r in sums.reshape(-1, dx + dy).tolist()]
        pair_ids[key] = np.asarray(flat, dtype=int).reshape(sums.shape[:2])
    return ClusterBasisAssembly(
        spec, n, variables, bases, np.asarray(ordered, dtype=int).reshape(-1, dx + dy), index, scaling, pair_ids
    )


# ---------------------------------------------------------------------------
# cost and moments
# ---------------------------------------------------------------------------


def encode_cost(basis: ClusterBasisAssembly) -> list[np.ndarray]:
    """Matrices ``C_k`` with ``<C_k, Phi_k Phi_k^T> = ||x_k - y_k||^2`` in original units."""
    out = []
    for k in range(basis.K):
        xg, yg = basis.spec.x_groups[k], basis.spec.y_groups[k]
        _check_paired(xg, yg)
        local = basis.bases[k]
        nx = len(xg)
        lin = {}
        for a, row in enumerate(local):
            if row.sum() == 1:
                lin[int(np.flatnonzero(row)[0])] = a
        C = np.zeros((local.shape[0], local.shape[0]))
        for t, v in enumerate(xg):
            sc2 = basis.scaling.scale[v] ** 2
            a, b = lin[t], lin[nx + t]
            C[a, a] += sc2
            C[b, b] += sc2
            C[a, b] -= sc2
            C[b, a] -= sc2
        out.append(C)
    return out


def _check_graph(g: Graph, K: int):
    if g.n != K:
        raise ValueError(f"reference graph has {g.n} vertices, expected one per cluster ({K})")


def pin_moments(
    basis: ClusterBasisAssembly,
    mu_moments: dict,
    nu_moments: dict,
    ref_graph: Graph | None = None,
) -> dict[int, float]:
    """Prescribed values of every required pure moment id (constant pinned to 1).

    ``mu_moments`` maps exponent vectors over the x-coordinates to
    ``E_mu[s^alpha]`` in rescaled coordinates; ``nu_moments`` likewise for y.
    Extra entries are ignored.
    """
    pinned: dict[int, float] = {basis.constant_id: 1.0}
    for mid in basis.required_ids(ref_graph):
        kind = basis.kind(mid)
        if kind == "constant":
            continue
        table = mu_moments if kind == "x" else nu_moments
        key = basis.side_exponent(mid, kind)
        if key not in table:
            raise KeyError(f"missing {kind}-moment for exponent {key}")
        pinned[mid] = float(table[key])
    return pinned


def gaussian_moments(mean, cov, exponents) -> dict[tuple[int, ...], float]:
    """Raw moments ``E[s^alpha]`` of ``N(mean, cov)`` by Stein's recursion.

    ``E[s_i f(s)] = mean_i E[f] + sum_j cov_ij E[d_j f]`` applied to
    ``f = s^(alpha - e_i)`` with ``i`` the first variable of ``alpha``.
    """
    mean = np.asarray(mean, dtype=float).ravel()
    cov = np.asarray(cov, dtype=float).reshape(mean.size, mean.size)

    @lru_cache(maxsize=None)
    def moment(alpha: tuple[int, ...]) -> float:
        nz = [i for i, a in enumerate(alpha) if a]
        if not nz:
            return 1.0
        i = nz[0]
        red = list(alpha)
        red[i] -= 1
        val = mean[i] * moment(tuple(red))
        for j, aj in enumerate(red):
            if aj:
                low = list(red)
                low[j] -= 1
                val += cov[i, j] * aj * moment(tuple(low))
        return val

    return {tuple(int(v) for v in e): float(moment(tuple(int(v) for v in e))) for e in exponents}


def rescaled_gaussian(scaling: Scaling, side: str, mean, cov) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of a Gaussian after the basis rescaling of one side."""
    off, sc = scaling.side(side)
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    return (mean - off) / sc, cov / np.outer(sc, sc)


def gaussian_moment_tables(basis: ClusterBasisAssembly, m1, s1, m2, s2, ref_graph: Graph | None = None):
    """Required rescaled moments of ``N(m1, s1)`` (x-side) and ``N(m2, s2)`` (y-side)."""
    mx, cx = rescaled_gaussian(basis.scaling, "x", m1, s1)
    my, cy = rescaled_gaussian(basis.scaling, "y", m2, s2)
    return (
        gaussian_moments(mx, cx, basis.required_exponents("x", ref_graph)),
        gaussian_moments(my, cy, basis.required_exponents("y", ref_graph)),
    )


def sample_moment_table(basis: ClusterBasisAssembly, samples, side: str, ref_graph: Graph | None = None) -> dict:
    """Sample averages of the required monomials of one side (rescaled coordinates)."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] < 2:
        raise ValueError("at least two samples are needed")
    exps = basis.required_exponents(side, ref_graph)
    if not exps:
        return {}
    vals = basis.monomials(samples, exps, side).mean(axis=0)
    return {e: float(v) for e, v in zip(exps, vals)}


def moments_to_json(table: dict) -> str:
    return json.dumps({",".join(str(v) for v in e): float(val) for e, val in table.items()}, sort_keys=True)


def moments_from_json(text: str) -> dict:
    data = json.loads(text)
    return {tuple(int(v) for v in key.split(",")) if key else (): float(val) for key, val in data.items()}


# ---------------------------------------------------------------------------
# programs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MomentAssembly:
    """A cluster moment relaxation together with its bookkeeping.

    Attributes
    ----------
    program : ConicProgram
    basis : ClusterBasisAssembly
    pinned : dict
        Moment id to prescribed value.
    variant : str
    reference_graph : Graph
    layout : tuple of tuples
        Clusters stacked in each PSD block, in block order.
    representative : dict
        Moment id to the program column that carries its value; every other
        occurrence is tied to it by a ``"consistency"`` equality.
    pin_rows : dict
        Moment id to the constraint row pinning it.
    reduced : bool
        True for the clique-decomposed form of the ``psd`` variant.
    factor : dict
        Moment id to the factor ``w_p w_q`` relating the representative
        program entry to the moment (``entry = factor * moment``); all ones
        unless the basis was normalized.
    """

    program: ConicProgram
    basis: ClusterBasisAssembly
    pinned: dict[int, float]
    variant: str
    reference_graph: Graph
    layout: tuple[tuple[int, ...], ...]
    representative: dict[int, int]
    pin_rows: dict[int, int]
    reduced: bool = False
    factor: dict[int, float] = field(default_factory=dict)

    @property
    def normalized(self) -> bool:
        return any(f != 1.0 for f in self.factor.values())

    def moment_values(self, solution: ConicSolution | np.ndarray) -> dict[int, float]:
        x = solution.x if isinstance(solution, ConicSolution) else np.asarray(solution)
        return {mid: float(x[col]) / self.factor.get(mid, 1.0) for mid, col in self.representative.items()}

    def moment_matrix(self, solution: ConicSolution | np.ndarray, fill: float = np.nan) -> np.ndarray:
        """Full block matrix ``M`` (all clusters stacked); ids absent from the program get ``fill``."""
        vals = self.moment_values(solution)
        K = self.basis.K
        rows = []
        for i in range(K):
            rows.append(np.hstack([np.vectorize(lambda m: vals.get(int(m), fill), otypes=[float])(self.basis.pair_ids(i, j))
                                   for j in range(K)]))
        return np.vstack(rows)

    def cluster_block(self, solution, i: int, j: int | None = None) -> np.ndarray:
        """``M_i`` (or ``M_ij``) from a solution."""
        j = i if j is None else j
        vals = self.moment_values(solution)
        return np.vectorize(lambda m: vals.get(int(m), np.nan), otypes=[float])(self.basis.pair_ids(i, j))


def _layout(K: int, ref_graph: Graph, variant: str) -> list[tuple[int, ...]]:
    everything = tuple(range(K))
    if variant == "psd":
        return [everything]
    pairs = list(combinations(range(K), 2))
    if variant == "full":
        return [everything] + pairs if K > 1 else [everything]
    blocks = [tuple(e) for e in sorted(ref_graph.edges)]
    covered = {v for e in blocks for v in e}
    blocks.extend((k,) for k in range(K) if k not in covered)
    return sorted(blocks)


def basis_weights(basis: ClusterBasisAssembly, pinned: dict[int, float]) -> list[np.ndarray]:
    """Normalizing weights ``w_k[a] = (E_mu[s_x^(2a_x)] E_nu[s_y^(2a_y)])^(-1/2)``.

    ``a_x`` and ``a_y`` are the x- and y-parts of basis monomial ``a`` of
    cluster ``k``; both even moments are pinned diagonal entries of
    ``M_k``. The product is the second moment of the monomial under the
    independent coupling, so the weighted basis has entries of order one.
    """
    out = []
    nx_all = basis.dx
    for k in range(basis.K):
        g = basis.global_basis(k)
        w = np.ones(g.shape[0])
        for a, e in enumerate(g):
            val = 1.0
            for part in (np.where(np.arange(e.size) < nx_all, e, 0), np.where(np.arange(e.size) >= nx_all, e, 0)):
                if part.any():
                    mid = basis.moment_index[tuple(int(v) for v in 2 * part)]
                    val *= pinned.get(mid, 1.0)
            if val > 1e-300 and np.isfinite(val):
                w[a] = 1.0 / np.sqrt(val)
        out.append(w)
    return out


def _assemble(basis, pinned, ref_graph, variant, layout, reduced=False, normalize=False) -> MomentAssembly:
    K = basis.K
    b = ProgramBuilder()
    weights = basis_weights(basis, pinned) if normalize else [np.ones(basis.size(k)) for k in range(K)]
    representative: dict[int, int] = {}
    factor: dict[int, float] = {}
    ties: list[tuple[int, float, int]] = []
    for t, clusters in enumerate(layout):
        sizes = [basis.size(k) for k in clusters]
        starts = np.concatenate([[0], np.cumsum(sizes)])
        kb = b.add_block(f"M{t}" if len(layout) > 1 else "M", "psd", int(starts[-1]))
        for u, ci in enumerate(clusters):
            for v in range(u, len(clusters)):
                cj = clusters[v]
                ids = basis.pair_ids(ci, cj)
                wi, wj = weights[ci], weights[cj]
                for a in range(sizes[u]):
                    lo = a if u == v else 0
                    for c in range(lo, sizes[v]):
                        col = b.col(kb, int(starts[u]) + a, int(starts[v]) + c)
                        mid = int(ids[a, c])
                        f = float(wi[a] * wj[c])
                        if mid in representative:
                            ties.append((col, f, mid))
                        else:
                            representative[mid] = col
                            factor[mid] = f

    for k, C in enumerate(encode_cost(basis)):
        ids = basis.pair_ids(k, k)
        rr, cc = np.nonzero(C)
        for a, c in zip(rr, cc):
            mid = int(ids[a, c])
            b.add_objective(representative[mid], float(C[a, c]) / factor[mid])

    pin_rows = {}
    for mid in sorted(pinned):
        if mid not in representative:
            raise ValueError(f"pinned moment {tuple(basis.exponents[mid])} does not occur in the program")
        kind = basis.kind(mid)
        if kind == "mixed":
            raise ValueError("only x-pure and y-pure moments can be pinned")
        # the constant pin belongs to the x-potential of the dual
        tag = "marginal-y" if kind == "y" else "marginal-x"
        pin_rows[mid] = b.add_constraint([(representative[mid], 1.0 / factor[mid])], float(pinned[mid]), tag)
    for col, f, mid in ties:
        # entry / f = representative / factor, scaled to unit weight on the copy
        b.add_constraint([(col, 1.0), (representative[mid], -f / factor[mid])], 0.0, "consistency")
    return MomentAssembly(
        b.build(), basis, dict(pinned), variant, ref_graph, tuple(tuple(c) for c in layout),
        representative, pin_rows, reduced, factor,
    )


def build_otmom(
    basis: ClusterBasisAssembly,
    pinned: dict[int, float],
    ref_graph: Graph,
    variant: str = "psd",
    normalize: bool = False,
) -> MomentAssembly:
    """Cluster moment relaxation in one of three variants.

    ``psd``
        One PSD block holding the whole moment matrix ``M`` (all ``M_k`` and
        all ``M_ij``).
    ``sparse``
        One PSD block ``[[M_i, M_ij], [M_ij^T, M_j]]`` per edge of the
        reference graph (plus ``M_k`` alone for isolated clusters) and no
        global block.
    ``full``
        The global block together with the stacked two-cluster block of
        every pair of clusters.

    In every variant repeated moment ids are tied by ``"consistency"``
    equalities and pinned ids carry ``"marginal-x"`` / ``"marginal-y"``
    equalities (the constant is tagged ``"marginal-x"``).

    With ``normalize=True`` every basis monomial is multiplied by the
    weight of :func:`basis_weights`, i.e. the PSD blocks hold
    ``W M W`` for a positive diagonal ``W``. This congruence leaves the
    feasible set, the optimum and the potentials unchanged and greatly
    improves the conditioning of high-degree programs.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    _check_graph(ref_graph, basis.K)
    required = set(basis.required_ids(ref_graph))
    if basis.constant_id not in pinned or abs(pinned[basis.constant_id] - 1.0) > 1e-12:
        raise ValueError("the constant moment must be pinned to 1")
    missing = required - set(pinned)
    if missing:
        raise ValueError(f"{len(missing)} required moments are not pinned")
    extra = {m for m in pinned if m not in required}
    if extra:
        raise ValueError("pinned moments outside the cluster and reference-graph blocks")
    return _assemble(basis, pinned, ref_graph, variant, _layout(basis.K, ref_graph, variant), normalize=normalize)


def chordal_reduce(assembly: MomentAssembly) -> MomentAssembly:
    """Replace the global block of the ``psd`` variant by one block per maximal clique.

    Each block stacks the bases of the clusters in one maximal clique of the
    (chordal) reference graph; copies of shared moments are tied by the
    same consistency equalities. Moments that occur only in cross blocks of
    non-adjacent clusters are unconstrained in the global program, so by
    PSD completion on the chordal pattern the optimum is unchanged. A
    complete reference graph yields the original single block.
    """
    if assembly.variant != "psd":
        raise ValueError("chordal reduction applies to the psd variant")
    chordal, cliques = maximal_cliques(assembly.reference_graph)
    if not chordal:
        raise ValueError("reference graph is not chordal; complete it first")
    layout = sorted(tuple(sorted(c)) for c in cliques)
    return _assemble(assembly.basis, assembly.pinned, assembly.reference_graph, "psd", layout, reduced=True,
                     normalize=assembly.normalized)


def coupling_moments(basis: ClusterBasisAssembly, z) -> dict[int, float]:
    """Moment values of the empirical coupling of joint samples ``z = (x, y)``."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    s = (z - basis.scaling.offset) / basis.scaling.scale
    vals = np.zeros(basis.n_moments)
    chunk = max(1, 2_000_000 // max(basis.n_moments, 1))
    for lo in range(0, s.shape[0], chunk):
        vals += _monomials(s[lo : lo + chunk], basis.exponents).sum(axis=0)
    vals /= s.shape[0]
    return {t: float(v) for t, v in enumerate(vals)}


def basis_size(n_vars: int, degree: int) -> int:
    return math.comb(n_vars + degree, degree)
