"""Optimal transport between Gaussians: closed forms, the second-moment SDP and its certificate."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import matfun
from .conic import ConicProgram, ConicSolution, ProgramBuilder, dual_lower_bound, solve
from .conic.chordal import CliqueMap, decompose_psd_block
from .graph import Graph, in_pattern, maximal_cliques, project_pattern

PD_FLOOR = 1e-10


@dataclass(frozen=True)
class GaussianInstance:
    m1: np.ndarray
    m2: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    precision_pattern: Graph | None = None

    def __post_init__(self):
        for name in ("m1", "m2", "sigma1", "sigma2"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float))
        d = self.m1.shape[0]
        if self.m2.shape != (d,) or self.sigma1.shape != (d, d) or self.sigma2.shape != (d, d):
            raise ValueError("inconsistent instance dimensions")
        for s in (self.sigma1, self.sigma2):
            if matfun.min_eig(s) <= PD_FLOOR:
                raise matfun.NotPositiveDefinite("covariance is not positive definite")
        if self.precision_pattern is not None:
            if self.precision_pattern.n != d:
                raise ValueError("precision pattern has the wrong number of vertices")
            for s in (self.sigma1, self.sigma2):
                prec = np.linalg.inv(s)
                if not in_pattern(prec, self.precision_pattern, atol=1e-8 * (1 + np.abs(prec).max())):
                    raise ValueError("precision matrix does not follow the declared pattern")

    @property
    def d(self) -> int:
        return self.m1.shape[0]

    @property
    def eig_bounds(self) -> tuple[float, float]:
        """Largest ``a`` and smallest ``b`` with ``a I <= sigma_i <= b I``."""
        w1 = np.linalg.eigvalsh(self.sigma1)
        w2 = np.linalg.eigvalsh(self.sigma2)
        return float(min(w1[0], w2[0])), float(max(w1[-1], w2[-1]))

    def to_dict(self) -> dict:
        out = {
            "d": self.d,
            "m1": self.m1.tolist(),
            "m2": self.m2.tolist(),
            "sigma1": self.sigma1.ravel().tolist(),
            "sigma2": self.sigma2.ravel().tolist(),
        }
        if self.precision_pattern is not None:
            out["pattern"] = self.precision_pattern.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GaussianInstance":
        d = int(data["d"])
        pattern = Graph.from_dict(data["pattern"]) if "pattern" in data else None
        return cls(
            np.asarray(data["m1"], dtype=float),
            np.asarray(data["m2"], dtype=float),
            np.asarray(data["sigma1"], dtype=float).reshape(d, d),
            np.asarray(data["sigma2"], dtype=float).reshape(d, d),
            pattern,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "GaussianInstance":
        return cls.from_dict(json.loads(text))


def _cross_root(inst: GaussianInstance):
    r1 = matfun.sqrt_psd(inst.sigma1)
    r1_inv = matfun.invsqrt_pd(inst.sigma1)
    mid = matfun.sqrt_psd(r1 @ inst.sigma2 @ r1)
    return r1, r1_inv, mid


def bures_w2(inst: GaussianInstance) -> float:
    """Squared 2-Wasserstein distance between the two Gaussians."""
    r1, _, mid = _cross_root(inst)
    dm = inst.m1 - inst.m2
    val = dm @ dm + np.trace(inst.sigma1) + np.trace(inst.sigma2) - 2.0 * np.trace(mid)
    return float(max(val, 0.0))


def gaussian_monge_map(inst: GaussianInstance) -> tuple[np.ndarray, np.ndarray]:
    """Affine optimal map ``x -> A x + b`` pushing the first Gaussian onto the second."""
    _, r1_inv, mid = _cross_root(inst)
    A = r1_inv @ mid @ r1_inv
    A = 0.5 * (A + A.T)
    return A, inst.m2 - A @ inst.m1


def optimal_dual_blocks(inst: GaussianInstance) -> tuple[np.ndarray, np.ndarray]:
    """The two diagonal blocks of the closed-form dual optimum for the complete reference graph."""
    r1, r1_inv, mid = _cross_root(inst)
    lam1 = r1_inv @ mid @ r1_inv
    lam2 = r1 @ matfun.invsqrt_pd(r1 @ inst.sigma2 @ r1) @ r1
    return 0.5 * (lam1 + lam1.T), 0.5 * (lam2 + lam2.T)


def epsilon_bound(inst: GaussianInstance, ref_graph: Graph) -> float:
    """Computable bound on ``bures_w2 - relaxation optimum`` for a reference graph."""
    lam1, lam2 = optimal_dual_blocks(inst)
    e1 = matfun.spectral_norm(project_pattern(lam1, ref_graph, "complement"))
    e2 = matfun.spectral_norm(project_pattern(lam2, ref_graph, "complement"))
    return float(2.0 * np.trace(inst.sigma1) * e1 + 2.0 * np.trace(inst.sigma2) * e2)


def dual_certificate(inst: GaussianInstance, ref_graph: Graph) -> tuple[np.ndarray, np.ndarray, float]:
    """Explicit dual-feasible point for the relaxation on ``ref_graph`` and its objective.

    The closed-form dual blocks are truncated to the pattern and shifted by
    the spectral norm of the removed part, which keeps the dual block
    matrix ``[[L1, -I], [-I, L2]]`` positive semidefinite.
    """
    lam1, lam2 = optimal_dual_blocks(inst)
    tilde = []
    for lam in (lam1, lam2):
        off = project_pattern(lam, ref_graph, "complement")
        tilde.append(lam - off + matfun.spectral_norm(off) * np.eye(inst.d))
    dm = inst.m1 - inst.m2
    value = (dm @ dm + np.trace(inst.sigma1) + np.trace(inst.sigma2)
             - np.sum(inst.sigma1 * tilde[0]) - np.sum(inst.sigma2 * tilde[1]))
    return tilde[0], tilde[1], float(value)


@dataclass(frozen=True)
class GsmomAssembly:
    """The second-moment SDP on one PSD block ``X`` of size ``2d + 1``.

    Block layout: index 0 is the constant, ``1..d`` the x-coordinates,
    ``d+1..2d`` the y-coordinates.
    """

    program: ConicProgram
    reference_graph: Graph
    d: int
    entry_map: dict = field(default_factory=dict)


def build_gsmom(inst: GaussianInstance, ref_graph: Graph) -> GsmomAssembly:
    d = inst.d
    if ref_graph.n != d:
        raise ValueError("reference graph must have one vertex per coordinate")
    b = ProgramBuilder()
    k = b.add_block("X", "psd", 2 * d + 1)
    xs = [1 + i for i in range(d)]
    ys = [1 + d + i for i in range(d)]
    for i in range(d):
        b.add_objective(b.col(k, xs[i], xs[i]), 1.0)
        b.add_objective(b.col(k, ys[i], ys[i]), 1.0)
        b.add_objective(b.col(k, xs[i], ys[i]), -2.0)

    b.add_constraint([(b.col(k, 0, 0), 1.0)], 1.0, "constant")
    for i in range(d):
        b.add_constraint([(b.col(k, 0, xs[i]), 1.0)], float(inst.m1[i]), "marginal-x")
    for i in range(d):
        b.add_constraint([(b.col(k, 0, ys[i]), 1.0)], float(inst.m2[i]), "marginal-y")

    pairs = [(i, i) for i in range(d)] + list(ref_graph.edges)
    second1 = inst.sigma1 + np.outer(inst.m1, inst.m1)
    second2 = inst.sigma2 + np.outer(inst.m2, inst.m2)
    for i, j in pairs:
        b.add_constraint([(b.col(k, xs[i], xs[j]), 1.0)], float(second1[i, j]), "marginal-x")
    for i, j in pairs:
        b.add_constraint([(b.col(k, ys[i], ys[j]), 1.0)], float(second2[i, j]), "marginal-y")
    entry_map = {"constant": 0, "x": xs, "y": ys}
    return GsmomAssembly(b.build(), ref_graph, d, entry_map)


def gsmom_cliques(ref_graph: Graph) -> list[tuple[int, ...]]:
    """Cliques ``{0} + (V+1) + (V+1+d)`` of the lifted pattern, one per maximal clique ``V``."""
    d = ref_graph.n
    _, cliques = maximal_cliques(ref_graph)
    return [tuple([0] + [1 + v for v in cl] + [1 + d + v for v in cl]) for cl in cliques]


def clique_convert(assembly: GsmomAssembly) -> tuple[ConicProgram, CliqueMap]:
    """Multi-block form of the SDP with one block of size ``2|V|+1`` per maximal clique."""
    return decompose_psd_block(assembly.program, "X", gsmom_cliques(assembly.reference_graph))


def block_traces(inst: GaussianInstance, assembly: GsmomAssembly, program: ConicProgram,
                 cmap: CliqueMap | None = None) -> dict[str, float]:
    """Exact trace of every PSD block at any feasible point (all diagonals are pinned)."""
    diag = np.concatenate([[1.0], np.diag(inst.sigma1) + inst.m1 ** 2, np.diag(inst.sigma2) + inst.m2 ** 2])
    if cmap is None:
        return {"X": float(diag.sum())}
    return {name: float(diag[list(cl)].sum()) for name, cl in zip(cmap.block_names, cmap.cliques)}


@dataclass
class GsmomResult:
    """Solver output for the second-moment SDP.

    ``value`` is the primal objective of the returned iterate and
    ``lower_bound`` a rigorous lower bound on the SDP optimum computed from
    the dual multipliers. The two agree to solver accuracy when
    ``solution.status == "optimal"``; on nearly degenerate instances the
    splitting solver may stop earlier and ``lower_bound`` is the safe value.
    """

    value: float
    lower_bound: float
    solution: ConicSolution
    program: ConicProgram
    clique_map: CliqueMap | None = None

    @property
    def status(self) -> str:
        return self.solution.status


def solve_gsmom(
    inst: GaussianInstance,
    ref_graph: Graph,
    *,
    tol: float = 1e-8,
    max_iter: int = 50000,
    seed: int = 0,
    chordal: bool = True,
    time_limit: float | None = None,
) -> GsmomResult:
    """Build, optionally clique-convert, and solve the second-moment SDP."""
    asm = build_gsmom(inst, ref_graph)
    prog = asm.program
    cmap = None
    if chordal and not ref_graph.is_complete:
        prog, cmap = clique_convert(asm)
    sol = solve(prog, tol=tol, max_iter=max_iter, seed=seed, time_limit=time_limit)
    lb = dual_lower_bound(prog, sol.dual, block_traces(inst, asm, prog, cmap))
    return GsmomResult(sol.objective, lb, sol, prog, cmap)
