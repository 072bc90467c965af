"""Instance generators and exact references.

* Gaussians whose precision matrices follow a path pattern.
* One-dimensional Ising chains, with exact marginals from transfer matrices.
* Discretized one-dimensional Ginzburg-Landau chains, sampled exactly by
  forward filtering and backward sampling.
* Empirical moments and Gaussian fits of samples.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .gaussian_ot import GaussianInstance
from .graph import Graph
from .marginal_relax import ClusterMarginals, ClusterSpec, DiscreteMeasure, separable_costs

SPINS = (-1.0, 1.0)
MAX_TABLE_DIM = 20
DEGENERATE_EIG = 1e-10


class DegenerateCovarianceWarning(UserWarning):
    pass


# ---------------------------------------------------------------- Gaussians


def path_precision(d: int, rng: np.random.Generator) -> np.ndarray:
    """Diagonally dominant precision matrix with a path sparsity pattern."""
    P = np.zeros((d, d))
    off = rng.standard_normal(d - 1)
    idx = np.arange(d - 1)
    P[idx, idx + 1] = off
    P[idx + 1, idx] = off
    np.fill_diagonal(P, 0.1 + np.abs(P).sum(axis=1))
    return P


def gaussian_instance(d: int, seed: int) -> GaussianInstance:
    """Random pair of Gaussians with path-pattern precision matrices.

    Off-diagonal path entries of each precision matrix are standard normal,
    each diagonal entry is ``0.1`` plus the absolute off-diagonal row sum,
    and the means are standard normal. Draw order: ``m1``, ``m2``, then the
    two precision matrices.
    """
    if d < 2:
        raise ValueError("d must be at least 2")
    rng = np.random.default_rng(seed)
    m1 = rng.standard_normal(d)
    m2 = rng.standard_normal(d)
    covs = []
    for _ in range(2):
        s = np.linalg.inv(path_precision(d, rng))
        covs.append(0.5 * (s + s.T))
    return GaussianInstance(m1, m2, covs[0], covs[1], Graph.path(d))


def dense_gaussian_instance(d: int, seed: int) -> GaussianInstance:
    """Random pair of Gaussians with dense covariances ``B B^T / d + I / 2``.

    ``B`` has standard normal entries and the means are standard normal.
    No precision pattern is declared, so this suits complete reference
    graphs and ``d = 1``.
    """
    if d < 1:
        raise ValueError("d must be positive")
    rng = np.random.default_rng(seed)
    m1 = rng.standard_normal(d)
    m2 = rng.standard_normal(d)
    covs = []
    for _ in range(2):
        B = rng.standard_normal((d, d))
        covs.append(B @ B.T / d + 0.5 * np.eye(d))
    return GaussianInstance(m1, m2, covs[0], covs[1])


# ------------------------------------------------------------- chain models


def chain_marginal(log_unary: np.ndarray, log_pair: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """Exact marginal of a nearest-neighbour chain on the sites ``keep``.

    The chain has density proportional to
    ``exp(sum_i log_unary[i, s_i] + sum_i log_pair[i, s_i, s_{i+1}])``.
    The result is indexed by the kept sites in increasing order. Sites
    between kept ones are summed out with log-domain propagators, so memory
    stays ``O(s^(k+1))`` for ``k`` kept sites.
    """
    log_unary = np.asarray(log_unary, dtype=float)
    log_pair = np.asarray(log_pair, dtype=float)
    d, s = log_unary.shape
    keep = sorted(set(int(k) for k in keep))
    if not keep or keep[0] < 0 or keep[-1] >= d:
        raise ValueError("keep must list sites of the chain")
    # forward message into the first kept site, unary included
    a = log_unary[0].copy()
    for i in range(keep[0]):
        a = logsumexp(a[:, None] + log_pair[i], axis=0) + log_unary[i + 1]
    # backward message out of the last kept site, unary excluded
    b = np.zeros(s)
    for i in range(d - 2, keep[-1] - 1, -1):
        b = logsumexp(log_pair[i] + (log_unary[i + 1] + b)[None, :], axis=1)
    T = a - a.max()
    for lo, hi in zip(keep, keep[1:]):
        G = log_pair[lo] + log_unary[lo + 1][None, :]
        for c in range(lo + 1, hi):
            G = logsumexp(G[:, :, None] + (log_pair[c] + log_unary[c + 1][None, :])[None], axis=1)
            G = G - G.max()
        T = T[..., :, None] + G
        T = T - T.max()
    T = T + b
    out = np.exp(T - T.max())
    return out / out.sum()


def chain_log_partition(log_unary: np.ndarray, log_pair: np.ndarray) -> float:
    a = np.asarray(log_unary[0], dtype=float)
    for i in range(len(log_unary) - 1):
        a = logsumexp(a[:, None] + log_pair[i], axis=0) + log_unary[i + 1]
    return float(logsumexp(a))


def chain_sample(log_unary: np.ndarray, log_pair: np.ndarray, n_samples: int,
                 rng: np.random.Generator) -> np.ndarray:
    """State indices ``(n_samples, d)`` drawn exactly by forward filtering, backward sampling."""
    d, s = log_unary.shape
    alpha = np.zeros((d, s))
    alpha[0] = log_unary[0]
    for i in range(d - 1):
        alpha[i + 1] = logsumexp(alpha[i][:, None] + log_pair[i], axis=0) + log_unary[i + 1]
    out = np.empty((n_samples, d), dtype=int)
    out[:, -1] = _categorical(np.broadcast_to(alpha[-1], (n_samples, s)), rng)
    for i in range(d - 2, -1, -1):
        logits = alpha[i][None, :] + log_pair[i][:, out[:, i + 1]].T
        out[:, i] = _categorical(logits, rng)
    return out


def _categorical(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    cdf = np.cumsum(p, axis=1)
    u = rng.random(len(p)) * cdf[:, -1]
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, p.shape[1] - 1)


# ------------------------------------------------------------------- Ising


@dataclass(frozen=True)
class IsingParams:
    """Chain of ``d`` spins in ``{-1, +1}`` with density ``exp(beta (J sum u_i u_{i+1} + h sum u_k))``."""

    J: float
    h: float
    beta: float
    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be at least 1")

    def chain(self) -> tuple[np.ndarray, np.ndarray]:
        u = np.array(SPINS)
        unary = np.tile(self.beta * self.h * u, (self.d, 1))
        pair = np.tile(self.beta * self.J * np.outer(u, u), (max(self.d - 1, 0), 1, 1))
        return unary, pair


def ising_measure(p: IsingParams) -> DiscreteMeasure:
    """Full probability table over ``2^d`` configurations (state 0 is spin -1)."""
    if p.d > MAX_TABLE_DIM:
        raise ValueError(f"full table limited to d <= {MAX_TABLE_DIM}")
    states = np.array(np.meshgrid(*[SPINS] * p.d, indexing="ij")).reshape(p.d, -1)
    energy = p.J * np.sum(states[:-1] * states[1:], axis=0) + p.h * states.sum(axis=0)
    logw = p.beta * energy
    w = np.exp(logw - logw.max())
    return DiscreteMeasure((2,) * p.d, w / w.sum())


def ising_clusters(d: int, omega: int) -> ClusterSpec:
    """Clusters of ``omega`` consecutive spins (the last one possibly shorter), same on both sides."""
    if not 1 <= omega <= d:
        raise ValueError("omega must lie in 1..d")
    K = math.ceil(d / omega)
    groups = tuple(tuple(range(k * omega, min((k + 1) * omega, d))) for k in range(K))
    return ClusterSpec.uniform(groups, groups, states=2)


def group_marginal(log_unary, log_pair, group_a, group_b=None) -> np.ndarray:
    """Chain marginal over one group (vector) or two groups (matrix), axes in group order."""
    sites = list(group_a) + (list(group_b) if group_b is not None else [])
    t = chain_marginal(log_unary, log_pair, sites)
    order = sorted(sites)
    t = np.transpose(t, [order.index(v) for v in sites])
    s = log_unary.shape[1]
    if group_b is None:
        return t.ravel()
    return t.reshape(s ** len(group_a), s ** len(group_b))


def ising_cluster_marginals(p: IsingParams, spec: ClusterSpec, pairs, side: str = "x") -> ClusterMarginals:
    """Exact one- and two-cluster marginals of the chain for the clusters on one side."""
    groups = spec.x_groups if side == "x" else spec.y_groups
    if sum(len(g) for g in groups) != p.d:
        raise ValueError("cluster spec does not match the chain length")
    unary, pair = p.chain()
    single = [group_marginal(unary, pair, g) for g in groups]
    pm = {}
    for i, j in pairs:
        i, j = min(i, j), max(i, j)
        pm[(i, j)] = group_marginal(unary, pair, groups[i], groups[j])
    return ClusterMarginals(single, pm)


def ising_costs(spec: ClusterSpec) -> list[np.ndarray]:
    """Per-cluster squared Euclidean cost between spin vectors."""
    xv = [SPINS] * len(spec.x_sizes)
    yv = [SPINS] * len(spec.y_sizes)
    return separable_costs(spec, xv, yv)


# -------------------------------------------------------- Ginzburg-Landau


@dataclass(frozen=True)
class GLParams:
    """Discretized chain with density

    ``exp(-beta sum_{i=1}^{d+1} [lam/2 ((y_i - y_{i-1}) / h)^2 + (1 - y_i^2)^2 / (4 lam)])``

    on ``[-L, L]^d`` with ``y_0 = y_{d+1} = 0`` and ``h = 1/(d+1)``. Each
    coordinate takes ``grid_m`` equispaced values.
    """

    beta: float
    lam: float
    L: float
    d: int
    grid_m: int = 64

    def __post_init__(self):
        if self.lam <= 0 or self.L <= 0 or self.beta <= 0:
            raise ValueError("beta, lam and L must be positive")
        if self.grid_m < 16:
            raise ValueError("grid_m must be at least 16")
        if self.d < 1:
            raise ValueError("d must be at least 1")

    @property
    def step(self) -> float:
        return 1.0 / (self.d + 1)

    def grid(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.grid_m)

    def chain(self) -> tuple[np.ndarray, np.ndarray]:
        g = self.grid()
        kin = self.beta * self.lam / (2.0 * self.step ** 2)
        well = -self.beta * (1.0 - g ** 2) ** 2 / (4.0 * self.lam)
        unary = np.tile(well, (self.d, 1))
        # boundary neighbours y_0 = y_{d+1} = 0
        unary[0] -= kin * g ** 2
        unary[-1] -= kin * g ** 2
        pair = np.tile(-kin * (g[:, None] - g[None, :]) ** 2, (max(self.d - 1, 0), 1, 1))
        return unary, pair


def gl_sampler(p: GLParams, n_samples: int, seed: int) -> np.ndarray:
    """Exact samples ``(n_samples, d)`` of the discretized chain (values are grid points)."""
    rng = np.random.default_rng(seed)
    unary, pair = p.chain()
    idx = chain_sample(unary, pair, n_samples, rng)
    return p.grid()[idx]


def gl_pair_marginal(p: GLParams, i: int, j: int) -> np.ndarray:
    """Joint probabilities of ``(y_i, y_j)`` on the grid (``grid_m x grid_m``), 0-based sites."""
    if i == j or not (0 <= i < p.d and 0 <= j < p.d):
        raise ValueError("need two distinct sites of the chain")
    unary, pair = p.chain()
    t = chain_marginal(unary, pair, [i, j])
    return t if i < j else t.T


def gl_single_marginal(p: GLParams, i: int) -> np.ndarray:
    unary, pair = p.chain()
    return chain_marginal(unary, pair, [i])


# ------------------------------------------------------------ estimation


def empirical_moments(samples: np.ndarray, basis, side: str = "x", ref_graph: Graph | None = None) -> dict:
    """Sample averages of the monomials a moment relaxation needs, after the basis rescaling.

    Parameters
    ----------
    samples : array (n_samples, n_coords)
        Samples of the ``side`` measure in original units.
    basis : ClusterBasisAssembly
    side : {"x", "y"}
    ref_graph : Graph, optional
        Reference graph on the clusters (complete by default); decides which
        cross-cluster moments are required.

    Returns
    -------
    dict
        Exponent vector over the side's coordinates to sample mean of
        the rescaled monomial.
    """
    from .moment_relax import sample_moment_table

    return sample_moment_table(basis, samples, side, ref_graph)


def fit_gaussian(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and biased (``1/N``) sample covariance.

    Emits :class:`DegenerateCovarianceWarning` when the covariance has an
    eigenvalue below ``1e-10``.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError("at least two samples are needed")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / x.shape[0]
    cov = 0.5 * (cov + cov.T)
    if np.linalg.eigvalsh(cov)[0] < DEGENERATE_EIG:
        warnings.warn("sample covariance is degenerate", DegenerateCovarianceWarning, stacklevel=2)
    return mean, cov
