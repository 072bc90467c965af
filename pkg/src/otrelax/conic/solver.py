"""First-order conic solver.

Relaxed Douglas-Rachford splitting between the affine set ``{A x = b}``
(with the linear objective folded into its proximal step) and the cone
product ``K``. The affine projection uses one cached factorization of the
row-equilibrated normal matrix ``A A^T``. Iterates are accelerated with
safeguarded Anderson mixing and the step size is adapted to balance
primal and dual residuals.

Every iterate yields an exact cone pair ``x in K``, ``s in K*`` with
``<x, s> = 0``; the multipliers come from the affine projection.
"""

from __future__ import annotations

import logging
import time

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .program import ConicProgram, ConicSolution, residuals

log = logging.getLogger(__name__)

RELAXATION = 1.5
INITIAL_STEP = None
CHECK_EVERY = 5
# a mixed point is rejected when it inflates the residual by more than this
SAFEGUARD = 1.05
STALL_DECREASE = 0.999
STALL_WINDOW = 100
# step adaptation: rescale by sqrt(primal/dual) when the ratio leaves the band
ADAPT_EVERY = 200
ADAPT_BAND = 8.0
ADAPT_MAX = 4.0


class _NormalSolver:
    """Solves ``G w = r`` for ``G = M M^T`` with ``r`` in the range of ``G``.

    Rank-deficient ``G`` (redundant constraints) is handled with a small
    diagonal shift plus iterative refinement, which converges on the range.
    """

    def __init__(self, M: sp.csr_matrix):
        self.M = M
        self.MT = M.T.tocsr()
        G = (M @ self.MT).tocsc()
        self.G = G
        m = G.shape[0]
        self.m = m
        diag = G.diagonal()
        self.shift = 0.0
        self._dense = None
        self._lu = None
        if m == 0:
            return
        if m <= 1500 and G.nnz > 0.05 * m * m:
            Gd = G.toarray()
            try:
                self._dense = ("chol", sla.cho_factor(Gd, lower=True, check_finite=False))
                if not self._accurate():
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                self.shift = 1e-11 * max(diag.max(), 1.0)
                self._dense = ("chol", sla.cho_factor(Gd + self.shift * np.eye(m), lower=True, check_finite=False))
            return
        try:
            self._lu = spla.splu(G, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options={"SymmetricMode": True})
            if not self._accurate():
                raise RuntimeError
        except RuntimeError:
            self.shift = 1e-11 * max(diag.max(), 1.0)
            Gs = (G + self.shift * sp.identity(m, format="csc")).tocsc()
            self._lu = spla.splu(Gs, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options={"SymmetricMode": True})

    def _raw(self, r):
        if self._dense is not None:
            return sla.cho_solve(self._dense[1], r, check_finite=False)
        return self._lu.solve(r)

    def _accurate(self) -> bool:
        rng = np.random.default_rng(12345)
        probe = self.G @ rng.standard_normal(self.m)
        w = self._raw(probe)
        if not np.all(np.isfinite(w)):
            return False
        return np.linalg.norm(self.G @ w - probe) <= 1e-9 * (1 + np.linalg.norm(probe))

    def solve(self, r: np.ndarray) -> np.ndarray:
        if self.m == 0:
            return np.zeros(0)
        w = self._raw(r)
        if self.shift > 0.0:
            nr = np.linalg.norm(r)
            for _ in range(20):
                res = r - self.G @ w
                if np.linalg.norm(res) <= 1e-14 * (1.0 + nr):
                    break
                w = w + self._raw(res)
        return w


class _Cones:
    """Projection onto the cone product in svec coordinates.

    PSD blocks of equal size are stacked so that one batched
    eigendecomposition serves all of them.
    """

    def __init__(self, program: ConicProgram):
        by_size: dict[int, list[int]] = {}
        nonneg = []
        for k, blk in enumerate(program.blocks):
            sl = program.block_slice(k)
            if blk.cone == "psd":
                by_size.setdefault(blk.size, []).append(sl.start)
            elif blk.cone == "nonneg":
                nonneg.append(np.arange(sl.start, sl.stop))
        self.nonneg = np.concatenate(nonneg) if nonneg else np.zeros(0, dtype=int)
        self.groups = []
        for n, starts in sorted(by_size.items()):
            iu, ju = np.triu_indices(n)
            scale = np.where(iu == ju, 1.0, np.sqrt(2.0))
            # full[b, i, j] = v[gather[b, i, j]] / full_scale[i, j]
            pos = np.zeros((n, n), dtype=int)
            pos[iu, ju] = np.arange(iu.size)
            pos[ju, iu] = np.arange(iu.size)
            full_scale = np.where(np.eye(n, dtype=bool), 1.0, np.sqrt(2.0))
            starts = np.asarray(starts)
            gather = starts[:, None, None] + pos[None, :, :]
            tri = starts[:, None] + np.arange(iu.size)[None, :]
            self.groups.append((n, gather, 1.0 / full_scale, tri, iu, ju, scale))

    def project(self, v: np.ndarray) -> np.ndarray:
        x = v.copy()
        if self.nonneg.size:
            x[self.nonneg] = np.maximum(v[self.nonneg], 0.0)
        for n, gather, inv_scale, tri, iu, ju, scale in self.groups:
            if n == 1:
                x[tri[:, 0]] = np.maximum(v[tri[:, 0]], 0.0)
                continue
            mats = v[gather] * inv_scale
            w, q = np.linalg.eigh(mats)
            w = np.maximum(w, 0.0)
            proj = (q * w[:, None, :]) @ q.transpose(0, 2, 1)
            x[tri] = proj[:, iu, ju] * scale
        return x

    def dual_distance(self, v: np.ndarray, free_mask: np.ndarray) -> float:
        """Distance from ``v`` to the dual cone (free components must vanish)."""
        p = self.project(v)
        p[free_mask] = v[free_mask]
        d = p - v
        d[free_mask] = v[free_mask]
        return float(np.linalg.norm(d))


def _svec_weights(program: ConicProgram) -> np.ndarray:
    w = np.ones(program.n_vars)
    for k, blk in enumerate(program.blocks):
        if blk.cone == "psd":
            iu, ju = np.triu_indices(blk.size)
            w[program.block_slice(k)] = np.where(iu == ju, 1.0, np.sqrt(2.0))
    return w


def _free_mask(program: ConicProgram) -> np.ndarray:
    mask = np.zeros(program.n_vars, dtype=bool)
    for k, blk in enumerate(program.blocks):
        if blk.cone == "free":
            mask[program.block_slice(k)] = True
    return mask


class _Anderson:
    def __init__(self, memory: int):
        self.memory = memory
        self.reset()

    def reset(self):
        self.dz: list[np.ndarray] = []
        self.dg: list[np.ndarray] = []
        self.prev_z = None
        self.prev_g = None

    def step(self, z: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.prev_z is not None:
            self.dz.append(z - self.prev_z)
            self.dg.append(g - self.prev_g)
            if len(self.dz) > self.memory:
                self.dz.pop(0)
                self.dg.pop(0)
        self.prev_z, self.prev_g = z, g
        if not self.dz:
            return z + g
        DG = np.stack(self.dg, axis=1)
        DZ = np.stack(self.dz, axis=1)
        gram = DG.T @ DG
        reg = 1e-10 * max(np.trace(gram), 1e-300)
        try:
            gamma = np.linalg.solve(gram + reg * np.eye(gram.shape[0]), DG.T @ g)
        except np.linalg.LinAlgError:
            return z + g
        return z + g - (DZ + DG) @ gamma


def solve(
    prog: ConicProgram,
    tol: float = 1e-7,
    max_iter: int = 20000,
    seed: int = 0,
    *,
    anderson: int = 8,
    time_limit: float | None = None,
    verbose: bool = False,
    backend: str = "admm",
) -> ConicSolution:
    """Solve ``min c.x s.t. A x = b, x in K`` to relative accuracy ``tol``.

    Parameters
    ----------
    prog : ConicProgram
    tol : float
        Bound on the relative primal infeasibility, dual infeasibility and
        duality gap required for ``status == "optimal"``.
    max_iter : int
        Iteration cap; on exhaustion the best iterate is returned with
        ``status == "max_iter"``.
    seed : int
        Seeds the perturbation of the starting point.
    backend : {"admm", "highs"}
        ``"admm"`` is the splitting method described above. ``"highs"``
        hands programs without PSD blocks to the HiGHS simplex/IPM through
        :func:`scipy.optimize.linprog`; it is much faster on large LPs.
        The same residual check decides ``status == "optimal"`` for both.

    Returns
    -------
    ConicSolution
        ``status`` is one of ``optimal``, ``max_iter`` or
        ``infeasible_detected``.
    """
    if not 1e-12 <= tol <= 1e-2:
        raise ValueError("tol must lie in [1e-12, 1e-2]")
    if backend == "highs":
        return _solve_highs(prog, tol, max_iter)
    if backend != "admm":
        raise ValueError(f"unknown backend {backend!r}")
    t_start = time.perf_counter()
    n = prog.n_vars
    m = prog.n_constraints
    sw = _svec_weights(prog)
    free = _free_mask(prog)
    cones = _Cones(prog)
    ow = sw * sw

    # svec coordinates: x_svec = x_entry * sw, forms divide by sw
    A = sp.csr_matrix(prog.A @ sp.diags(1.0 / sw))
    c = prog.c / sw
    b = prog.b.copy()

    row_norm = np.sqrt(np.asarray(A.multiply(A).sum(axis=1)).ravel())
    empty_rows = row_norm == 0
    if np.any(empty_rows & (np.abs(b) > 0)):
        return _infeasible(prog, "constraint with no coefficients and nonzero rhs", t_start)
    row_norm[empty_rows] = 1.0
    D = 1.0 / row_norm
    As = sp.diags(D) @ A
    As = sp.csr_matrix(As)
    bs = D * b
    sb = max(1.0, float(np.linalg.norm(bs)) / np.sqrt(max(m, 1)))
    sc = max(1.0, float(np.linalg.norm(c)) / np.sqrt(max(n, 1)))
    bs = bs / sb
    cs = c / sc

    normal = _NormalSolver(As)
    AsT = normal.MT

    # affine consistency: b must lie in range(A)
    x_ls = np.zeros(n)
    if m:
        x_ls = AsT @ normal.solve(bs)
        if np.linalg.norm(As @ x_ls - bs) > 1e-7 * (1.0 + np.linalg.norm(bs)):
            return _infeasible(prog, "affine constraints are inconsistent", t_start)

    rng = np.random.default_rng(seed)
    z = 1e-6 * rng.standard_normal(n)
    # the fixed point is z = x + t s; start with t matching the primal and dual scales
    step = INITIAL_STEP
    nx_ls, nc = float(np.linalg.norm(x_ls)), float(np.linalg.norm(cs))
    if INITIAL_STEP is None:
        step = nx_ls / nc if nx_ls > 0 and nc > 0 else 1.0
    aa = _Anderson(anderson) if anderson else None

    def fixed_point(zc, stepc):
        v = zc - stepc * cs
        w = normal.solve(As @ v - bs) if m else np.zeros(0)
        xh = v - AsT @ w if m else v
        v2 = 2.0 * xh - zc
        x = cones.project(v2)
        return x, xh, w, v2

    def unscale(x, w, v2, stepc):
        x_svec = x * sb
        y = D * (-w / stepc) * sc
        s_svec = (x - v2) / stepc * sc
        return x_svec / sw, y, s_svec * sw

    best = None
    status = "max_iter"
    it = 0
    last_adapt = 0
    stall_best = np.inf
    stall_count = 0
    x = xh = w = v2 = None
    z_plain = None
    prev_norm = np.inf
    for it in range(1, max_iter + 1):
        x, xh, w, v2 = fixed_point(z, step)
        g = RELAXATION * (x - xh)
        gnorm = float(np.linalg.norm(g))
        if z_plain is not None and gnorm > SAFEGUARD * prev_norm:
            # the mixed point made things worse: take the plain step instead
            z = z_plain
            aa.reset()
            x, xh, w, v2 = fixed_point(z, step)
            g = RELAXATION * (x - xh)
            gnorm = float(np.linalg.norm(g))
        prev_norm = gnorm
        z_plain = None

        if it % CHECK_EVERY == 0 or it == max_iter:
            xo, yo, so = unscale(x, w, v2, step)
            res = residuals(prog, xo, yo, so, weights=ow)
            score = max(res.values())
            if best is None or score < best[0]:
                best = (score, xo, yo, so, res)
            if verbose and it % 500 == 0:
                log.info("it %d step %.3g res %s", it, step, res)
            if score <= tol:
                status = "optimal"
                break
            if time_limit is not None and time.perf_counter() - t_start > time_limit:
                break
            if it % 200 == 0:
                cert = _certificate(prog, As, bs, cs, cones, free, x, xh, w, step, z)
                if cert is not None:
                    return _infeasible(prog, cert, t_start, it)
            ratio = max(res["primal"], 1e-300) / max(res["dual"], 1e-300)
            if it - last_adapt >= ADAPT_EVERY and not 1.0 / ADAPT_BAND <= ratio <= ADAPT_BAND:
                factor = min(max(np.sqrt(ratio), 1.0 / ADAPT_MAX), ADAPT_MAX)
                s_cur = (x - v2) / step
                step = step / factor
                # keep the current (x, s) pair as the fixed point of the new map
                z = x + step * s_cur
                if aa is not None:
                    aa.reset()
                last_adapt = it
                prev_norm = np.inf
                stall_best = np.inf
                stall_count = 0
                continue

        if aa is not None:
            # restart the mixing when it stops reducing the residual
            if gnorm < STALL_DECREASE * stall_best:
                stall_best = gnorm
                stall_count = 0
            else:
                stall_count += 1
                if stall_count > STALL_WINDOW:
                    aa.reset()
                    stall_best = gnorm
                    stall_count = 0
            z_plain = z + g
            z = aa.step(z, g)
        else:
            z = z + g

    if status == "optimal":
        xo, yo, so = unscale(x, w, v2, step)
        res = residuals(prog, xo, yo, so)
    else:
        _, xo, yo, so, res = best if best is not None else (None, *unscale(x, w, v2, step), None)
        if res is None:
            res = residuals(prog, xo, yo, so)
    return _make_solution(prog, status, xo, yo, so, res, it, t_start)


def _solve_highs(prog: ConicProgram, tol: float, max_iter: int) -> ConicSolution:
    from scipy.optimize import linprog

    if any(blk.cone == "psd" for blk in prog.blocks):
        raise ValueError("the highs backend only accepts NONNEG and FREE blocks")
    t_start = time.perf_counter()
    free = _free_mask(prog)
    bounds = np.column_stack([np.where(free, -np.inf, 0.0), np.full(prog.n_vars, np.inf)])
    feas = max(0.1 * tol, 1e-10)
    res = linprog(
        prog.c,
        A_eq=sp.csc_matrix(prog.A) if prog.n_constraints else None,
        b_eq=prog.b if prog.n_constraints else None,
        bounds=bounds,
        method="highs",
        options={"primal_feasibility_tolerance": feas, "dual_feasibility_tolerance": feas},
    )
    if res.status in (2, 3):
        return _infeasible(prog, res.message, t_start, int(getattr(res, "nit", 0)))
    if res.x is None:
        raise RuntimeError(f"HiGHS failed: {res.message}")
    x = np.asarray(res.x, dtype=float)
    y = np.asarray(res.eqlin.marginals, dtype=float) if prog.n_constraints else np.zeros(0)
    s = prog.c - prog.A.T @ y
    s[free] = 0.0
    s = np.where(free, s, np.maximum(s, 0.0))
    resid = residuals(prog, x, y, s)
    ok = res.status == 0 and max(resid.values()) <= tol
    sol = _make_solution(prog, "optimal" if ok else "max_iter", x, y, s, resid, int(res.nit), t_start)
    sol.info["backend"] = "highs"
    return sol


def _certificate(prog, As, bs, cs, cones, free, x, xh, w, step, z):
    """Infeasibility check on the divergence direction of ``z``.

    A primal infeasible program makes the multipliers grow along a ray
    ``y`` with ``b.y > 0`` and ``-A^T y`` in the dual cone; an unbounded
    one makes ``x`` grow along a recession direction ``d in K`` with
    ``A d = 0`` and ``c.d < 0``.
    """
    y = -w / step
    ny = np.linalg.norm(y)
    if ny > 1e6 * (1 + np.linalg.norm(bs)):
        yd = y / ny
        gain = float(bs @ yd)
        if gain > 0:
            dist = cones.dual_distance(-(As.T @ yd), free)
            if dist <= 1e-6 * gain:
                return "primal infeasibility certificate found"
    nx = np.linalg.norm(x)
    if nx > 1e6 * (1 + np.linalg.norm(bs)):
        d = x / nx
        drop = -float(cs @ d)
        if drop > 0 and np.linalg.norm(As @ d) <= 1e-6 * drop:
            return "dual infeasibility (unboundedness) certificate found"
    return None


def _infeasible(prog: ConicProgram, reason: str, t_start: float, it: int = 0) -> ConicSolution:
    n, m = prog.n_vars, prog.n_constraints
    x = np.zeros(n)
    y = np.zeros(m)
    s = np.zeros(n)
    res = residuals(prog, x, y, s)
    sol = _make_solution(prog, "infeasible_detected", x, y, s, res, it, t_start)
    sol.info["reason"] = reason
    return sol


def _make_solution(prog, status, x, y, s, res, it, t_start) -> ConicSolution:
    from .program import _offdiag_weights

    return ConicSolution(
        status=status,
        x=x,
        dual=y,
        s=s,
        primal=prog.unpack(x),
        slack=prog.unpack(s / _offdiag_weights(prog)),
        objective=prog.objective_value(x),
        dual_objective=float(prog.b @ y + prog.offset),
        residuals=res,
        iterations=it,
        info={"time": time.perf_counter() - t_start},
    )
