"""Command-line interface: experiment harness and file-based builders and solvers.

Experiment subcommands (``gaussian``, ``ising``, ``gl``) write a CSV and a
JSON summary and exit with status 0 iff every check passes. The builder
subcommands (``marginal``, ``moment``) assemble a conic program from JSON
inputs; ``solve`` solves a program file and ``map`` applies a potential file
to a CSV of samples.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import experiments as ex
from .conic import ConicProgram, solve
from .graph import Graph, graph_power
from .map_extract import PolynomialPotential, apply_map, extract_potentials
from .marginal_relax import ClusterSpec, DiscreteMeasure, build_otmar, lower_bound, separable_costs
from .gaussian_ot import GaussianInstance, bures_w2
from .moment_relax import build_basis, build_otmom, chordal_reduce, gaussian_moment_tables, pin_moments


def parse_int_list(text: str) -> list[int]:
    """Nonnegative integers from ``"1-8"``, ``"1,3,5"`` or a mix such as ``"1-3,6"``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = (int(v) for v in part.split("-", 1))
            if hi < lo:
                raise argparse.ArgumentTypeError(f"empty range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


# ---------------------------------------------------------------------------
# file operations
# ---------------------------------------------------------------------------


def solve_file(path: str, out: str | None = None, tol: float = 1e-8, max_iter: int = 50000, seed: int = 0,
               backend: str = "admm"):
    """Solve the program stored at ``path``; write the solution JSON to ``out`` if given."""
    with open(path) as fh:
        prog = ConicProgram.from_json(fh.read())
    sol = solve(prog, tol=tol, max_iter=max_iter, seed=seed, backend=backend)
    if out:
        with open(out, "w") as fh:
            json.dump(sol.to_dict(), fh)
    return sol


def read_samples(path: str) -> np.ndarray:
    """Samples from a CSV with one point per row; a non-numeric first row is treated as a header."""
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.strip().split(",")]
        skip = 0
    except ValueError:
        skip = 1
    return np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2))


def map_file(potential: str, samples: str, out: str | None = None) -> np.ndarray:
    """Apply ``x - grad(phi)(x) / 2`` to every row of a samples CSV."""
    with open(potential) as fh:
        phi = PolynomialPotential.from_json(fh.read())
    x = read_samples(samples)
    if x.shape[1] != phi.dim:
        raise ValueError(f"samples have {x.shape[1]} columns, the potential expects {phi.dim}")
    y = apply_map(phi, x)
    if out:
        np.savetxt(out, y, delimiter=",", fmt="%.17g")
    return y


def _reference_graph(name: str, K: int, h: int = 1) -> Graph:
    if name == "complete":
        return Graph.complete(K)
    if name == "path":
        return graph_power(Graph.path(K), h) if h > 1 else Graph.path(K)
    if name == "empty":
        return Graph.empty(K)
    raise ValueError(f"unknown reference graph {name!r}")


def _consecutive_groups(d: int, omega: int):
    if not 1 <= omega <= d:
        raise ValueError("cluster size must lie in 1..d")
    return tuple(tuple(range(s, min(s + omega, d))) for s in range(0, d, omega))


def build_marginal_file(mu_path: str, nu_path: str, omega: int, variant: str, reference: str = "path",
                        values=None):
    """Marginal relaxation between two full tables with clusters of ``omega`` consecutive coordinates.

    The cost is the squared difference of state values summed over
    coordinates; state ``t`` of every coordinate has value ``values[t]``
    (default ``t``).
    """
    with open(mu_path) as fh:
        mu = DiscreteMeasure.from_json(fh.read())
    with open(nu_path) as fh:
        nu = DiscreteMeasure.from_json(fh.read())
    if len(mu.axes) != len(nu.axes):
        raise ValueError("both measures need the same number of coordinates")
    groups = _consecutive_groups(len(mu.axes), omega)
    spec = ClusterSpec(groups, groups, mu.axes, nu.axes)

    def vals(m):
        return np.asarray(values[:m] if values is not None else np.arange(m), dtype=float)

    if values is not None and any(len(values) < a for a in mu.axes + nu.axes):
        raise ValueError("not enough state values for the largest axis")
    costs = separable_costs(spec, [vals(a) for a in mu.axes], [vals(a) for a in nu.axes])
    return build_otmar(mu, nu, spec, _reference_graph(reference, spec.K), variant, costs)


def build_moment_file(instance_path: str, degree: int, variant: str, reference: str = "complete", h: int = 1):
    """Moment relaxation of a Gaussian pair with single-coordinate clusters and analytic moments."""
    with open(instance_path) as fh:
        inst = GaussianInstance.from_json(fh.read())
    spec = ClusterSpec.uniform([(i,) for i in range(inst.d)], states=1)
    ref = _reference_graph(reference, inst.d, h)
    basis = build_basis(spec, degree)
    mx, my = gaussian_moment_tables(basis, inst.m1, inst.sigma1, inst.m2, inst.sigma2, ref)
    pinned = pin_moments(basis, mx, my, ref)
    if variant == "chordal":
        return inst, chordal_reduce(build_otmom(basis, pinned, ref, "psd"))
    return inst, build_otmom(basis, pinned, ref, variant)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, tol: float | None = None):
    p.add_argument("--tol", type=float, default=tol, help="solver tolerance")
    p.add_argument("--seed", type=int, default=None, help="random seed")
    p.add_argument("--out", default=None, help="output directory or file")
    p.add_argument("--max-iter", type=int, default=None, help="solver iteration cap")


def _experiment_flags(p: argparse.ArgumentParser):
    _common(p)
    p.add_argument("--config", default=None, help="JSON config file; flags override its parameters")
    p.add_argument("--workers", type=int, default=None, help="worker processes for sweep points")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otrelax", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gaussian", help="Gaussian second-moment relaxation experiments")
    _experiment_flags(g)
    g.add_argument("--mode", choices=["h-sweep", "exact", "vs-sampling"], default="h-sweep")
    g.add_argument("--d", type=parse_int_list, default=None, help="dimension (list for exact/vs-sampling)")
    g.add_argument("--h", type=parse_int_list, default=None, help="correlation radii, e.g. 1-8")
    g.add_argument("--seeds", type=parse_int_list, default=None)
    g.add_argument("--n", type=parse_int_list, default=None, help="sample sizes (vs-sampling)")

    i = sub.add_parser("ising", help="Ising chain marginal relaxation experiments")
    _experiment_flags(i)
    i.add_argument("--mode", choices=["table", "sweep"], default="table")
    i.add_argument("--d", type=parse_int_list, default=None)
    i.add_argument("--omega", type=parse_int_list, default=None, help="cluster sizes (table)")
    i.add_argument("--rows", type=parse_int_list, default=None, help="parameter rows 0-2 (table)")
    i.add_argument("--trials", type=int, default=None, help="random pairs per dimension (sweep)")

    gl = sub.add_parser("gl", help="Ginzburg-Landau generative moment check")
    _experiment_flags(gl)
    gl.add_argument("--d", type=int, default=None)
    gl.add_argument("--degree", type=parse_int_list, default=None, help="relaxation degrees, e.g. 4,6")
    gl.add_argument("--n-train", type=int, default=None)
    gl.add_argument("--n-test", type=int, default=None)

    m = sub.add_parser("marginal", help="build (and solve) a marginal relaxation from two measure files")
    _common(m, tol=1e-8)
    m.add_argument("mu")
    m.add_argument("nu")
    m.add_argument("--omega", type=int, default=1, help="consecutive coordinates per cluster")
    m.add_argument("--variant", choices=["lp", "dnn", "psd"], default="lp")
    m.add_argument("--reference", choices=["path", "complete", "empty"], default="path")
    m.add_argument("--values", type=lambda s: [float(v) for v in s.split(",")], default=None,
                   help="comma-separated state values shared by all coordinates")
    m.add_argument("--no-solve", action="store_true", help="only write the program")

    mo = sub.add_parser("moment", help="build (and solve) a moment relaxation for a Gaussian instance file")
    _common(mo, tol=1e-8)
    mo.add_argument("instance")
    mo.add_argument("--degree", type=int, default=1)
    mo.add_argument("--variant", choices=["psd", "sparse", "full", "chordal"], default="psd")
    mo.add_argument("--reference", choices=["path", "complete", "empty"], default="complete")
    mo.add_argument("--h", type=int, default=1, help="power of the path reference graph")
    mo.add_argument("--potential", default=None, help="write the extracted potential phi to this file")
    mo.add_argument("--no-solve", action="store_true", help="only write the program")

    s = sub.add_parser("solve", help="solve a conic program file")
    _common(s, tol=1e-8)
    s.add_argument("program")
    s.add_argument("--backend", choices=["admm", "highs"], default="admm")

    mp = sub.add_parser("map", help="apply a potential file to a samples CSV")
    mp.add_argument("potential")
    mp.add_argument("samples", nargs="?", default=None, help="samples CSV (or use --apply)")
    mp.add_argument("--apply", default=None, help="samples CSV to map")
    mp.add_argument("--out", default=None, help="output CSV (default: stdout)")
    return parser


def _experiment_config(args, experiment: str, params: dict) -> ex.ExperimentConfig:
    params = {k: v for k, v in params.items() if v is not None}
    if args.tol is not None:
        params["tol"] = args.tol
    if args.max_iter is not None and "max_iter" in ex.DEFAULTS[experiment]:
        params["max_iter"] = args.max_iter
    if args.seed is not None:
        key = "seeds" if "seeds" in ex.DEFAULTS[experiment] else "seed"
        if key in ex.DEFAULTS[experiment]:
            params[key] = [args.seed] if key == "seeds" else args.seed
    if args.config:
        cfg = ex.ExperimentConfig.from_file(args.config, **params)
        if cfg.experiment != experiment:
            raise ValueError(f"config describes {cfg.experiment!r}, not {experiment!r}")
        if args.out:
            cfg.out = args.out
        if args.workers:
            cfg.workers = args.workers
        return cfg
    return ex.ExperimentConfig(experiment, params, args.out, args.workers or 1)


def _run_experiment(cfg: ex.ExperimentConfig) -> int:
    result = ex.run(cfg)
    if not cfg.out:
        sys.stdout.write(result.to_csv())
    for name, ok in result.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {result.experiment}: {name}", file=sys.stderr)
    return 0 if result.passed else 1


def _scalar(lst):
    return lst[0] if lst is not None else None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as err:
        print(f"otrelax: error: {err}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "gaussian":
        if args.mode == "h-sweep":
            cfg = _experiment_config(args, "gaussian-h-sweep",
                                     {"d": _scalar(args.d), "h": args.h, "seeds": args.seeds})
        elif args.mode == "exact":
            cfg = _experiment_config(args, "gaussian-exact", {"d": args.d, "seeds": args.seeds})
        else:
            cfg = _experiment_config(args, "gaussian-vs-sampling",
                                     {"d": args.d, "seeds": args.seeds, "n": args.n, "h": _scalar(args.h)})
        return _run_experiment(cfg)
    if cmd == "ising":
        if args.mode == "table":
            cfg = _experiment_config(args, "ising-table",
                                     {"d": _scalar(args.d), "omega": args.omega, "rows": args.rows})
        else:
            cfg = _experiment_config(args, "ising-sweep", {"d": args.d, "trials": args.trials})
        return _run_experiment(cfg)
    if cmd == "gl":
        cfg = _experiment_config(args, "gl-generative", {"d": args.d, "degrees": args.degree,
                                                         "n_train": args.n_train, "n_test": args.n_test})
        return _run_experiment(cfg)
    if cmd == "marginal":
        asm = build_marginal_file(args.mu, args.nu, args.omega, args.variant, args.reference, args.values)
        return _finish_build(args, asm.program, lambda sol: {"lower_bound": lower_bound(asm, sol)})
    if cmd == "moment":
        inst, asm = build_moment_file(args.instance, args.degree, args.variant, args.reference, args.h)

        def extra(sol):
            info = {"bures_w2": bures_w2(inst)}
            if args.potential and asm.variant != "sparse":
                phi, _ = extract_potentials(sol, asm, require_optimal=False)
                with open(args.potential, "w") as fh:
                    fh.write(phi.to_json())
            return info

        return _finish_build(args, asm.program, extra)
    if cmd == "solve":
        sol = solve_file(args.program, args.out, args.tol, args.max_iter or 50000, args.seed or 0, args.backend)
        print(json.dumps({"status": sol.status, "objective": sol.objective, "residuals": sol.residuals}))
        return 0 if sol.optimal else 1
    if cmd == "map":
        samples = args.apply or args.samples
        if samples is None:
            raise ValueError("no samples file given (positional or --apply)")
        y = map_file(args.potential, samples, args.out)
        if not args.out:
            np.savetxt(sys.stdout, y, delimiter=",", fmt="%.17g")
        return 0
    raise ValueError(f"unknown command {cmd!r}")


def _finish_build(args, prog: ConicProgram, extra) -> int:
    """Write the program (``--out``) and, unless ``--no-solve``, solve it and print a JSON report."""
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(prog.to_json())
    if args.no_solve:
        print(json.dumps({"n_variables": prog.n_vars, "n_constraints": prog.n_constraints}))
        return 0
    lp_only = not any(b.cone == "psd" for b in prog.blocks)
    sol = solve(prog, tol=args.tol, max_iter=args.max_iter or 50000, seed=args.seed or 0,
                backend="highs" if lp_only else "admm")
    report = {"status": sol.status, "objective": sol.objective, "residuals": sol.residuals}
    report.update(extra(sol))
    print(json.dumps(report))
    return 0 if sol.optimal else 1


if __name__ == "__main__":
    sys.exit(main())
