"""Learn a transport map between two Gaussians and compare it with the closed form.

    python3 demos/gaussian_map.py
"""

import numpy as np

from otrelax import gaussian_ot as got
from otrelax.conic import solve
from otrelax.graph import Graph
from otrelax.map_extract import apply_map, extract_potentials
from otrelax.marginal_relax import ClusterSpec
from otrelax.models import dense_gaussian_instance
from otrelax.moment_relax import build_basis, build_otmom, gaussian_moment_tables, pin_moments


def main():
    inst = dense_gaussian_instance(3, seed=0)
    spec = ClusterSpec.uniform([(i,) for i in range(inst.d)], states=1)
    ref = Graph.complete(inst.d)
    basis = build_basis(spec, 1)
    mx, my = gaussian_moment_tables(basis, inst.m1, inst.sigma1, inst.m2, inst.sigma2, ref)
    asm = build_otmom(basis, pin_moments(basis, mx, my, ref), ref, "psd")
    sol = solve(asm.program, tol=1e-9)
    print(f"relaxation value {sol.objective:.8f}  closed form {got.bures_w2(inst):.8f}  ({sol.status})")

    phi, _ = extract_potentials(sol, asm)
    x = np.random.default_rng(1).multivariate_normal(inst.m1, inst.sigma1, 5)
    A, b = got.gaussian_monge_map(inst)
    print("max |T(x) - (Ax + b)| on 5 samples:", np.abs(apply_map(phi, x) - (x @ A.T + b)).max())


if __name__ == "__main__":
    main()
