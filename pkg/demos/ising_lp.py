"""Lower bounds on the transport cost between two Ising chains for growing cluster sizes.

    python3 demos/ising_lp.py
"""

from otrelax.conic import solve
from otrelax.experiments import ising_exact_ot
from otrelax.graph import Graph
from otrelax.marginal_relax import build_otmar
from otrelax.models import IsingParams, ising_cluster_marginals, ising_clusters, ising_costs


def main():
    px, py = IsingParams(1.0, 0.2, 0.6, 8), IsingParams(1.0, 0.2, 0.2, 8)
    print(f"exact transport cost: {ising_exact_ot(px, py):.6f}")
    for omega in range(1, 9):
        spec = ising_clusters(px.d, omega)
        ref = Graph.path(spec.K)
        mx = ising_cluster_marginals(px, spec, ref.edges, "x")
        my = ising_cluster_marginals(py, spec, ref.edges, "y")
        asm = build_otmar(mx, my, spec, ref, "lp", ising_costs(spec))
        sol = solve(asm.program, tol=1e-9, backend="highs")
        print(f"omega={omega}  lp bound {sol.objective:.6f}")


if __name__ == "__main__":
    main()
