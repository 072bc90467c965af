import itertools

import numpy as np
import pytest

from otrelax.conic import exact_discrete_ot, solve
from otrelax.graph import Graph
from otrelax.marginal_relax import (
    ClusterMarginals,
    ClusterSpec,
    DiscreteMeasure,
    block_matrix,
    build_otmar,
    lower_bound,
    marginalize,
    separable_costs,
    variable_count,
)
from otrelax.models import IsingParams, ising_clusters, ising_costs, ising_measure, SPINS


def _spin_states(d):
    return np.array(list(itertools.product(SPINS, repeat=d)))


def _exact(px, py):
    s = _spin_states(px.d)
    cost = ((s[:, None, :] - s[None, :, :]) ** 2).sum(-1)
    return exact_discrete_ot(cost, ising_measure(px).weights, ising_measure(py).weights)


def _solve(asm, tol=1e-9):
    lp_only = not any(b.cone == "psd" for b in asm.program.blocks)
    return solve(asm.program, tol=tol, max_iter=50000, backend="highs" if lp_only else "admm")


def _program(px, py, omega, variant, ref=None):
    spec = ising_clusters(px.d, omega)
    ref = ref or Graph.path(spec.K)
    return build_otmar(ising_measure(px), ising_measure(py), spec, ref, variant, ising_costs(spec))


def test_marginalize_examples():
    p, q = np.array([0.2, 0.8]), np.array([0.1, 0.3, 0.6])
    m = DiscreteMeasure((2, 3), np.outer(p, q).ravel())
    np.testing.assert_allclose(marginalize(m, [0]).weights, p)
    np.testing.assert_allclose(marginalize(m, [0, 1]).weights, m.weights)
    np.testing.assert_allclose(marginalize(m, [1, 0]).table, np.outer(q, p))
    with pytest.raises(ValueError):
        marginalize(m, [])


def test_marginalize_ising_pair():
    J, h, beta = 0.7, 0.3, 0.9
    m = ising_measure(IsingParams(J, h, beta, 2))
    u = np.array(SPINS)
    w = np.exp(beta * J * np.outer(u, u) + beta * h * (u[:, None] + u[None, :]))
    np.testing.assert_allclose(marginalize(m, [0]).weights, w.sum(1) / w.sum())


def test_measure_validation():
    with pytest.raises(ValueError):
        DiscreteMeasure((2,), [0.5, 0.6])
    with pytest.raises(ValueError):
        DiscreteMeasure((2,), [1.5, -0.5])
    with pytest.raises(ValueError):
        DiscreteMeasure((3,), [0.5, 0.5])
    m = DiscreteMeasure((2, 2), [0.1, 0.2, 0.3, 0.4])
    back = DiscreteMeasure.from_json(m.to_json())
    assert back.axes == m.axes
    np.testing.assert_array_equal(back.weights, m.weights)


def test_spec_validation():
    with pytest.raises(ValueError):
        ClusterSpec(((0,), (0, 1)), ((0,), (1,)), (2, 2), (2, 2))
    with pytest.raises(ValueError):
        ClusterSpec(((0,), ()), ((0,), (1,)), (2,), (2, 2))


def test_variable_count_formulas():
    spec = ClusterSpec.uniform([(0,), (1,)], states=2)
    assert variable_count(spec, Graph.complete(2), "dnn") == 24
    for d in (3, 5):
        spec = ClusterSpec.uniform([(i,) for i in range(d)], states=2)
        assert variable_count(spec, Graph.complete(d), "dnn") == 16 * d * (d - 1) // 2 + 4 * d
        assert variable_count(spec, Graph.path(d), "lp") == 16 * (d - 1) + 4 * d
    spec = ClusterSpec.uniform([(0, 1, 2)], states=2)
    assert variable_count(spec, Graph.empty(1), "lp") == 64


@pytest.mark.parametrize("variant", ["lp", "dnn", "psd"])
def test_single_cluster_is_exact(variant):
    px, py = IsingParams(0.8, 0.1, 0.7, 3), IsingParams(-0.5, -0.2, 0.5, 3)
    asm = _program(px, py, 3, variant)
    assert _solve(asm).objective == pytest.approx(_exact(px, py)[0], abs=1e-7)


@pytest.mark.parametrize("variant", ["lp", "dnn", "psd"])
def test_identical_measures_cost_zero(variant):
    p = IsingParams(0.8, 0.1, 0.7, 4)
    assert _solve(_program(p, p, 1, variant)).objective == pytest.approx(0.0, abs=1e-6)


def test_ising_omega_ordering():
    px, py = IsingParams(1.2, 0.3, 0.8, 4), IsingParams(-0.9, -0.1, 0.6, 4)
    v1 = _solve(_program(px, py, 1, "lp")).objective
    v2 = _solve(_program(px, py, 2, "lp")).objective
    assert v1 <= v2 + 1e-8 <= _exact(px, py)[0] + 2e-8


def test_variant_ordering_and_lower_bound():
    px, py = IsingParams(1.2, 0.3, 0.8, 4), IsingParams(-0.9, -0.1, 0.6, 4)
    exact = _exact(px, py)[0]
    vals = {}
    for variant in ("lp", "dnn", "psd"):
        asm = _program(px, py, 1, variant)
        sol = _solve(asm)
        assert sol.status == "optimal"
        vals[variant] = sol.objective
        lb = lower_bound(asm, sol)
        assert lb <= sol.objective + 1e-7
        assert lb == pytest.approx(sol.objective, abs=1e-5)
    assert vals["lp"] <= vals["dnn"] + 1e-7
    assert vals["psd"] <= vals["dnn"] + 1e-7
    assert vals["dnn"] <= exact + 1e-7


def test_edge_monotonicity():
    px, py = IsingParams(1.0, 0.2, 0.6, 4), IsingParams(2.0, 0.2, 0.44, 4)
    vals = [_solve(_program(px, py, 1, "lp", g)).objective for g in (Graph.empty(4), Graph.path(4), Graph.complete(4))]
    assert vals[0] <= vals[1] + 1e-8 <= vals[2] + 2e-8


def test_blocks_per_variant():
    px, py = IsingParams(1.0, 0.2, 0.6, 3), IsingParams(-1.0, 0.2, 0.6, 3)
    lp = _program(px, py, 1, "lp")
    assert all(b.cone == "nonneg" for b in lp.program.blocks)
    dnn = _program(px, py, 1, "dnn")
    cones = [b.cone for b in dnn.program.blocks]
    assert cones.count("psd") == 1 and "nonneg" in cones
    psd = _program(px, py, 1, "psd")
    assert [b.cone for b in psd.program.blocks].count("psd") == 1


def test_true_coupling_is_feasible():
    # one- and two-cluster marginals of the exact plan satisfy every constraint
    px, py = IsingParams(0.9, 0.2, 0.7, 3), IsingParams(-0.6, 0.1, 0.5, 3)
    _, plan = _exact(px, py)
    # rows index x configurations and columns y configurations, so the table has
    # axes (x_0, x_1, x_2, y_0, y_1, y_2)
    joint = DiscreteMeasure((2,) * 6, plan.ravel())
    for variant in ("lp", "dnn", "psd"):
        asm = _program(px, py, 1, variant)
        x = np.zeros(asm.program.n_vars)
        for k, cols in enumerate(asm.entry_map["pi_k"]):
            x[cols] = marginalize(joint, [k, 3 + k]).weights
        for (i, j), cols in asm.entry_map["pi_ij"].items():
            x[cols.ravel()] = marginalize(joint, [i, 3 + i, j, 3 + j]).weights
        for name in [b.name for b in asm.program.blocks if b.cone == "psd"]:
            pik, pij = asm.couplings(x)
            M = block_matrix(asm.spec, [p.ravel() for p in pik], pij)
            x[asm.program.block_slice(asm.program.block_index(name))] = M[np.triu_indices(M.shape[0])]
            assert np.linalg.eigvalsh(M)[0] >= -1e-9
        r = asm.program.A @ x - asm.program.b
        assert np.abs(r).max() <= 1e-9


def test_psd_witness_on_solution():
    px, py = IsingParams(1.2, 0.3, 0.8, 4), IsingParams(-0.9, -0.1, 0.6, 4)
    asm = _program(px, py, 1, "dnn")
    sol = _solve(asm)
    pik, pij = asm.couplings(sol)
    M = block_matrix(asm.spec, [p.ravel() for p in pik], pij)
    assert np.linalg.eigvalsh(M)[0] >= -1e-7


def test_cluster_marginal_input_matches_measure_input():
    px, py = IsingParams(1.0, 0.2, 0.6, 4), IsingParams(-1.0, 0.2, 0.6, 4)
    spec = ising_clusters(4, 2)
    ref = Graph.path(spec.K)
    mx = ClusterMarginals.from_measure(ising_measure(px), spec.x_groups, ref.edges)
    my = ClusterMarginals.from_measure(ising_measure(py), spec.y_groups, ref.edges)
    a = build_otmar(mx, my, spec, ref, "lp", ising_costs(spec))
    b = build_otmar(ising_measure(px), ising_measure(py), spec, ref, "lp", ising_costs(spec))
    assert _solve(a).objective == pytest.approx(_solve(b).objective, abs=1e-10)


def test_cost_validation():
    spec = ClusterSpec.uniform([(0,), (1,)], states=2)
    m = DiscreteMeasure((2, 2), np.full(4, 0.25))
    with pytest.raises(ValueError):
        build_otmar(m, m, spec, Graph.path(2), "lp", [np.zeros((2, 2))])
    with pytest.raises(ValueError):
        build_otmar(m, m, spec, Graph.path(2), "lp", [np.zeros((2, 3)), np.zeros((2, 2))])
    with pytest.raises(ValueError):
        build_otmar(m, m, spec, Graph.path(2), "simplex", separable_costs(spec, [SPINS] * 2, [SPINS] * 2))
