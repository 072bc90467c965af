import math

import numpy as np
import pytest

from otrelax import gaussian_ot as got
from otrelax.conic import exact_discrete_ot, solve
from otrelax.graph import Graph
from otrelax.marginal_relax import ClusterSpec
from otrelax.models import dense_gaussian_instance, gaussian_instance
from otrelax.moment_relax import (
    Scaling,
    basis_size,
    basis_weights,
    build_basis,
    build_otmom,
    chordal_reduce,
    encode_cost,
    gaussian_moment_tables,
    gaussian_moments,
    graded_lex_exponents,
    moments_from_json,
    moments_to_json,
    pin_moments,
    sample_moment_table,
)


def singles(d):
    return ClusterSpec.uniform([(i,) for i in range(d)], states=1)


def gaussian_assembly(inst, n, ref, variant="psd", scaling=None, normalize=False):
    basis = build_basis(singles(inst.d), n, scaling)
    mx, my = gaussian_moment_tables(basis, inst.m1, inst.sigma1, inst.m2, inst.sigma2, ref)
    return build_otmom(basis, pin_moments(basis, mx, my, ref), ref, variant, normalize=normalize)


def witness_vector(asm, moments):
    """Program point holding the moment matrix of a coupling with the given moments (by id)."""
    basis = asm.basis
    weights = basis_weights(basis, asm.pinned) if asm.normalized else [np.ones(basis.size(k)) for k in range(basis.K)]
    values = {}
    for blk, clusters in zip(asm.program.blocks, asm.layout):
        rows = []
        for ci in clusters:
            row = []
            for cj in clusters:
                ids = basis.pair_ids(ci, cj)
                m = np.vectorize(lambda t: moments[int(t)], otypes=[float])(ids)
                row.append(weights[ci][:, None] * m * weights[cj][None, :])
            rows.append(np.hstack(row))
        values[blk.name] = np.vstack(rows)
    return asm.program.pack(values)


def joint_gaussian_moments(basis, mean, cov):
    """Moments of a Gaussian coupling on (x, y) in the basis' rescaled coordinates, keyed by id."""
    off, sc = basis.scaling.offset, basis.scaling.scale
    table = gaussian_moments((mean - off) / sc, cov / np.outer(sc, sc), [tuple(e) for e in basis.exponents])
    return {t: table[tuple(e)] for t, e in enumerate(basis.exponents)}


# ---------------------------------------------------------------- bases


def test_basis_sizes():
    assert build_basis(singles(1), 1).size(0) == 3
    assert build_basis(singles(1), 2).size(0) == 6
    spec = ClusterSpec.uniform([(0, 1)], states=1)
    assert build_basis(spec, 2).size(0) == 15
    assert basis_size(4, 2) == 15


def test_basis_order_is_graded_lex_with_constant_first():
    b = build_basis(singles(1), 2)
    np.testing.assert_array_equal(b.bases[0], [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]])
    e = graded_lex_exponents(3, 3)
    assert e.shape[0] == math.comb(6, 3)
    assert list(e.sum(1)) == sorted(e.sum(1))


def test_moment_ids_unique_and_shared():
    b = build_basis(singles(2), 2)
    assert len(b.moment_index) == b.n_moments
    ids = b.pair_ids(0, 0)
    # Hankel structure: x * x and 1 * x^2 share an id
    loc = {tuple(r): a for a, r in enumerate(b.bases[0])}
    assert ids[loc[(1, 0)], loc[(1, 0)]] == ids[0, loc[(2, 0)]]
    np.testing.assert_array_equal(b.pair_ids(1, 0), b.pair_ids(0, 1).T)


def test_degree_must_be_positive():
    with pytest.raises(ValueError):
        build_basis(singles(1), 0)


# ---------------------------------------------------------------- cost


def test_cost_single_variable():
    b = build_basis(singles(1), 1)
    (C,) = encode_cost(b)
    np.testing.assert_array_equal(C, [[0, 0, 0], [0, 1, -1], [0, -1, 1]])
    phi = b.evaluate(0, [2.0, -1.0])[0]
    assert phi @ C @ phi == pytest.approx(9.0)


@pytest.mark.parametrize("scaled", [False, True])
def test_cost_two_plus_two_cluster(scaled):
    spec = ClusterSpec.uniform([(0, 1)], states=1)
    rng = np.random.default_rng(0)
    scaling = None
    if scaled:
        scaling = Scaling.from_samples(spec, rng.normal(3, 5, (50, 2)), rng.normal(-1, 2, (50, 2)))
    b = build_basis(spec, 2, scaling)
    (C,) = encode_cost(b)
    for _ in range(10):
        z = rng.normal(size=4) * 3
        phi = b.evaluate(0, z)[0]
        assert phi @ C @ phi == pytest.approx(np.sum((z[:2] - z[2:]) ** 2), abs=1e-9)


def test_unpaired_clusters_rejected():
    spec = ClusterSpec(((0, 1),), ((0,),), (1, 1), (1,))
    with pytest.raises(ValueError):
        encode_cost(build_basis(spec, 1))


# ---------------------------------------------------------------- moments


def test_standard_normal_pins():
    b = build_basis(singles(1), 2)
    inst = got.GaussianInstance([0.0], [0.0], [[1.0]], [[1.0]])
    mx, my = gaussian_moment_tables(b, inst.m1, inst.sigma1, inst.m2, inst.sigma2, Graph.empty(1))
    assert mx[(1,)] == 0.0 and mx[(2,)] == 1.0 and mx[(4,)] == 3.0
    pinned = pin_moments(b, mx, my, Graph.empty(1))
    assert pinned[b.constant_id] == 1.0
    assert pinned[b.moment_index[(4, 0)]] == 3.0


def test_gaussian_moment_formulas():
    m, v = 0.7, 2.0
    t = gaussian_moments([m], [[v]], [(3,), (4,)])
    assert t[(3,)] == pytest.approx(m**3 + 3 * m * v)
    assert t[(4,)] == pytest.approx(m**4 + 6 * m**2 * v + 3 * v**2)
    cov = np.array([[1.0, 0.3, 0.2], [0.3, 2.0, -0.4], [0.2, -0.4, 1.5]])
    t = gaussian_moments(np.zeros(3), cov, [(2, 1, 1), (1, 1, 0)])
    # Isserlis: E[x1 x1 x2 x3] = S11 S23 + 2 S12 S13
    assert t[(2, 1, 1)] == pytest.approx(cov[0, 0] * cov[1, 2] + 2 * cov[0, 1] * cov[0, 2])
    assert t[(1, 1, 0)] == pytest.approx(0.3)


def test_dirac_pins():
    b = build_basis(singles(2), 2)
    a = np.array([[1.5, -2.0]])
    table = sample_moment_table(b, np.repeat(a, 3, axis=0), "x", Graph.path(2))
    for e, v in table.items():
        assert v == pytest.approx(np.prod(a[0] ** np.array(e)))


def test_empirical_second_moment():
    b = build_basis(singles(1), 2)
    xs = np.random.default_rng(0).normal(size=(100000, 1))
    table = sample_moment_table(b, xs, "x", Graph.empty(1))
    assert abs(table[(2,)] - 1.0) <= 0.02


def test_missing_moment_raises():
    b = build_basis(singles(1), 2)
    with pytest.raises(KeyError):
        pin_moments(b, {(1,): 0.0, (2,): 1.0}, {(1,): 0.0, (2,): 1.0, (3,): 0.0, (4,): 3.0}, Graph.empty(1))


def test_moment_json_round_trip():
    t = {(0, 1): 0.25, (2, 0): 1.5}
    assert moments_from_json(moments_to_json(t)) == t


# ---------------------------------------------------------------- programs


@pytest.mark.parametrize("seed", range(2))
def test_n1_matches_gsmom(seed):
    inst = dense_gaussian_instance(3, seed)
    asm = gaussian_assembly(inst, 1, Graph.complete(3))
    sol = solve(asm.program, tol=1e-9, max_iter=50000)
    ref = got.solve_gsmom(inst, Graph.complete(3), tol=1e-9)
    assert sol.objective == pytest.approx(ref.value, abs=1e-6)


@pytest.mark.parametrize("n", [1, 2])
def test_dirac_pair(n):
    a, b_ = np.array([1.0, -0.5]), np.array([0.2, 2.0])
    basis = build_basis(singles(2), n)
    ref = Graph.path(2)
    mx = sample_moment_table(basis, np.vstack([a, a]), "x", ref)
    my = sample_moment_table(basis, np.vstack([b_, b_]), "y", ref)
    asm = build_otmom(basis, pin_moments(basis, mx, my, ref), ref, "psd")
    sol = solve(asm.program, tol=1e-9, max_iter=50000)
    assert sol.objective == pytest.approx(np.sum((a - b_) ** 2), abs=1e-6)


def test_variant_ordering():
    inst = gaussian_instance(4, 1)
    ref = Graph.path(4)
    vals = {}
    for variant in ("sparse", "psd", "full"):
        sol = solve(gaussian_assembly(inst, 2, ref, variant).program, tol=1e-8, max_iter=50000)
        vals[variant] = sol.objective
    assert vals["sparse"] <= vals["full"] + 1e-6
    assert vals["psd"] <= vals["full"] + 1e-6
    assert vals["psd"] == pytest.approx(vals["full"], abs=1e-5)


def test_solution_consistency_and_gram_blocks():
    inst = gaussian_instance(3, 2)
    ref = Graph.path(3)
    asm = gaussian_assembly(inst, 2, ref)
    sol = solve(asm.program, tol=1e-8, max_iter=50000)
    M = sol.primal["M"]
    ids = np.vstack([np.hstack([asm.basis.pair_ids(i, j) for j in range(3)]) for i in range(3)])
    for mid in np.unique(ids):
        entries = M[ids == mid]
        assert np.ptp(entries) <= 1e-7 * (1 + np.abs(entries).max())
    for k in range(3):
        assert np.linalg.eigvalsh(asm.cluster_block(sol, k))[0] >= -1e-7


@pytest.mark.parametrize("variant", ["psd", "sparse", "full"])
@pytest.mark.parametrize("normalize", [False, True])
def test_feasible_witnesses(variant, normalize):
    inst = gaussian_instance(3, 4)
    ref = Graph.path(3)
    rng = np.random.default_rng(0)
    scaling = Scaling.from_samples(singles(3), rng.multivariate_normal(inst.m1, inst.sigma1, 200),
                                   rng.multivariate_normal(inst.m2, inst.sigma2, 200))
    asm = gaussian_assembly(inst, 2, ref, variant, scaling, normalize)
    A, b = got.gaussian_monge_map(inst)
    couplings = {
        "independent": (np.concatenate([inst.m1, inst.m2]),
                        np.block([[inst.sigma1, np.zeros((3, 3))], [np.zeros((3, 3)), inst.sigma2]])),
        "monge": (np.concatenate([inst.m1, inst.m2]),
                  np.block([[inst.sigma1, inst.sigma1 @ A.T], [A @ inst.sigma1, inst.sigma2]])),
    }
    for name, (mean, cov) in couplings.items():
        x = witness_vector(asm, joint_gaussian_moments(asm.basis, mean, cov))
        r = asm.program.A @ x - asm.program.b
        assert np.abs(r).max() <= 1e-7 * (1 + np.abs(asm.program.b).max())
        cost = asm.program.objective_value(x)
        expected = (np.sum((inst.m1 - inst.m2) ** 2) + np.trace(cov[:3, :3]) + np.trace(cov[3:, 3:])
                    - 2 * np.trace(cov[:3, 3:]))
        assert cost == pytest.approx(expected, rel=1e-7)
        if name == "monge":
            assert cost == pytest.approx(got.bures_w2(inst), rel=1e-7)


def test_lower_bound_against_discrete_exact():
    rng = np.random.default_rng(3)
    xs, ys = rng.normal(size=5), rng.normal(1.0, 2.0, size=4)
    p, q = rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(4))
    exact, _ = exact_discrete_ot((xs[:, None] - ys[None, :]) ** 2, p, q)
    basis = build_basis(singles(1), 3)
    ref = Graph.empty(1)
    mx = {e: float(p @ xs ** e[0]) for e in basis.required_exponents("x", ref)}
    my = {e: float(q @ ys ** e[0]) for e in basis.required_exponents("y", ref)}
    asm = build_otmom(basis, pin_moments(basis, mx, my, ref), ref, "psd")
    sol = solve(asm.program, tol=1e-9, max_iter=50000)
    assert sol.objective <= exact + 1e-6


def test_normalization_keeps_optimum():
    inst = gaussian_instance(3, 0)
    ref = Graph.path(3)
    plain = solve(gaussian_assembly(inst, 2, ref).program, tol=1e-8, max_iter=50000)
    normed = solve(gaussian_assembly(inst, 2, ref, normalize=True).program, tol=1e-8, max_iter=50000)
    assert normed.objective == pytest.approx(plain.objective, abs=1e-5)


def test_assembly_validation():
    inst = dense_gaussian_instance(2, 0)
    basis = build_basis(singles(2), 1)
    ref = Graph.path(2)
    mx, my = gaussian_moment_tables(basis, inst.m1, inst.sigma1, inst.m2, inst.sigma2, ref)
    pinned = pin_moments(basis, mx, my, ref)
    bad = dict(pinned)
    bad[basis.constant_id] = 2.0
    with pytest.raises(ValueError):
        build_otmom(basis, bad, ref, "psd")
    short = dict(pinned)
    short.pop(max(short))
    with pytest.raises(ValueError):
        build_otmom(basis, short, ref, "psd")
    with pytest.raises(ValueError):
        build_otmom(basis, pinned, Graph.empty(2), "psd")
    with pytest.raises(ValueError):
        build_otmom(basis, pinned, ref, "dense")


def test_pin_tags():
    inst = dense_gaussian_instance(2, 0)
    asm = gaussian_assembly(inst, 1, Graph.complete(2))
    tags = asm.program.tags
    for mid, row in asm.pin_rows.items():
        kind = asm.basis.kind(mid)
        assert tags[row] == ("marginal-y" if kind == "y" else "marginal-x")
    assert set(tags) == {"marginal-x", "marginal-y", "consistency"}


# ---------------------------------------------------------------- chordal reduction


def test_chordal_reduce_tree_blocks():
    inst = gaussian_instance(3, 0)
    red = chordal_reduce(gaussian_assembly(inst, 1, Graph.path(3)))
    assert [b.size for b in red.program.blocks] == [6, 6]
    assert red.reduced


def test_chordal_reduce_complete_is_identity():
    inst = dense_gaussian_instance(3, 0)
    asm = gaussian_assembly(inst, 1, Graph.complete(3))
    red = chordal_reduce(asm)
    assert [b.size for b in red.program.blocks] == [b.size for b in asm.program.blocks]
    np.testing.assert_array_equal(red.program.c, asm.program.c)


def test_chordal_reduce_keeps_optimum():
    inst = gaussian_instance(5, 3)
    asm = gaussian_assembly(inst, 1, Graph.path(5))
    full = solve(asm.program, tol=1e-9, max_iter=50000)
    red = solve(chordal_reduce(asm).program, tol=1e-9, max_iter=50000)
    assert red.objective == pytest.approx(full.objective, abs=1e-6)


def test_chordal_reduce_errors():
    inst = gaussian_instance(4, 0)
    with pytest.raises(ValueError):
        chordal_reduce(gaussian_assembly(inst, 1, Graph.cycle(4)))
    with pytest.raises(ValueError):
        chordal_reduce(gaussian_assembly(inst, 1, Graph.path(4), "sparse"))
