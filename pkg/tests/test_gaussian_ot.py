import numpy as np
import pytest

from otrelax import gaussian_ot as got
from otrelax.graph import Graph, graph_power
from otrelax.models import dense_gaussian_instance, gaussian_instance


def scalar(m1, v1, m2, v2):
    return got.GaussianInstance([m1], [m2], [[v1]], [[v2]])


def test_bures_examples():
    inst = gaussian_instance(4, 0)
    same = got.GaussianInstance(inst.m1, inst.m1, inst.sigma1, inst.sigma1)
    assert got.bures_w2(same) == pytest.approx(0.0, abs=1e-12)
    assert got.bures_w2(scalar(0.0, 1.0, 1.0, 4.0)) == pytest.approx(2.0)
    d1, d2 = np.array([1.0, 2.0, 0.5]), np.array([4.0, 0.3, 0.5])
    m = np.array([0.2, -1.0, 3.0])
    diag = got.GaussianInstance(m, np.zeros(3), np.diag(d1), np.diag(d2))
    assert got.bures_w2(diag) == pytest.approx(m @ m + np.sum((np.sqrt(d1) - np.sqrt(d2)) ** 2))


def test_bures_symmetric_and_nonnegative():
    inst = dense_gaussian_instance(5, 3)
    swapped = got.GaussianInstance(inst.m2, inst.m1, inst.sigma2, inst.sigma1)
    assert got.bures_w2(inst) >= 0
    assert got.bures_w2(inst) == pytest.approx(got.bures_w2(swapped), rel=1e-10)


def test_non_pd_covariance_rejected():
    with pytest.raises(ValueError):
        got.GaussianInstance([0.0, 0.0], [0.0, 0.0], np.diag([1.0, 0.0]), np.eye(2))


def test_declared_pattern_validated():
    inst = gaussian_instance(5, 1)
    assert inst.precision_pattern == Graph.path(5)
    with pytest.raises(ValueError):
        got.GaussianInstance(inst.m1, inst.m2, inst.sigma1, inst.sigma2, Graph.empty(5))


def test_instance_json_round_trip():
    inst = gaussian_instance(4, 2)
    back = got.GaussianInstance.from_json(inst.to_json())
    np.testing.assert_array_equal(back.sigma1, inst.sigma1)
    np.testing.assert_array_equal(back.m2, inst.m2)
    assert back.precision_pattern == inst.precision_pattern


def test_monge_map_examples():
    inst = gaussian_instance(3, 0)
    same = got.GaussianInstance(inst.m1, inst.m1, inst.sigma1, inst.sigma1)
    A, b = got.gaussian_monge_map(same)
    np.testing.assert_allclose(A, np.eye(3), atol=1e-10)
    np.testing.assert_allclose(b, 0, atol=1e-10)
    A, b = got.gaussian_monge_map(scalar(0.0, 1.0, 1.0, 4.0))
    np.testing.assert_allclose(A, [[2.0]])
    np.testing.assert_allclose(b, [1.0])


def test_monge_map_pushforward():
    inst = dense_gaussian_instance(4, 0)
    A, b = got.gaussian_monge_map(inst)
    np.testing.assert_allclose(A @ inst.sigma1 @ A.T, inst.sigma2, atol=1e-7)
    np.testing.assert_allclose(A @ inst.m1 + b, inst.m2, atol=1e-12)
    np.testing.assert_allclose(A, A.T, atol=1e-10)


def test_gsmom_constraint_count():
    inst = dense_gaussian_instance(3, 0)
    asm = got.build_gsmom(inst, Graph.complete(3))
    tags = asm.program.tags
    pattern = sum(t.startswith("marginal") for t in tags) - 2 * 3
    assert pattern == 2 * (3 + 3)
    assert asm.program.n_constraints == 2 * (3 + 3) + 1 + 2 * 3
    assert asm.program.blocks[0].size == 7


def test_gsmom_dimension_mismatch():
    with pytest.raises(ValueError):
        got.build_gsmom(gaussian_instance(4, 0), Graph.path(3))


def test_gsmom_scalar_exact():
    inst = scalar(0.0, 1.0, 1.0, 4.0)
    res = got.solve_gsmom(inst, Graph.empty(1), tol=1e-9)
    assert res.value == pytest.approx(2.0, abs=1e-6)
    assert res.lower_bound <= 2.0 + 1e-9


@pytest.mark.parametrize("seed", range(2))
def test_gsmom_exact_on_complete_graph(seed):
    inst = dense_gaussian_instance(3, seed)
    res = got.solve_gsmom(inst, Graph.complete(3), tol=1e-9)
    assert res.status == "optimal"
    assert res.value == pytest.approx(got.bures_w2(inst), abs=1e-6)


def test_clique_conversion_block_sizes():
    inst = gaussian_instance(6, 0)
    asm = got.build_gsmom(inst, Graph.path(6))
    prog, cmap = got.clique_convert(asm)
    assert [b.size for b in prog.blocks if b.cone == "psd"] == [5] * 5
    asm_c = got.build_gsmom(inst, Graph.complete(6))
    prog_c, _ = got.clique_convert(asm_c)
    assert [b.size for b in prog_c.blocks if b.cone == "psd"] == [13]


def test_clique_conversion_keeps_optimum():
    inst = gaussian_instance(6, 4)
    ref = Graph.path(6)
    conv = got.solve_gsmom(inst, ref, tol=1e-9, chordal=True)
    full = got.solve_gsmom(inst, ref, tol=1e-9, chordal=False)
    assert conv.value == pytest.approx(full.value, abs=1e-6)


def test_epsilon_examples():
    inst = gaussian_instance(5, 0)
    assert got.epsilon_bound(inst, Graph.complete(5)) == 0.0
    ident = got.GaussianInstance(np.zeros(5), np.ones(5), np.eye(5), np.eye(5))
    assert got.epsilon_bound(ident, Graph.path(5)) == pytest.approx(0.0, abs=1e-12)
    assert got.epsilon_bound(inst, Graph.path(5)) >= 0


def test_certificate_complete_graph_is_exact():
    inst = dense_gaussian_instance(4, 1)
    l1, l2, value = got.dual_certificate(inst, Graph.complete(4))
    assert value == pytest.approx(got.bures_w2(inst), abs=1e-8)
    same = got.GaussianInstance(inst.m1, inst.m1, inst.sigma1, inst.sigma1)
    assert got.dual_certificate(same, Graph.path(4))[2] == pytest.approx(0.0, abs=1e-8)


@pytest.mark.parametrize("h", [1, 2, 3])
def test_certificate_properties(h):
    inst = gaussian_instance(8, 2)
    ref = graph_power(Graph.path(8), h)
    l1, l2, value = got.dual_certificate(inst, ref)
    from otrelax.graph import in_pattern

    assert in_pattern(l1, ref) and in_pattern(l2, ref)
    block = np.block([[l1, -np.eye(8)], [-np.eye(8), l2]])
    assert np.linalg.eigvalsh(block)[0] >= -1e-8
    assert value >= got.bures_w2(inst) - got.epsilon_bound(inst, ref) - 1e-8


@pytest.mark.parametrize("h", [1, 2])
def test_sandwich_via_solver(h):
    inst = gaussian_instance(8, 3)
    ref = graph_power(Graph.path(8), h)
    res = got.solve_gsmom(inst, ref, tol=1e-8)
    w2 = got.bures_w2(inst)
    cert = got.dual_certificate(inst, ref)[2]
    assert w2 - got.epsilon_bound(inst, ref) - 1e-6 <= res.lower_bound <= w2 + 1e-6
    assert cert <= res.lower_bound + 1e-6
    assert res.lower_bound <= res.value + 1e-6


def test_monotone_in_reference_graph():
    inst = gaussian_instance(7, 5)
    vals = [got.solve_gsmom(inst, graph_power(Graph.path(7), h), tol=1e-8).lower_bound for h in (1, 2, 3)]
    assert vals[0] <= vals[1] + 1e-7 <= vals[2] + 2e-7
