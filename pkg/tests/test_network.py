import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnnlqr.network import (
    CostSpec,
    DisconnectedGraphError,
    DistributedSystem,
    Graph,
    build_support,
    generate_geometric_graph,
    generate_system,
    knn_graph,
    perturb_system,
    random_system,
    system_distance,
)
from gnnlqr.numerics import PreconditionError, RngStream, inf_norm, spectral_norm

from oracles import brute_knn_edges


def test_two_node_graph():
    g = generate_geometric_graph(2, 1, RngStream(0))
    assert g.edges == frozenset({(0, 1)})
    np.testing.assert_array_equal(build_support(g), [[0.0, 1.0], [1.0, 0.0]])


def test_knn_unit_square_corners():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.1], [1.0, 1.1]])
    g = knn_graph(pts, 1)
    assert set(g.edges) == brute_knn_edges(pts.tolist(), 1)


@pytest.mark.parametrize("seed", range(5))
def test_knn_matches_brute_force(seed):
    g = generate_geometric_graph(30, 5, RngStream(seed))
    assert set(g.edges) == brute_knn_edges(g.positions.tolist(), 5)


def test_knn_reproducible_and_min_degree():
    g1 = generate_geometric_graph(50, 5, RngStream(9))
    g2 = generate_geometric_graph(50, 5, RngStream(9))
    assert g1.edges == g2.edges
    assert g1.degrees().min() >= 5


def test_knn_precondition():
    with pytest.raises(PreconditionError):
        generate_geometric_graph(3, 3, RngStream(0))


def test_support_triangle():
    g = Graph(3, frozenset({(0, 1), (0, 2), (1, 2)}))
    s = build_support(g)
    np.testing.assert_allclose(s, (np.ones((3, 3)) - np.eye(3)) / 2)
    np.testing.assert_allclose(np.linalg.eigvalsh(s), [-0.5, -0.5, 1.0], atol=1e-14)


def test_support_random_graph():
    g = generate_geometric_graph(50, 5, RngStream(4))
    s = build_support(g)
    assert spectral_norm(s) == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_array_equal(s, s.T)
    assert np.all(np.diag(s) == 0)
    assert np.array_equal(s != 0, g.adjacency() != 0)


def test_support_rejects_disconnected():
    with pytest.raises(DisconnectedGraphError):
        build_support(Graph(4, frozenset({(0, 1), (2, 3)})))


def test_generate_system_norms_and_commutation():
    d = random_system(30, 5, 0.995, 1.0, RngStream(2))
    assert spectral_norm(d.sys_graph) == pytest.approx(0.995, abs=1e-8)
    assert spectral_norm(d.ctrl_graph) == pytest.approx(1.0, abs=1e-8)
    s, a, b = d.support, d.sys_graph, d.ctrl_graph
    for x, y in ((a, s), (b, s), (a, b)):
        assert np.linalg.norm(x @ y - y @ x) <= 1e-8
    np.testing.assert_array_equal(d.sys_feat, [[1.0]])
    np.testing.assert_array_equal(d.ctrl_feat, [[1.0]])


def test_generate_system_is_seeded():
    g = generate_geometric_graph(20, 5, RngStream(0))
    d1 = generate_system(g, rng=RngStream(1))
    d2 = generate_system(g, rng=RngStream(1))
    np.testing.assert_array_equal(d1.sys_graph, d2.sys_graph)


def test_system_distance():
    d = random_system(10, 3, rng=RngStream(0))
    assert system_distance(d, d) == 0.0
    from dataclasses import replace

    d2 = replace(d, sys_graph=d.sys_graph + 0.1 * np.eye(10))
    assert system_distance(d, d2) == pytest.approx(0.1, abs=1e-14)


def test_system_distance_componentwise_oracle():
    rng = np.random.default_rng(0)
    d = random_system(8, 3, rng=RngStream(1))
    d2 = DistributedSystem(*(m + 0.01 * rng.standard_normal(m.shape) for m in
                             (d.support, d.sys_graph, d.sys_feat, d.ctrl_graph, d.ctrl_feat)))
    parts = [np.linalg.norm(d.support - d2.support, 2), np.linalg.norm(d.sys_graph - d2.sys_graph, 2),
             np.abs(d.sys_feat - d2.sys_feat).sum(1).max(), np.linalg.norm(d.ctrl_graph - d2.ctrl_graph, 2),
             np.abs(d.ctrl_feat - d2.ctrl_feat).sum(1).max()]
    assert system_distance(d, d2) == pytest.approx(max(parts), rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_system_distance_symmetric_and_triangle(seed):
    d1 = random_system(6, 2, rng=RngStream(seed))
    d2 = perturb_system(d1, 0.05, RngStream(seed, 1))
    d3 = perturb_system(d2, 0.2, RngStream(seed, 2))
    assert system_distance(d1, d2) == system_distance(d2, d1)
    assert system_distance(d1, d3) <= system_distance(d1, d2) + system_distance(d2, d3) + 1e-9


@pytest.mark.parametrize("eps", [0.0, 1e-3, 1e-2, 0.01, 1e-1])
def test_perturb_hits_requested_distance(eps):
    d = random_system(20, 5, rng=RngStream(3))
    dh = perturb_system(d, eps, RngStream(4))
    assert system_distance(d, dh) == pytest.approx(eps, abs=1e-9)
    np.testing.assert_array_equal(dh.support, dh.support.T)
    np.testing.assert_array_equal(dh.sys_feat, d.sys_feat)
    if eps == 0:
        np.testing.assert_array_equal(dh.sys_graph, d.sys_graph)


def test_perturb_rejects_negative():
    d = random_system(6, 2, rng=RngStream(0))
    with pytest.raises(PreconditionError):
        perturb_system(d, -1.0, RngStream(0))


def test_system_json_roundtrip():
    d = random_system(7, 2, rng=RngStream(0))
    d2 = DistributedSystem.from_json(d.to_json())
    assert system_distance(d, d2) == 0.0
    assert d2.graph.edges == d.graph.edges


def test_cost_spec_validation():
    CostSpec.identity(2, 1)
    assert inf_norm(CostSpec.identity().q_mat) == 1.0
    with pytest.raises(PreconditionError):
        CostSpec(np.eye(1), np.zeros((1, 1)))
    with pytest.raises(PreconditionError):
        CostSpec(-np.eye(1), np.eye(1))
