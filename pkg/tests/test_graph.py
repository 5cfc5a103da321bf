import numpy as np
import pytest
from scipy import sparse

from conftest import random_graph
from lib import ConfigError, GraphSizeError
from lib.graph import (Graph, assign_weights, attention_matrix, auto_sigma, build_laplacian, gft_spectrum,
                       graph_update, knn_edges, partition_edges, sigma_from_means, surviving_edges, unet_inputs,
                       unit_weights, upper_pairs)


def edge_set(g):
    return {tuple(p) for p in g.upper_edges().tolist()}


def graph_from(pairs, weights, n):
    pairs = np.asarray(pairs)
    w = sparse.coo_matrix((weights, (pairs[:, 0], pairs[:, 1])), shape=(n, n)).tocsr()
    w = (w + w.T).tocsr()
    return Graph(n_nodes=n, edges=w.astype(bool), weights=w, gamma=np.ones(n, dtype=np.int64))


def test_knn_or_rule_on_a_line():
    g = knn_edges(np.array([[0.0], [1.0], [3.0]]), 1)
    assert edge_set(g) == {(0, 1), (1, 2)}


def test_knn_full_budget_is_complete():
    g = knn_edges(np.random.default_rng(0).normal(size=(6, 2)), 5)
    assert len(edge_set(g)) == 15


def test_knn_symmetric_and_degree_bounds():
    rng = np.random.default_rng(1)
    emb = rng.normal(size=(40, 3))
    gamma = rng.integers(1, 6, size=40)
    g = knn_edges(emb, gamma)
    assert (g.edges != g.edges.T).nnz == 0
    assert g.edges.diagonal().sum() == 0
    assert (g.degrees() >= gamma).all()
    assert np.array_equal(np.asarray(g.directed.sum(axis=1)).ravel(), gamma)


def test_knn_ties_go_to_lower_index():
    g = knn_edges(np.array([[0.0], [1.0], [-1.0]]), 1)
    assert g.directed[0].indices.tolist() == [1]


def test_knn_rejects_bad_budget():
    with pytest.raises(ConfigError):
        knn_edges(np.zeros((3, 2)), 0)


def test_partition():
    g = graph_from([[0, 1], [1, 2]], [1.0, 1.0], 3)
    part = partition_edges(g, np.array([1, 1, -1]))
    assert part.P.tolist() == [[0, 1]]
    assert part.Q.tolist() == [[1, 2]]
    assert len(partition_edges(g, np.array([1, 1, 1])).Q) == 0
    part = partition_edges(g, np.array([1, 0, -1]))
    assert len(part.P) == 0 and len(part.Q) == 0


def test_sigma_closed_form():
    assert sigma_from_means(1.0, 2.0) == pytest.approx(np.sqrt(3 / (2 * np.log(4))), abs=1e-12)
    assert sigma_from_means(2.0, 1.0) == 2.0


def margin(sigma, wp, wq):
    return np.exp(-wp ** 2 / (2 * sigma ** 2)) - np.exp(-wq ** 2 / (2 * sigma ** 2))


def test_sigma_matches_grid_search():
    rng = np.random.default_rng(2)
    for _ in range(50):
        wp = rng.uniform(0.1, 2.0)
        wq = wp + rng.uniform(0.05, 3.0)
        sigma = sigma_from_means(wp, wq)
        grid = np.arange(1e-4, 10.0, 1e-4)
        best = margin(grid, wp, wq).max()
        assert margin(sigma, wp, wq) >= best - 1e-6


def test_auto_sigma_empty_class_falls_back():
    emb = np.array([[0.0], [2.0], [6.0]])
    g = graph_from([[0, 1], [1, 2]], [1.0, 1.0], 3)
    part = partition_edges(g, np.array([1, 1, 1]))
    assert auto_sigma(emb, part, g) == pytest.approx(3.0)


def test_weights():
    emb = np.array([[0.0], [0.0], [2.0]])
    g = assign_weights(graph_from([[0, 1], [1, 2]], [1.0, 1.0], 3), emb, np.sqrt(2.0))
    assert g.weights[0, 1] == pytest.approx(1.0)
    assert g.weights[1, 2] == pytest.approx(np.exp(-1.0))
    assert g.weights[0, 2] == 0


def test_weights_monotone_in_distance():
    emb = np.array([[0.0], [1.0], [3.0]])
    g = assign_weights(knn_edges(emb, 2), emb, 1.0)
    assert g.weights[0, 1] > g.weights[0, 2]


def test_laplacian_two_nodes():
    lap = build_laplacian(graph_from([[0, 1]], [1.0], 2))
    assert np.array_equal(lap.laplacian.toarray(), [[1.0, -1.0], [-1.0, 1.0]])
    assert lap.d_max == 1.0


def test_laplacian_edgeless():
    g = Graph(n_nodes=3, edges=sparse.csr_matrix((3, 3), dtype=bool), weights=sparse.csr_matrix((3, 3)),
              gamma=np.ones(3, dtype=np.int64))
    lap = build_laplacian(g)
    assert not lap.laplacian.toarray().any()
    assert lap.d_max == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_laplacian_properties(seed):
    lap = build_laplacian(random_graph(60, seed))
    dense = lap.laplacian.toarray()
    assert np.allclose(dense, dense.T)
    assert np.abs(dense.sum(axis=1)).max() < 1e-9
    assert np.linalg.eigvalsh(dense).min() >= -1e-8
    x = np.random.default_rng(seed).normal(size=60)
    a = lap.adjacency.toarray()
    quad = 0.5 * (a * (x[:, None] - x[None, :]) ** 2).sum()
    assert x @ dense @ x == pytest.approx(quad)


def test_surviving_edges_rule():
    g = graph_from([[0, 1], [1, 2], [2, 3]], [0.9, 0.05, 0.9], 4)
    lap = build_laplacian(g)
    kept = surviving_edges(lap, np.array([0.5, 0.4, -0.3, 0.2]), beta=0.1)
    assert {tuple(p) for p in upper_pairs(kept).tolist()} == {(0, 1)}


def test_graph_update_keeps_budgets_when_everything_survives():
    emb = np.array([[0.0], [1.0], [2.0], [3.0]])
    g = assign_weights(knn_edges(emb, 1), emb, 10.0)
    lap = build_laplacian(g)
    updated = graph_update(g, lap, np.ones(4), emb, beta=0.1)
    assert np.array_equal(updated.gamma, g.degrees())
    assert edge_set(updated) == edge_set(g)


def test_graph_update_clamps_isolated_nodes():
    emb = np.array([[0.0], [1.0], [5.0]])
    g = graph_from([[0, 1], [1, 2]], [0.9, 0.9], 3)
    updated = graph_update(g, build_laplacian(g), np.array([1.0, 1.0, -1.0]), emb, beta=0.1)
    assert updated.gamma.tolist() == [1, 1, 1]


def test_graph_update_never_adds_opposite_edges():
    rng = np.random.default_rng(3)
    g = random_graph(50, 3)
    lap = build_laplacian(g)
    y = rng.uniform(-1, 1, size=50)
    kept = surviving_edges(lap, y, 0.1)
    s = np.sign(y)
    pairs = upper_pairs(kept)
    assert (s[pairs[:, 0]] == s[pairs[:, 1]]).all()


def test_attention_matrix():
    g = graph_from([[0, 1], [1, 2]], [1.0, 1.0], 3)
    att = attention_matrix(g, np.array([1.0, 1.0, -1.0]), np.array([0.5, 0.8, 0.0]), 0.6)
    assert att[0, 1] == 1 and att[1, 0] == 1
    assert att[1, 2] == 0


def test_attention_zero_threshold_unchanged_labels():
    g = graph_from([[0, 1]], [1.0], 2)
    y = np.array([1.0, -1.0])
    assert attention_matrix(g, y, y, 0.0)[0, 1] == 1


def test_unet_inputs_layout(path_graph):
    g = assign_weights(path_graph, np.array([[0.0], [1.0], [1.5], [4.0]]), 1.0)
    lap = build_laplacian(g)
    signal = np.array([0.5, -0.25, 1.0, 0.0])
    x = np.arange(4.0)[:, None]
    inputs = unet_inputs(x, lap, signal, k=2)
    assert inputs.shape == (4, 1 + 2 + 4)
    assert inputs[1, 1:3].tolist() == [0.0, -0.25]
    # node 1: strongest neighbour is 2 (closer), then 0
    assert inputs[1, 3:5].tolist() == [1.0, 0.25]
    assert inputs[1, 5:7].tolist() == [0.5, 0.25]
    # node 0 has one neighbour, repeated
    assert inputs[0, 3:5].tolist() == inputs[0, 5:7].tolist()


def test_spectrum_constant_signal():
    lap = build_laplacian(unit_weights(knn_edges(np.random.default_rng(4).normal(size=(20, 2)), 4)))
    spectrum = gft_spectrum(lap, np.ones(20))
    null = [m ** 2 for e, m in spectrum if abs(e) < 1e-9]
    rest = [m ** 2 for e, m in spectrum if abs(e) >= 1e-9]
    assert sum(null) == pytest.approx(20.0)
    assert sum(rest) == pytest.approx(0.0, abs=1e-12)


def test_spectrum_two_nodes():
    lap = build_laplacian(graph_from([[0, 1]], [0.5], 2))
    spectrum = gft_spectrum(lap, np.array([1.0, -1.0]))
    assert spectrum[1][0] == pytest.approx(1.0)
    assert spectrum[1][1] == pytest.approx(np.sqrt(2))
    assert spectrum[0][1] == pytest.approx(0.0, abs=1e-12)


def test_spectrum_parseval():
    lap = build_laplacian(random_graph(80, 6))
    y = np.random.default_rng(6).uniform(-1, 1, size=80)
    spectrum = gft_spectrum(lap, y)
    assert sum(m ** 2 for _, m in spectrum) == pytest.approx(float(y @ y), abs=1e-6)
    eigenvalues = [e for e, _ in spectrum]
    assert eigenvalues == sorted(eigenvalues)


def test_spectrum_size_guard():
    lap = build_laplacian(random_graph(30, 0))
    with pytest.raises(GraphSizeError):
        gft_spectrum(lap, np.zeros(30), max_nodes=10)
