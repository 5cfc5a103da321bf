import os
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import sparse
from scipy.spatial.distance import cdist

from lib import ConfigError, GraphSizeError, ShapeError, get_logger, write_json

logger = get_logger(__name__)

SPECTRUM_MAX_NODES = 4000


@dataclass(frozen=True)
class Graph:
    n_nodes: int
    edges: sparse.csr_matrix
    weights: sparse.csr_matrix
    gamma: np.ndarray
    directed: sparse.csr_matrix = None

    def upper_edges(self):
        return upper_pairs(self.edges)

    def degrees(self):
        return np.asarray(self.edges.sum(axis=1)).ravel().astype(np.int64)


@dataclass(frozen=True)
class LaplacianSystem:
    adjacency: sparse.csr_matrix
    degree: np.ndarray
    laplacian: sparse.csr_matrix
    d_max: float

    @property
    def n_nodes(self):
        return self.laplacian.shape[0]


@dataclass(frozen=True)
class EdgePartition:
    P: np.ndarray
    Q: np.ndarray


def upper_pairs(matrix):
    """(i, j) pairs with i < j of a symmetric sparse structure, sorted row-major."""
    upper = sparse.triu(matrix, k=1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    return np.column_stack([upper.row[order], upper.col[order]]).astype(np.int64)


def _symmetric(pairs, values, n):
    m = sparse.coo_matrix((values, (pairs[:, 0], pairs[:, 1])), shape=(n, n)).tocsr()
    m = (m + m.T).tocsr()
    m.sort_indices()
    return m


def edge_lengths(embeddings, pairs):
    if len(pairs) == 0:
        return np.zeros(0)
    diff = embeddings[pairs[:, 0]] - embeddings[pairs[:, 1]]
    return np.sqrt((diff ** 2).sum(axis=1))


def nearest(query, reference, k, exclude_self=False, chunk_size=512):
    """
    Indices of the k nearest reference rows (squared Euclidean) for every query row, ordered by distance with
    ties going to the lower index. With exclude_self query row i is reference row i and never its own neighbour.
    """
    query = np.asarray(query, dtype=float)
    reference = np.asarray(reference, dtype=float)
    n_ref = len(reference)
    if k < 1 or k > n_ref - int(exclude_self):
        raise ConfigError(f"cannot take {k} neighbours out of {n_ref - int(exclude_self)}")
    out = np.empty((len(query), k), dtype=np.int64)
    for start in range(0, len(query), chunk_size):
        d = cdist(query[start:start + chunk_size], reference, "sqeuclidean")
        if exclude_self:
            rows = np.arange(len(d))
            d[rows, rows + start] = np.inf
        thr = np.partition(d, k - 1, axis=1)[:, k - 1]
        for row in range(len(d)):
            cand = np.flatnonzero(d[row] <= thr[row])
            order = cand[np.argsort(d[row, cand], kind="stable")]
            out[start + row] = order[:k]
    return out


def knn_edges(embeddings, gamma):
    embeddings = np.asarray(embeddings, dtype=float)
    if embeddings.ndim != 2:
        raise ShapeError(f"embeddings must be a matrix, got shape {embeddings.shape}")
    n = len(embeddings)
    if n < 2:
        raise ShapeError("a graph needs at least two nodes")
    gamma = np.broadcast_to(np.asarray(gamma, dtype=np.int64), (n,)).copy()
    if (gamma < 1).any():
        raise ConfigError("degree budgets must be >= 1")
    gamma = np.minimum(gamma, n - 1)
    idx = nearest(embeddings, embeddings, int(gamma.max()), exclude_self=True)
    mask = np.arange(idx.shape[1])[None, :] < gamma[:, None]
    rows = np.nonzero(mask)[0]
    cols = idx[mask]
    directed = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    sym = directed.maximum(directed.T).tocsr()
    sym.sort_indices()
    return Graph(n_nodes=n, edges=sym.astype(bool), weights=sym.astype(float), gamma=gamma,
                 directed=directed.astype(bool))


def partition_edges(g, labels):
    pairs = g.upper_edges()
    s = np.sign(np.asarray(labels, dtype=float))
    si, sj = s[pairs[:, 0]], s[pairs[:, 1]]
    labeled = (si != 0) & (sj != 0)
    return EdgePartition(P=pairs[labeled & (si == sj)], Q=pairs[labeled & (si != sj)])


def sigma_from_means(omega_p, omega_q):
    """Kernel width maximising exp(-wp^2/2s^2) - exp(-wq^2/2s^2)."""
    if omega_q <= omega_p:
        return omega_p if omega_p > 0 else 1.0
    if omega_p == 0:
        return omega_q / 3.0
    return float(np.sqrt((omega_q ** 2 - omega_p ** 2) / (2.0 * np.log(omega_q ** 2 / omega_p ** 2))))


def auto_sigma(embeddings, part, g=None):
    if len(part.P) == 0 or len(part.Q) == 0:
        pairs = g.upper_edges() if g is not None else np.vstack([part.P.reshape(-1, 2), part.Q.reshape(-1, 2)])
        lengths = edge_lengths(embeddings, pairs)
        sigma = float(lengths.mean()) if len(lengths) and lengths.mean() > 0 else 1.0
        logger.warning("Empty edge class, sigma falls back to the mean edge length",
                       extra={'phase': "GRAPH", "P": len(part.P), "Q": len(part.Q), "sigma": sigma})
        return sigma
    omega_p = float(edge_lengths(embeddings, part.P).mean())
    omega_q = float(edge_lengths(embeddings, part.Q).mean())
    if omega_q <= omega_p:
        logger.debug("Opposite-label edges are not longer than same-label ones",
                     extra={'phase': "GRAPH", "omega_p": omega_p, "omega_q": omega_q})
    return sigma_from_means(omega_p, omega_q)


def assign_weights(g, embeddings, sigma):
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    pairs = g.upper_edges()
    if len(pairs) == 0:
        return replace(g, weights=sparse.csr_matrix((g.n_nodes, g.n_nodes)))
    d2 = edge_lengths(np.asarray(embeddings, dtype=float), pairs) ** 2
    w = np.maximum(np.exp(-d2 / (2.0 * sigma ** 2)), np.finfo(float).tiny)
    return replace(g, weights=_symmetric(pairs, w, g.n_nodes))


def unit_weights(g):
    return replace(g, weights=g.edges.astype(float))


def build_laplacian(g):
    a = g.weights.multiply(g.edges.astype(float)).tocsr()
    a = a.maximum(a.T).tocsr()
    a.eliminate_zeros()
    degree = np.asarray(a.sum(axis=1)).ravel()
    n = g.n_nodes
    lap = (sparse.spdiags(degree, 0, n, n) - a).tocsr()
    return LaplacianSystem(adjacency=a, degree=degree, laplacian=lap,
                           d_max=float(degree.max()) if n else 0.0)


def surviving_edges(lap, denoised, beta):
    """Edges whose endpoints share a nonzero denoised sign and whose adjacency exceeds beta."""
    pairs = upper_pairs(lap.adjacency)
    n = lap.n_nodes
    if len(pairs) == 0:
        return sparse.csr_matrix((n, n), dtype=bool)
    s = np.sign(np.asarray(denoised, dtype=float))
    a = np.asarray(lap.adjacency[pairs[:, 0], pairs[:, 1]]).ravel()
    si, sj = s[pairs[:, 0]], s[pairs[:, 1]]
    keep = (si != 0) & (si == sj) & (a > beta)
    return _symmetric(pairs[keep], np.ones(int(keep.sum())), n).astype(bool)


def graph_update(g, lap, denoised, embeddings_hu, beta=0.1):
    if not 0 < beta < 1:
        raise ConfigError(f"beta must lie in (0, 1), got {beta}")
    kept = surviving_edges(lap, denoised, beta)
    gamma = np.asarray(kept.sum(axis=1)).ravel().astype(np.int64)
    isolated = gamma == 0
    if isolated.any():
        logger.warning("Nodes without surviving edges get a budget of 1",
                       extra={'phase': "GRAPH", "nodes": int(isolated.sum())})
        gamma[isolated] = 1
    logger.debug("Graph update", extra={'phase': "GRAPH", "edges_before": len(upper_pairs(lap.adjacency)),
                                        "edges_kept": len(upper_pairs(kept)), "gamma_mean": float(gamma.mean())})
    return knn_edges(embeddings_hu, gamma)


def reliable(y_prev, y_cur, eps):
    return np.abs(np.asarray(y_prev, dtype=float) - np.asarray(y_cur, dtype=float)) <= eps


def attention_matrix(g, y_prev, y_cur, eps):
    """1 on every edge whose two endpoints moved by at most eps between the two signals, 0 elsewhere."""
    phi = reliable(y_prev, y_cur, eps)
    pairs = g.upper_edges()
    theta = phi[pairs[:, 0]] & phi[pairs[:, 1]]
    return _symmetric(pairs[theta], np.ones(int(theta.sum())), g.n_nodes)


def signal_tuples(signal):
    signal = np.asarray(signal, dtype=float)
    return np.column_stack([np.maximum(signal, 0.0), np.minimum(signal, 0.0)])


def unet_inputs(features, lap, signal, k=6):
    """
    Per node: the features, the (positive, negative) tuple of its denoised label and the tuple differences of its
    k strongest neighbours, strongest first.
    """
    adj = lap.adjacency
    tuples = signal_tuples(signal)
    n = adj.shape[0]
    picked = np.empty((n, k), dtype=np.int64)
    padded = 0
    for i in range(n):
        nbrs = adj.indices[adj.indptr[i]:adj.indptr[i + 1]]
        w = adj.data[adj.indptr[i]:adj.indptr[i + 1]]
        top = nbrs[np.lexsort((nbrs, -w))][:k]
        if len(top) < k:
            padded += 1
            fill = top[0] if len(top) else i
            top = np.concatenate([top, np.full(k - len(top), fill, dtype=np.int64)])
        picked[i] = top
    if padded:
        logger.warning("Nodes with fewer neighbours than required were padded",
                       extra={'phase': "UNET", "nodes": padded, "neighbours": k})
    diffs = (tuples[picked] - tuples[:, None, :]).reshape(n, 2 * k)
    return np.hstack([np.asarray(features, dtype=float), tuples, diffs])


def gft_spectrum(lap, signal, max_nodes=SPECTRUM_MAX_NODES):
    n = lap.n_nodes
    if n > max_nodes:
        raise GraphSizeError(f"dense eigendecomposition refused for {n} nodes (limit {max_nodes}); "
                             f"subsample the graph first")
    eigenvalues, eigenvectors = scipy.linalg.eigh(lap.laplacian.toarray())
    coefficients = eigenvectors.T @ np.asarray(signal, dtype=float)
    return list(zip(eigenvalues.tolist(), np.abs(coefficients).tolist()))


def write_graph(g, prefix):
    pairs = g.upper_edges()
    w = np.asarray(g.weights[pairs[:, 0], pairs[:, 1]]).ravel() if len(pairs) else np.zeros(0)
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    pd.DataFrame({"i": pairs[:, 0], "j": pairs[:, 1], "w": w}).to_csv(f"{prefix}.edges.csv", index=False)
    write_json(f"{prefix}.json", {"N": g.n_nodes, "edges": len(pairs), "gamma_min": int(g.gamma.min()),
                                  "gamma_mean": float(g.gamma.mean()), "gamma_max": int(g.gamma.max())})


def write_spectrum(spectra, path):
    """Writes {stage: [(eigenvalue, magnitude), ...]} as one long csv."""
    df = pd.concat([pd.DataFrame(s, columns=["eigenvalue", "magnitude"]).assign(stage=stage)
                    for stage, s in spectra.items()], ignore_index=True)[["stage", "eigenvalue", "magnitude"]]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df.to_csv(path, index=False)
    return df
