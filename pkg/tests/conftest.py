import numpy as np
import pandas as pd
import pytest
from scipy import sparse

from lib.dataio import NoiseSpec, inject_label_noise, load_csv
from lib.graph import Graph, assign_weights, knn_edges
from lib.metricnet import NetConfig


def blobs(n=300, n_features=3, shift=0.8, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.where(np.arange(n) % 2 == 0, 1, 0)
    centres = np.where(labels[:, None] == 1, shift, -shift)
    return centres + rng.normal(size=(n, n_features)), labels


@pytest.fixture
def blobs_csv(tmp_path):
    x, y = blobs()
    df = pd.DataFrame(x, columns=[f"f{i}" for i in range(x.shape[1])])
    df["label"] = y
    path = tmp_path / "blobs.csv"
    df.to_csv(path, index=False)
    return str(path)


@pytest.fixture
def blobs_dataset(blobs_csv):
    ds = load_csv(blobs_csv, seed=3, name="blobs")
    return inject_label_noise(ds, NoiseSpec(0.1, 11))


def small_net(**kwargs):
    values = dict(layer_widths=[16, 8], embedding_dim=4, lr_start=0.02, lr_end=0.01, epochs=2)
    values.update(kwargs)
    return NetConfig(**values)


def random_graph(n, seed, gamma_range=(2, 8), weighted=True):
    rng = np.random.default_rng(seed)
    emb = rng.normal(size=(n, 3))
    g = knn_edges(emb, int(rng.integers(gamma_range[0], gamma_range[1] + 1)))
    if weighted:
        g = assign_weights(g, emb, float(rng.uniform(0.5, 2.0)))
    return g


@pytest.fixture
def path_graph():
    """0 - 1 - 2 - 3 with unit weights."""
    pairs = np.array([[0, 1], [1, 2], [2, 3]])
    m = sparse.coo_matrix((np.ones(3), (pairs[:, 0], pairs[:, 1])), shape=(4, 4)).tocsr()
    m = (m + m.T).tocsr()
    return Graph(n_nodes=4, edges=m.astype(bool), weights=m.astype(float), gamma=np.ones(4, dtype=np.int64))
