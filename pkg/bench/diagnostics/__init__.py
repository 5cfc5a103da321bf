import numpy as np

from lib.dataio import TRAIN


def mean_edge_weight_proportion(g, labels_clean):
    """Weight carried by opposite-label edges divided by the number of positive-weight edges."""
    pairs = g.upper_edges()
    if len(pairs) == 0:
        return 0.0
    w = np.asarray(g.weights[pairs[:, 0], pairs[:, 1]]).ravel()
    positive = w > 0
    if not positive.any():
        return 0.0
    labels_clean = np.asarray(labels_clean)
    opposite = labels_clean[pairs[:, 0]] != labels_clean[pairs[:, 1]]
    return float(w[opposite & positive].sum() / positive.sum())


def residual_noise(denoised, clean, train_mask):
    mask = np.asarray(train_mask, dtype=bool)
    if not mask.any():
        return 0.0
    return float(np.mean(np.sign(np.asarray(denoised)[mask]) != np.asarray(clean)[mask]))


def low_band_energy(spectrum, fraction=0.25):
    """Share of the spectral energy sitting on the lowest `fraction` of the eigenvalues."""
    if not spectrum:
        return 0.0
    magnitudes = np.array([m for _, m in spectrum])
    energy = magnitudes ** 2
    n_low = max(1, int(np.ceil(fraction * len(energy))))
    total = energy.sum()
    return float(energy[:n_low].sum() / total) if total > 0 else 0.0


class Diagnostic(object):
    name = None

    @staticmethod
    def compute(state, steps):
        raise NotImplementedError


def train_rows(state):
    return state.dataset.split[state.nodes] == TRAIN
