import numpy as np

from bench.diagnostics import Diagnostic, low_band_energy, mean_edge_weight_proportion
from dynglr.steps import propagate
from lib import derive_seed
from lib.dataio import TRAIN, stratified_choice
from lib.graph import build_laplacian, gft_spectrum, unit_weights


class EdgeWeightProportion(Diagnostic):
    name = "edge_weight_proportion"

    @staticmethod
    def compute(state, steps):
        ctx = state.context_for(steps)
        clean = state.dataset.clean_labels[state.nodes]
        out = {f"rho_{r}": mean_edge_weight_proportion(it.graph, clean) for r, it in ctx.iterations.items()}
        if ctx.updated_graph is not None:
            out["rho_updated"] = mean_edge_weight_proportion(unit_weights(ctx.updated_graph), clean)
        return out


def subsample_spectra(state, steps, n_nodes=500, signal="clean", seed=0):
    """
    Runs the recipe on a stratified subsample of the train and validation nodes and returns the GFT spectra of
    the first (unweighted) and the last graph as {stage: [(eigenvalue, magnitude), ...]}.
    """
    ds = state.dataset
    nodes = stratified_choice(ds.noisy_labels, min(n_nodes, len(state.nodes)), derive_seed(seed, "spectrum"),
                              state.nodes)
    y0 = ds.noisy_labels[nodes] * (ds.split[nodes] == TRAIN)
    ctx = propagate(state, ds.features[nodes], y0, steps)
    first = ctx.iterations[0]
    last = ctx.last()
    values = {"clean": ds.clean_labels[nodes], "noisy": y0, "denoised": last.signal}[signal]
    values = np.asarray(values, dtype=float)
    spectra = {"r0": gft_spectrum(build_laplacian(unit_weights(first.graph)), values)}
    if ctx.r > 0:
        spectra[f"r{ctx.r}"] = gft_spectrum(last.laplacian, values)
    return spectra


class SpectralEnergy(Diagnostic):
    name = "spectral_energy"

    @staticmethod
    def compute(state, steps):
        spectra = subsample_spectra(state, steps, seed=state.config.seed)
        stages = list(spectra)
        return {"low_band_r0": low_band_energy(spectra[stages[0]]),
                "low_band_final": low_band_energy(spectra[stages[-1]])}
