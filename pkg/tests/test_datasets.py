import numpy as np
import pytest
from dataclasses import replace

from bench import error_rate, prepare_cell
from bench.diagnostics import low_band_energy, mean_edge_weight_proportion, residual_noise, train_rows
from bench.diagnostics.graph_quality import subsample_spectra
from dynglr import PipelineConfig, fit, predict, with_variant
from lib import ConfigError, read_config
from lib.dataio import TEST, TRAIN, load_csv, resolve_dataset_path
from lib.graph import unit_weights

pytestmark = pytest.mark.slow

REPEATS = 5


def dataset_path(name):
    try:
        return resolve_dataset_path(name)
    except ConfigError:
        pytest.skip(f"{name} dataset not available")


def fitted(name, noise, repeat, variant):
    config = read_config()
    ds, _, seeds = prepare_cell(name, noise, repeat, 0, config)
    cfg = replace(PipelineConfig.from_dict(config, name), variant=variant, seed=seeds["pipeline"])
    return ds, fit(ds, cfg)


def test_spambase_shape():
    ds = load_csv(dataset_path("spambase"))
    assert ds.n_nodes == 4597
    assert ds.n_features == 57


def test_phoneme_train_size():
    ds = load_csv(dataset_path("phoneme"))
    assert abs(int((ds.split == TRAIN).sum()) - 2162) <= 1


def test_spambase_degradation_below_baseline():
    dataset_path("spambase")
    degradation = {"DML-KNN": [], "G-12": []}
    for repeat in range(REPEATS):
        errors = {}
        for noise in (0.0, 0.25):
            ds, state = fitted("spambase", noise, repeat, "G-12")
            test_idx = ds.indices(TEST)
            for variant in degradation:
                pred = predict(state, test_idx, with_variant(state.config, variant))
                errors[(variant, noise)] = error_rate(pred, ds.clean_labels[test_idx])
        for variant in degradation:
            degradation[variant].append(errors[(variant, 0.25)] - errors[(variant, 0.0)])
    assert np.mean(degradation["G-12"]) < np.mean(degradation["DML-KNN"])


def test_spambase_residual_noise_after_first_pass():
    dataset_path("spambase")
    full, ranked = [], []
    for repeat in range(REPEATS):
        ds, state = fitted("spambase", 0.25, repeat, "G-12")
        ctx = state.context_for()
        clean = ds.clean_labels[state.nodes]
        full.append(residual_noise(ctx.iterations[1].signal, clean, train_rows(state)))
        predict(state, ds.indices(TEST)[:20], with_variant(state.config, "G-12s"))
        chosen = state.rank_samples[tuple(state.steps)]
        rows = np.searchsorted(state.nodes, chosen)
        ranked.append(residual_noise(ctx.signal[rows], clean[rows], np.ones(len(rows), dtype=bool)))
    assert np.mean(full) <= 0.20
    assert np.mean(ranked) <= np.mean(full)


@pytest.mark.parametrize("name", ["phoneme", "spambase"])
def test_graph_update_cleans_edges(name):
    dataset_path(name)
    before, after = [], []
    for repeat in range(REPEATS):
        ds, state = fitted(name, 0.25, repeat, "G-1232")
        ctx = state.context_for()
        clean = ds.clean_labels[state.nodes]
        before.append(mean_edge_weight_proportion(unit_weights(ctx.iterations[1].graph), clean))
        after.append(mean_edge_weight_proportion(unit_weights(ctx.updated_graph), clean))
    assert np.mean(after) < np.mean(before)


def test_phoneme_spectrum_concentrates():
    dataset_path("phoneme")
    first, last = [], []
    for repeat in range(REPEATS):
        _, state = fitted("phoneme", 0.25, repeat, "G-12312")
        spectra = subsample_spectra(state, state.steps, n_nodes=500, signal="clean", seed=repeat)
        stages = list(spectra)
        first.append(low_band_energy(spectra[stages[0]]))
        last.append(low_band_energy(spectra[stages[-1]]))
    assert np.mean(last) > np.mean(first)


def test_identical_manifests_identical_errors():
    dataset_path("spambase")
    outcomes = []
    for _ in range(2):
        ds, state = fitted("spambase", 0.1, 0, "G-12")
        outcomes.append(predict(state, ds.indices(TEST)))
    assert np.array_equal(outcomes[0], outcomes[1])
