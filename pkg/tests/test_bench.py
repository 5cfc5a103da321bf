from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest
from scipy import sparse

import bench
from bench import COLUMNS, ExperimentGrid, Report, cell_seeds, error_rate, run_grid
from bench.diagnostics import low_band_energy, mean_edge_weight_proportion, residual_noise
from bench.diagnostics.label_quality import SignalChange, signal_changes, write_signal_changes
from conftest import blobs
from lib import ConfigError, ShapeError
from lib.dataio import TEST, TRAIN, VAL
from lib.graph import Graph

SMALL_NET = {"layer_widths": [16, 8], "embedding_dim": 4, "lr_start": 0.02, "lr_end": 0.01, "epochs": 2}

CONFIG = {
    "defaults": {
        "graphs_per_epoch": 2,
        "triplets_per_graph": 32,
        "rank_sample_k": 60,
        "rank_sample_batches": 3,
        "rank_rounds": 1,
        "rank_val_nodes": 20,
        "gamma_candidates": [2, 4, 6],
        "nets": {"gnet": SMALL_NET, "wnet1": SMALL_NET, "unet": dict(SMALL_NET, layer_widths=[16, 4]),
                 "wnet2": dict(SMALL_NET, skip=True)},
    }
}


@pytest.fixture
def data_dir(tmp_path, monkeypatch):
    x, y = blobs()
    df = pd.DataFrame(x, columns=[f"f{i}" for i in range(x.shape[1])])
    df["label"] = y
    df.to_csv(tmp_path / "blobs.csv", index=False)
    monkeypatch.setenv("DYNGLR_DATA_DIR", str(tmp_path))
    return tmp_path


def weighted(pairs, weights, n):
    pairs = np.asarray(pairs)
    w = sparse.coo_matrix((weights, (pairs[:, 0], pairs[:, 1])), shape=(n, n)).tocsr()
    w = (w + w.T).tocsr()
    return Graph(n_nodes=n, edges=w.astype(bool), weights=w, gamma=np.ones(n, dtype=np.int64))


def test_error_rate():
    assert error_rate([1, -1], [1, -1]) == 0.0
    assert error_rate([1, -1], [-1, 1]) == 100.0
    assert error_rate([1, 1, 1, -1], [1, 1, 1, 1]) == 25.0
    with pytest.raises(ShapeError):
        error_rate([1], [1, 1])


def test_edge_weight_proportion():
    labels = np.array([1, 1, -1])
    assert mean_edge_weight_proportion(weighted([[0, 1]], [0.7], 3), labels) == 0.0
    assert mean_edge_weight_proportion(weighted([[0, 1], [1, 2]], [0.5, 0.8], 3), labels) == pytest.approx(0.4)
    assert mean_edge_weight_proportion(weighted([[0, 1], [0, 2], [1, 2]], [0.2, 0.3, 0.9], 3),
                                       np.ones(3)) == 0.0


def test_edge_weight_proportion_scales_with_weights():
    labels = np.array([1, -1, 1, -1])
    pairs = [[0, 1], [1, 2], [2, 3], [0, 2]]
    w = np.array([0.4, 0.9, 0.2, 0.6])
    base = mean_edge_weight_proportion(weighted(pairs, w, 4), labels)
    assert mean_edge_weight_proportion(weighted(pairs, 0.5 * w, 4), labels) == pytest.approx(0.5 * base)


def test_residual_noise():
    clean = np.array([1, -1] * 5)
    mask = np.ones(10, dtype=bool)
    assert residual_noise(clean * 0.7, clean, mask) == 0.0
    flipped = clean.copy()
    flipped[:1] *= -1
    assert residual_noise(flipped, clean, mask) == pytest.approx(0.1)
    clean = np.array([1, -1, 1, -1] * 25)
    noisy = clean.copy()
    noisy[:25] *= -1
    assert residual_noise(noisy, clean, np.ones(100, dtype=bool)) == pytest.approx(0.25)


def test_low_band_energy():
    assert low_band_energy([(0.0, 2.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]) == 1.0
    assert low_band_energy([(0.0, 1.0), (1.0, 1.0), (2.0, 1.0), (3.0, 1.0)]) == pytest.approx(0.25)


def test_seeds_shared_across_variants_and_split_shared_across_noise():
    a = cell_seeds(0, "blobs", 0.1, 3)
    assert a == cell_seeds(0, "blobs", 0.1, 3)
    b = cell_seeds(0, "blobs", 0.2, 3)
    assert a["split"] == b["split"]
    assert a["noise"] != b["noise"]


def test_grid_validation():
    with pytest.raises(ConfigError):
        ExperimentGrid(datasets=["blobs"], variants=["G-7"])
    with pytest.raises(ConfigError):
        ExperimentGrid(datasets=["blobs"], diagnostics=["nope"])
    grid = ExperimentGrid(datasets=["blobs"], variants=["G-12312", "DML-KNN", "G-12"], repeats=1)
    assert grid.variants == ["DML-KNN", "G-12", "G-12312"]


def test_grid_from_json(tmp_path):
    path = tmp_path / "grid.json"
    path.write_text('{"datasets": ["blobs"], "noise_levels": [0.0], "repeats": 2, "variants": ["G-2"]}')
    grid = ExperimentGrid.from_json(str(path))
    assert len(grid.cells()) == 2
    path.write_text('{"datasets": ["blobs"], "unknown_key": 1}')
    with pytest.raises(ConfigError):
        ExperimentGrid.from_json(str(path))


def test_run_grid_rows_and_resume(data_dir, tmp_path, monkeypatch):
    grid = ExperimentGrid(datasets=["blobs"], noise_levels=[0.0, 0.1], repeats=1, variants=["G-12"],
                          desk_scale=False)
    results = str(tmp_path / "results.csv")
    report = run_grid(grid, CONFIG, results)
    rows = report.rows
    assert len(rows) == 2
    assert (rows["status"] == "ok").all()
    assert list(rows.columns) == COLUMNS
    assert rows["error_rate"].between(0, 100).all()
    assert rows["rho_0"].notna().all()

    def fail(*args, **kwargs):
        raise AssertionError("completed cell recomputed")

    monkeypatch.setattr(bench, "run_group", fail)
    again = run_grid(grid, CONFIG, results)
    assert len(again.rows) == 2


def test_grid_shares_one_training_per_group(data_dir, tmp_path):
    grid = ExperimentGrid(datasets=["blobs"], noise_levels=[0.1], repeats=1, variants=["DML-KNN", "G-2", "G-12"],
                          desk_scale=False)
    report = run_grid(grid, CONFIG, str(tmp_path / "results.csv"))
    rows = report.rows.set_index("variant")
    assert (rows["status"] == "ok").all()
    assert rows["gamma0"].nunique() == 1
    assert rows["seed_split"].nunique() == 1
    table = report.error_table()
    assert [v for _, v in table.index] == ["DML-KNN", "G-2", "G-12"]


def test_missing_dataset_becomes_error_rows(tmp_path, monkeypatch):
    monkeypatch.setenv("DYNGLR_DATA_DIR", str(tmp_path))
    grid = ExperimentGrid(datasets=["absent"], noise_levels=[0.0], repeats=1, variants=["G-2", "DML-KNN"])
    report = run_grid(grid, CONFIG, str(tmp_path / "results.csv"))
    assert len(report.failed()) == 2
    assert report.failed()["error"].str.contains("ConfigError").all()


def test_report_rendering(tmp_path):
    rows = []
    for variant, err in (("G-12312", 5.0), ("DML-KNN", 9.0), ("G-12", 7.0)):
        for repeat in range(2):
            rows.append({"dataset": "blobs", "noise": 0.1, "repeat": repeat, "variant": variant, "status": "ok",
                         "error": "", "error_rate": err + repeat, "rho_0": 0.2, "train_s": 1.0, "predict_s": 0.5})
    rows.append({"dataset": "blobs", "noise": 0.1, "repeat": 0, "variant": "G-2", "status": "error",
                 "error": "SamplingError: boom"})
    path = tmp_path / "results.csv"
    pd.DataFrame(rows, columns=COLUMNS).to_csv(path, index=False)
    report = Report.from_csv(str(path))
    table = report.error_table()
    assert [v for _, v in table.index] == ["DML-KNN", "G-12", "G-12312"]
    assert table.loc[("blobs", "G-12"), 0.1] == pytest.approx(7.5)
    text = report.to_markdown()
    assert "| blobs | DML-KNN | 9.50 |" in text
    assert "Failed cells: 1" in text
    assert "rho_0" in text
    csv = report.to_csv(str(tmp_path / "table.csv"))
    assert csv.splitlines()[0].startswith("dataset,variant")


def test_report_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        Report.from_csv(str(tmp_path / "none.csv"))


def change_state():
    """Five nodes: 0-2 train (node 1 flipped), 3 validation, 4 outside the state; two GLR iterations."""
    dataset = SimpleNamespace(split=np.array([TRAIN, TRAIN, TRAIN, VAL, TEST]),
                              clean_labels=np.array([1, 1, -1, -1, 1]), noisy_labels=np.array([1, -1, -1, -1, 0]))
    signals = {0: [1.0, -1.0, -1.0, 0.0], 1: [0.9, -0.2, -0.8, -0.5], 2: [0.8, 0.3, -0.8, -0.6]}
    ctx = SimpleNamespace(iterations={r: SimpleNamespace(signal=np.array(s)) for r, s in signals.items()})
    return SimpleNamespace(dataset=dataset, nodes=np.arange(4), context_for=lambda steps=None: ctx)


def test_signal_changes_split_clean_and_noisy():
    changes = signal_changes(change_state(), None)
    assert len(changes) == 6
    r1 = changes[changes["iteration"] == 1].set_index("node")
    assert r1.loc[1, "change"] == pytest.approx(0.8)
    assert not r1.loc[1, "clean"]
    assert r1.loc[0, "clean"] and r1.loc[2, "clean"]
    row = SignalChange.compute(change_state(), None)
    assert row["change_noisy_r1"] == pytest.approx(0.8)
    assert row["change_clean_r1"] == pytest.approx(0.15)
    assert row["change_noisy_r2"] == pytest.approx(0.5)
    assert row["change_clean_r2"] == pytest.approx(0.05)


def test_change_density_integrates_to_one(tmp_path):
    changes = signal_changes(change_state(), None)
    density = write_signal_changes(changes, str(tmp_path / "density.csv"), bins=4)
    assert list(density.columns) == ["iteration", "clean", "bin_left", "bin_right", "density"]
    for _, group in density.groupby(["iteration", "clean"]):
        width = group["bin_right"] - group["bin_left"]
        assert (group["density"] * width).sum() == pytest.approx(1.0)
    assert len(pd.read_csv(tmp_path / "density.csv")) == len(density)


def test_grid_epsilon_axis_validation():
    grid = ExperimentGrid(datasets=["blobs"], variants=["G-12312"], epsilons=[[0.6, 0.15], [0.3, 0.15]], repeats=1,
                          noise_levels=[0.1])
    assert list(grid.epsilon_settings()) == ["0.6/0.15", "0.3/0.15"]
    assert len(grid.cells()) == 2
    with pytest.raises(ConfigError):
        ExperimentGrid(datasets=["blobs"], epsilons=[[0.6, -0.1]])
    with pytest.raises(ConfigError):
        ExperimentGrid(datasets=["blobs"], epsilons=[])


def test_grid_epsilon_sweep_rows(data_dir, tmp_path, monkeypatch):
    grid = ExperimentGrid(datasets=["blobs"], noise_levels=[0.1], repeats=1, variants=["G-12"],
                          epsilons=[[0.6, 0.15], [0.2, 0.15]], desk_scale=False)
    results = str(tmp_path / "results.csv")
    report = run_grid(grid, CONFIG, results)
    assert sorted(report.rows["epsilon"]) == ["0.2/0.15", "0.6/0.15"]
    assert (report.rows["status"] == "ok").all()
    assert report.keys() == ["dataset", "variant", "epsilon"]
    assert len(report.error_table()) == 2
    assert "| blobs | G-12 | 0.2/0.15 |" in report.to_markdown()

    monkeypatch.setattr(bench, "run_group", lambda *args, **kwargs: pytest.fail("completed cell recomputed"))
    assert len(run_grid(grid, CONFIG, results).rows) == 2


def test_report_runtime_section(tmp_path):
    rows = [{"dataset": "blobs", "noise": 0.0, "repeat": r, "variant": "G-2", "status": "ok", "error": "",
             "error_rate": 5.0, "train_s": 2.0 + r, "predict_s": 0.25} for r in range(2)]
    report = Report(pd.DataFrame(rows, columns=COLUMNS))
    assert report.runtime_table().loc[("blobs", "G-2"), "train_s"] == pytest.approx(2.5)
    text = report.to_markdown()
    assert "## Runtime (s)" in text
    assert "| blobs | G-2 | 2.50 | 0.25 |" in text
