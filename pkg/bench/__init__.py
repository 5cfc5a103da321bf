import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from jinja2 import Environment, FileSystemLoader
from joblib import Parallel, delayed

from bench.diagnostics.graph_quality import EdgeWeightProportion, SpectralEnergy
from bench.diagnostics.label_quality import ResidualNoise, SignalChange
from dynglr import PipelineConfig, dataset_options, fit, predict, with_variant
from dynglr.steps import required_nets
from dynglr.variants import get_variant, ladder_position
from lib import ConfigError, ShapeError, append_rows, derive_seed, get_logger, read_json
from lib.dataio import TEST, NoiseSpec, inject_label_noise, load_csv, resolve_dataset_path

logger = get_logger(__name__)

diagnostics = [EdgeWeightProportion, ResidualNoise, SignalChange, SpectralEnergy]

COLUMNS = ["dataset", "noise", "repeat", "variant", "epsilon", "status", "error", "error_rate", "seed_split",
           "seed_noise", "seed_pipeline", "gamma0", "train_s", "predict_s", "rho_0", "rho_1", "rho_updated", "rho_2",
           "residual_r1", "residual_r2", "residual_rank", "low_band_r0", "low_band_final", "change_clean_r1",
           "change_noisy_r1", "change_clean_r2", "change_noisy_r2"]

DEFAULT_EPSILON = "default"

TEMPLATES_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "templates")


@dataclass
class ExperimentGrid:
    datasets: list
    noise_levels: list = field(default_factory=lambda: [0.0, 0.05, 0.10, 0.15, 0.20, 0.25])
    repeats: int = 20
    variants: list = field(default_factory=lambda: ["DML-KNN", "G-12312"])
    base_seed: int = 0
    desk_scale: bool = True
    diagnostics: list = field(default_factory=lambda: ["edge_weight_proportion", "residual_noise"])
    epsilons: list = None

    def __post_init__(self):
        if not self.datasets or not self.noise_levels or not self.variants or self.repeats < 1:
            raise ConfigError("grid needs datasets, noise levels, variants and at least one repeat")
        for v in self.variants:
            get_variant(v)
        unknown = set(self.diagnostics) - {d.name for d in diagnostics}
        if unknown:
            raise ConfigError(f"unknown diagnostics {sorted(unknown)}")
        if self.epsilons is not None:
            if not self.epsilons:
                raise ConfigError("epsilons needs at least one threshold pair")
            for eps in self.epsilons:
                if not 1 <= len(eps) <= 2 or min(eps) < 0:
                    raise ConfigError(f"attention thresholds {eps} must be one or two non-negative values")
        self.variants = sorted(self.variants, key=ladder_position)

    @classmethod
    def from_json(cls, path):
        try:
            return cls(**read_json(path))
        except TypeError as e:
            raise ConfigError(f"invalid grid file {path}: {e}")

    def epsilon_settings(self):
        """{label: thresholds}; the label is stored in the results so resumed grids match their cells."""
        if self.epsilons is None:
            return {DEFAULT_EPSILON: None}
        return {epsilon_label(eps): tuple(float(e) for e in eps) for eps in self.epsilons}

    def cells(self):
        return [(d, float(p), r, v, e) for d in self.datasets for p in self.noise_levels for r in range(self.repeats)
                for e in self.epsilon_settings() for v in self.variants]


def epsilon_label(eps):
    return DEFAULT_EPSILON if eps is None else "/".join(f"{float(e):g}" for e in eps)


def error_rate(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} differs from truth shape {truth.shape}")
    if len(truth) == 0:
        return 0.0
    return 100.0 * float(np.mean(pred != truth))


def cell_seeds(base_seed, dataset, noise, repeat):
    return {"split": derive_seed(base_seed, dataset, repeat, "split"),
            "noise": derive_seed(base_seed, dataset, float(noise), repeat, "noise"),
            "pipeline": derive_seed(base_seed, dataset, float(noise), repeat, "pipeline")}


def prepare_cell(dataset, noise, repeat, base_seed, config, desk_scale=True):
    seeds = cell_seeds(base_seed, dataset, noise, repeat)
    opts = dataset_options(config, dataset)
    ds = load_csv(resolve_dataset_path(dataset), seed=seeds["split"], label_map=opts["label_map"], name=dataset,
                  max_nodes=opts["desk_max_nodes"] if desk_scale else None)
    noise_spec = NoiseSpec(float(noise), seeds["noise"])
    return inject_label_noise(ds, noise_spec), noise_spec, seeds


def _training_variant(variants):
    """The variant whose recipe trains every net the others need."""
    return max((get_variant(v)[0]["name"] for v in variants),
               key=lambda name: (len(required_nets(get_variant(name)[0]["steps"])), ladder_position(name)))


def run_group(dataset, noise, repeat, variants, base_seed, config, desk_scale=True, diagnostic_names=(),
              epsilon=None):
    """
    One (dataset, noise, repeat, epsilon) group: a single training run shared by every requested variant.
    `epsilon` overrides the attention thresholds of the dataset config.
    """
    seeds = cell_seeds(base_seed, dataset, noise, repeat)
    base = {"dataset": dataset, "noise": float(noise), "repeat": repeat, "epsilon": epsilon_label(epsilon),
            "seed_split": seeds["split"], "seed_noise": seeds["noise"], "seed_pipeline": seeds["pipeline"]}
    start = time.time()
    try:
        ds, _, _ = prepare_cell(dataset, noise, repeat, base_seed, config, desk_scale)
        cfg = PipelineConfig.from_dict(config, dataset)
        cfg = replace(cfg, variant=_training_variant(variants), seed=seeds["pipeline"])
        if epsilon is not None:
            cfg = replace(cfg, epsilon=tuple(epsilon))
        state = fit(ds, cfg)
    except Exception as e:
        logger.error("Failed to train group", extra={'phase': "GRID", "dataset": dataset, "noise": noise,
                                                     "repeat": repeat, "epsilon": base["epsilon"], "error": str(e)})
        return [dict(base, variant=v, status="error", error=f"{type(e).__name__}: {e}") for v in variants]
    train_s = time.time() - start
    test_idx = ds.indices(TEST)
    rows = []
    for v in variants:
        row = dict(base, variant=v, gamma0=state.gamma0, train_s=train_s)
        try:
            t0 = time.time()
            pred = predict(state, test_idx, with_variant(cfg, v))
            row["predict_s"] = time.time() - t0
            row["error_rate"] = error_rate(pred, ds.clean_labels[test_idx])
            steps = get_variant(v)[0]["steps"]
            for diag in diagnostics:
                if diag.name in diagnostic_names:
                    row.update(diag.compute(state, steps))
            row.update(status="ok", error="")
        except Exception as e:
            logger.error("Failed to evaluate cell", extra={'phase': "GRID", "dataset": dataset, "noise": noise,
                                                           "repeat": repeat, "variant": v, "error": str(e)})
            row.update(status="error", error=f"{type(e).__name__}: {e}")
        rows.append(row)
    logger.info("Group finished", extra={'phase': "GRID", "dataset": dataset, "noise": noise, "repeat": repeat,
                                         "epsilon": base["epsilon"], "time": time.time() - start})
    return rows


def _with_epsilon_labels(df):
    if "epsilon" not in df.columns:
        return df.assign(epsilon=DEFAULT_EPSILON)
    return df.assign(epsilon=df["epsilon"].fillna(DEFAULT_EPSILON).astype(str))


def completed_cells(results_path):
    if not os.path.exists(results_path):
        return set()
    df = _with_epsilon_labels(pd.read_csv(results_path))
    df = df[df["status"] == "ok"]
    return {(d, float(p), int(r), v, e)
            for d, p, r, v, e in zip(df["dataset"], df["noise"], df["repeat"], df["variant"], df["epsilon"])}


def run_grid(grid, config, results_path, processors=1):
    """
    Runs every missing cell of the grid, appending rows to results_path as groups finish. Cells already stored
    with status ok are skipped, so an interrupted grid resumes where it stopped.
    """
    done = completed_cells(results_path)
    settings = grid.epsilon_settings()
    groups = {}
    for d, p, r, v, e in grid.cells():
        if (d, p, r, v, e) not in done:
            groups.setdefault((d, p, r, e), []).append(v)
    logger.info("Starting grid", extra={'phase': "GRID", "cells": len(grid.cells()), "done": len(done),
                                        "groups": len(groups), "processors": processors})
    jobs = Parallel(n_jobs=processors, return_as="generator")(
        delayed(run_group)(d, p, r, variants, grid.base_seed, config, grid.desk_scale, grid.diagnostics,
                           settings[e])
        for (d, p, r, e), variants in groups.items())
    for rows in jobs:
        append_rows(results_path, rows, COLUMNS)
    return Report.from_csv(results_path)


def _ladder_order(index):
    """Sorts (dataset, variant, ...) keys with variants in ladder order."""
    return sorted(index, key=lambda k: (k[0], ladder_position(k[1]), k[1]) + tuple(str(x) for x in k[2:]))


def _cells(values, fmt):
    return [format(x, fmt) if pd.notna(x) else "-" for x in values]


@dataclass
class Report:
    rows: pd.DataFrame

    def __post_init__(self):
        self.rows = _with_epsilon_labels(self.rows)

    @classmethod
    def from_csv(cls, path):
        if not os.path.exists(path):
            raise ConfigError(f"results file {path} not found")
        return cls(pd.read_csv(path))

    def ok_rows(self):
        df = self.rows[self.rows["status"] == "ok"]
        return df.drop_duplicates(subset=["dataset", "noise", "repeat", "variant", "epsilon"], keep="last")

    def failed(self):
        return self.rows[self.rows["status"] != "ok"]

    def keys(self):
        """Row keys of every table; the epsilon axis only shows up when the grid swept it."""
        keys = ["dataset", "variant"]
        if self.ok_rows()["epsilon"].nunique() > 1:
            keys.append("epsilon")
        return keys

    def error_table(self):
        """Mean error rate (%) per dataset and variant, one column per noise level, variants in ladder order."""
        table = self.ok_rows().pivot_table(index=self.keys(), columns="noise", values="error_rate", aggfunc="mean")
        return table.loc[_ladder_order(table.index)]

    def diagnostics_table(self):
        df = self.ok_rows()
        cols = [c for c in COLUMNS[COLUMNS.index("rho_0"):] if c in df.columns and df[c].notna().any()]
        if not cols:
            return pd.DataFrame()
        table = df.groupby(self.keys() + ["noise"])[cols].mean()
        return table.loc[_ladder_order(table.index)]

    def runtime_table(self):
        """Mean training and prediction seconds per dataset and variant."""
        table = self.ok_rows().groupby(self.keys())[["train_s", "predict_s"]].mean()
        return table.loc[_ladder_order(table.index)]

    def to_csv(self, path=None):
        table = self.error_table().reset_index()
        if path:
            table.to_csv(path, index=False)
        return table.to_csv(index=False)

    def to_markdown(self):
        env = Environment(loader=FileSystemLoader(TEMPLATES_DIR), variable_start_string='${',
                          variable_end_string='}')
        template = env.get_template("report.md")
        table = self.error_table()
        rows = [{"keys": list(idx), "values": _cells(table.loc[idx], ".2f")} for idx in table.index]
        diag = self.diagnostics_table()
        diag_rows = [{"keys": list(idx), "values": _cells(diag.loc[idx], ".4f")} for idx in diag.index]
        runtime = self.runtime_table()
        runtime_rows = [{"keys": list(idx), "values": _cells(runtime.loc[idx], ".2f")} for idx in runtime.index]
        ok = self.ok_rows()
        return template.render(keys=self.keys(), noise_levels=[f"{100 * p:g}%" for p in table.columns], rows=rows,
                               diag_columns=list(diag.columns), diag_rows=diag_rows, runtime_rows=runtime_rows,
                               repeats=int(ok["repeat"].nunique()) if len(ok) else 0, failed=len(self.failed()))
