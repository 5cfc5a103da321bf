import argparse
import os
import sys
import time
from dataclasses import replace

import dotenv
import numpy as np

import lib
from bench import ExperimentGrid, Report, cell_seeds, error_rate, prepare_cell, run_grid
from bench.diagnostics.graph_quality import subsample_spectra
from bench.diagnostics.label_quality import signal_changes, write_signal_changes
from dynglr import PipelineConfig, dataset_options, fit, iteration_snapshot, load_run, predict, save_run
from lib.dataio import TEST, NoiseSpec, inject_label_noise, load_csv, load_dataset, save_dataset
from lib.glr import denoise, write_residual_history
from lib.graph import write_graph, write_spectrum

logger = lib.get_logger(__name__)


def runs_dir():
    return os.getenv("DYNGLR_RUNS_DIR", os.path.join(lib.ROOT_DIR, "runs"))


def load_cell(dataset, noise, base_seed, config, desk_scale):
    """A prepared dataset directory is used as stored; a dataset id or csv path is split and noised here."""
    if os.path.isdir(dataset):
        ds = load_dataset(dataset)
        logger.info("Loaded prepared dataset, stored noise is kept", extra={'phase': "DATA", "dataset": dataset})
        return ds, cell_seeds(base_seed, ds.name, noise, 0)
    ds, _, seeds = prepare_cell(dataset, noise, 0, base_seed, config, desk_scale)
    return ds, seeds


def prepare(args, config):
    opts = dataset_options(config, os.path.splitext(os.path.basename(args.csv))[0])
    seeds = cell_seeds(args.seed, args.csv, args.noise, 0)
    ds = load_csv(args.csv, seed=seeds["split"], label_map=opts["label_map"], max_nodes=args.max_nodes)
    noise = NoiseSpec(args.noise, seeds["noise"])
    ds = inject_label_noise(ds, noise)
    manifest = save_dataset(ds, args.out, noise, seeds)
    logger.info("Dataset prepared", extra={'phase': "DATA", "out": args.out, "N": manifest["N"],
                                           "splits": manifest["split_sizes"]})


def dump_run(state, run_dir):
    """Graph, GLR residual and per-iteration dumps next to the run manifest."""
    ctx = state.context_for()
    for r, it in ctx.iterations.items():
        write_graph(it.graph, os.path.join(run_dir, "graphs", f"iteration_{r}"))
    if ctx.updated_graph is not None:
        write_graph(ctx.updated_graph, os.path.join(run_dir, "graphs", "updated"))
    if ctx.r > 0:
        history = []
        denoise(ctx.last().laplacian, ctx.iterations[ctx.r - 1].signal, state.config.glr, history=history)
        write_residual_history(history, os.path.join(run_dir, "residuals.csv"))


def train(args, config):
    ds, seeds = load_cell(args.dataset, args.noise, args.seed, config, not args.full)
    cfg = PipelineConfig.from_dict(config, ds.name)
    cfg = replace(cfg, variant=args.variant, seed=seeds["pipeline"])
    start = time.time()
    state = fit(ds, cfg)
    run_name = f"{os.path.basename(ds.name)}_{args.variant}_{args.noise:g}_{args.seed}"
    run_dir = args.out or os.path.join(runs_dir(), run_name)
    manifest = {"dataset": args.dataset, "noise": args.noise, "base_seed": args.seed, "desk_scale": not args.full,
                "seeds": seeds, "train_s": time.time() - start}
    path = save_run(state, run_dir, manifest)
    dump_run(state, run_dir)
    logger.info("Run saved", extra={'phase': "TRAIN", "manifest": path, "gamma0": state.gamma0,
                                    "time": time.time() - start})


def evaluate(args, config):
    manifest = lib.read_json(args.run)
    ds, _ = load_cell(manifest["dataset"], manifest["noise"], manifest["base_seed"], config,
                      manifest.get("desk_scale", True))
    state, manifest = load_run(args.run, ds)
    run_dir = os.path.dirname(os.path.abspath(args.run))
    stored = iteration_snapshot(os.path.join(run_dir, manifest["state"][-1]))
    if not np.allclose(stored["signal"], state.context_for().signal, atol=1e-6):
        logger.warning("Recomputed state differs from the stored snapshot", extra={'phase': "PREDICT",
                                                                                  "run": args.run})
    test_idx = ds.indices(TEST)
    pred = predict(state, test_idx)
    result = {"variant": state.config.variant, "dataset": ds.name, "noise": manifest["noise"],
              "error_rate": error_rate(pred, ds.clean_labels[test_idx]), "test_nodes": len(test_idx)}
    lib.write_json(os.path.join(run_dir, "eval.json"), result)
    logger.info("Evaluation finished", extra={'phase': "PREDICT", **result})


def ablate(args, config):
    grid = ExperimentGrid.from_json(args.grid)
    results = args.results or os.path.join(runs_dir(), "results.csv")
    report = run_grid(grid, config, results, processors=int(args.processors))
    print(report.to_markdown())


def spectrum(args, config):
    manifest = lib.read_json(args.run)
    ds, _ = load_cell(manifest["dataset"], manifest["noise"], manifest["base_seed"], config,
                      manifest.get("desk_scale", True))
    state, _ = load_run(args.run, ds)
    spectra = subsample_spectra(state, state.steps, n_nodes=args.nodes, signal=args.signal,
                                seed=state.config.seed)
    write_spectrum(spectra, args.out)
    logger.info("Spectrum written", extra={'phase': "SPECTRUM", "out": args.out, "stages": list(spectra)})


def changes(args, config):
    manifest = lib.read_json(args.run)
    ds, _ = load_cell(manifest["dataset"], manifest["noise"], manifest["base_seed"], config,
                      manifest.get("desk_scale", True))
    state, _ = load_run(args.run, ds)
    df = write_signal_changes(signal_changes(state, state.steps), args.out, args.bins)
    logger.info("Signal changes written", extra={'phase': "REPORT", "out": args.out, "rows": len(df)})


def report(args, config):
    rep = Report.from_csv(args.grid_results)
    text = rep.to_markdown() if args.format == "md" else rep.to_csv()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        print(text)


COMMANDS = {
    "prepare": prepare,
    "train": train,
    "eval": evaluate,
    "ablate": ablate,
    "spectrum": spectrum,
    "changes": changes,
    "report": report,
}


def build_parser():
    ap = argparse.ArgumentParser()
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare")
    p.add_argument("csv")
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--seed", "-s", required=False, type=int, default=0)
    p.add_argument("--noise", "-p", required=False, type=float, default=0.0)
    p.add_argument("--max-nodes", "-m", required=False, type=int, default=None)

    p = sub.add_parser("train")
    p.add_argument("--dataset", "-d", required=True)
    p.add_argument("--variant", "-v", required=True)
    p.add_argument("--noise", "-p", required=True, type=float)
    p.add_argument("--seed", "-s", required=True, type=int)
    p.add_argument("--out", "-o", required=False, default=None)
    p.add_argument("--full", action="store_true", help="skip the desk scale subsampling")

    p = sub.add_parser("eval")
    p.add_argument("--run", "-r", required=True)

    p = sub.add_parser("ablate")
    p.add_argument("--grid", "-g", required=True)
    p.add_argument("--results", "-o", required=False, default=None)
    p.add_argument("--processors", "-n", required=False, default=1)

    p = sub.add_parser("spectrum")
    p.add_argument("--run", "-r", required=True)
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--nodes", required=False, type=int, default=500)
    p.add_argument("--signal", required=False, default="clean", choices=["clean", "noisy", "denoised"])

    p = sub.add_parser("changes")
    p.add_argument("--run", "-r", required=True)
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--bins", "-b", required=False, type=int, default=None)

    p = sub.add_parser("report")
    p.add_argument("--grid-results", required=True)
    p.add_argument("--format", "-f", required=False, default="md", choices=["md", "csv"])
    p.add_argument("--out", "-o", required=False, default=None)
    return ap


def main(argv=None):
    dotenv.load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        config = lib.read_config()
        COMMANDS[args.command](args, config)
    except lib.DynGlrError as e:
        logger.error("Command failed", extra={'phase': args.command.upper(), "error": str(e),
                                              "type": type(e).__name__})
        return e.exit_code
    except Exception as e:
        logger.exception("Unexpected failure", extra={'phase': args.command.upper(), "error": str(e)})
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
