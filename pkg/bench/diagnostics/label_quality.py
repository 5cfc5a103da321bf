import os

import numpy as np
import pandas as pd

from bench.diagnostics import Diagnostic, residual_noise, train_rows


class ResidualNoise(Diagnostic):
    name = "residual_noise"

    @staticmethod
    def compute(state, steps):
        ctx = state.context_for(steps)
        clean = state.dataset.clean_labels[state.nodes]
        mask = train_rows(state)
        out = {f"residual_r{r}": residual_noise(it.signal, clean, mask)
               for r, it in ctx.iterations.items() if r > 0}
        chosen = state.rank_samples.get(tuple(steps))
        if chosen is not None and ctx.r > 0:
            rows = np.searchsorted(state.nodes, chosen)
            out["residual_rank"] = residual_noise(ctx.signal[rows], clean[rows], np.ones(len(rows), dtype=bool))
        return out


def signal_changes(state, steps):
    """
    Per training vertex and GLR iteration r >= 1: |Y^(r-1) - Y^r| and whether the vertex's observed label is
    clean. One row per (node, iteration).
    """
    ctx = state.context_for(steps)
    ds = state.dataset
    mask = train_rows(state)
    nodes = state.nodes[mask]
    clean = ds.noisy_labels[nodes] == ds.clean_labels[nodes]
    frames = []
    for r in sorted(ctx.iterations):
        if r == 0:
            continue
        change = np.abs(ctx.iterations[r - 1].signal[mask] - ctx.iterations[r].signal[mask])
        frames.append(pd.DataFrame({"node": nodes, "iteration": r, "clean": clean, "change": change}))
    if not frames:
        return pd.DataFrame(columns=["node", "iteration", "clean", "change"])
    return pd.concat(frames, ignore_index=True)


def change_density(changes, bins=20):
    """Histogram densities of the changes per (iteration, clean) group over a shared [0, max] binning."""
    columns = ["iteration", "clean", "bin_left", "bin_right", "density"]
    if changes.empty:
        return pd.DataFrame(columns=columns)
    top = max(float(changes["change"].max()), 1e-12)
    edges = np.linspace(0.0, top, bins + 1)
    frames = []
    for (r, clean), group in changes.groupby(["iteration", "clean"]):
        density, _ = np.histogram(group["change"], bins=edges, density=True)
        frames.append(pd.DataFrame({"iteration": r, "clean": clean, "bin_left": edges[:-1], "bin_right": edges[1:],
                                    "density": density}))
    return pd.concat(frames, ignore_index=True)[columns]


def write_signal_changes(changes, path, bins=None):
    """Writes the per vertex changes, or their densities when `bins` is given."""
    df = changes if bins is None else change_density(changes, bins)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df.to_csv(path, index=False)
    return df


class SignalChange(Diagnostic):
    name = "signal_change"

    @staticmethod
    def compute(state, steps):
        changes = signal_changes(state, steps)
        out = {}
        for (r, clean), group in changes.groupby(["iteration", "clean"]):
            out[f"change_{'clean' if clean else 'noisy'}_r{r}"] = float(group["change"].mean())
        return out
