import os
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np
from scipy import sparse
from scipy.stats import rankdata

from dynglr.steps import epsilon_for, propagate, required_nets, weigh
from dynglr.variants import get_variant
from lib import (ConfigError, SamplingError, UsageError, derive_seed, get_logger, merge_dicts, read_json,
                 write_json)
from lib.dataio import TEST, TRAIN, VAL, stratified_choice
from lib.glr import GlrParams, denoise
from lib.graph import (attention_matrix, build_laplacian, knn_edges, nearest, partition_edges, reliable,
                       unet_inputs, upper_pairs)
from lib.metricnet import (MetricNet, NetConfig, sample_triplets, train, triplet_loss_E, triplet_loss_W)

logger = get_logger(__name__)

NET_NAMES = ["gnet", "wnet1", "unet", "wnet2"]
NET_PHASES = {"gnet": "GNET", "wnet1": "WNET", "unet": "UNET", "wnet2": "WNET"}


@dataclass
class PipelineConfig:
    variant: str = "G-12312"
    margin_e: float = 10.0
    margin_w: float = 10.0
    epsilon: tuple = (0.6, 0.15)
    beta: float = 0.1
    glr: GlrParams = field(default_factory=GlrParams)
    graphs_per_epoch: int = 16
    labeled_per_graph: int = 80
    unlabeled_per_graph: int = 20
    triplets_per_graph: int = 256
    unet_neighbors: int = 6
    rank_sample_k: int = 480
    rank_sample_batches: int = 6
    rank_rounds: int = 3
    rank_val_nodes: int = 200
    reference_batches: int = 1
    gamma_candidates: tuple = tuple(range(2, 21, 2))
    max_resample: int = 10
    seed: int = 0
    nets: dict = field(default_factory=lambda: {name: NetConfig() for name in NET_NAMES})

    def __post_init__(self):
        get_variant(self.variant)
        self.epsilon = tuple(float(e) for e in self.epsilon)
        self.gamma_candidates = tuple(int(c) for c in self.gamma_candidates)
        if self.margin_e <= 0 or self.margin_w <= 0:
            raise ConfigError("triplet margins must be positive")
        if not self.epsilon or min(self.epsilon) < 0:
            raise ConfigError("attention thresholds must be non-negative")
        if not 0 < self.beta < 1:
            raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        if self.labeled_per_graph + self.unlabeled_per_graph != 100:
            raise ConfigError("a batch graph holds 100 nodes (labeled_per_graph + unlabeled_per_graph)")
        if self.labeled_per_graph < 2 or self.graphs_per_epoch < 1:
            raise ConfigError("batches need at least two labeled nodes and one graph per epoch")
        if self.rank_sample_k % self.rank_sample_batches:
            raise ConfigError("rank_sample_k must be divisible by rank_sample_batches")
        if self.reference_batches < 0:
            raise ConfigError("reference_batches must be non-negative")
        if not self.gamma_candidates or min(self.gamma_candidates) < 1:
            raise ConfigError("gamma_candidates must hold positive budgets")
        missing = [n for n in NET_NAMES if n not in self.nets]
        if missing:
            raise ConfigError(f"missing net configs {missing}")

    @classmethod
    def from_dict(cls, config, dataset=None):
        """Merges config['defaults'] with config['datasets'][dataset]; a flat mapping is taken as is."""
        values = config["defaults"] if "defaults" in config else config
        if dataset is not None:
            values = merge_dicts(values, config.get("datasets", {}).get(dataset, {}))
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in values.items() if k in known}
        if "glr" in kwargs and isinstance(kwargs["glr"], dict):
            kwargs["glr"] = GlrParams(**kwargs["glr"])
        if "nets" in kwargs:
            base = values.get("net_defaults", {})
            kwargs["nets"] = {name: c if isinstance(c, NetConfig) else NetConfig(**merge_dicts(base, c))
                              for name, c in kwargs["nets"].items()}
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(str(e))

    def to_dict(self):
        return asdict(self)


def dataset_options(config, dataset):
    """Loading options of a dataset block: label_map and desk_max_nodes."""
    block = config.get("datasets", {}).get(dataset, {})
    return {"label_map": block.get("label_map"), "desk_max_nodes": block.get("desk_max_nodes")}


class Batch(NamedTuple):
    nodes: np.ndarray
    labels: np.ndarray


@dataclass
class PipelineState:
    config: PipelineConfig
    dataset: object
    nets: dict = field(default_factory=dict)
    gamma0: int = None
    nodes: np.ndarray = None
    contexts: dict = field(default_factory=dict)
    rank_samples: dict = field(default_factory=dict)
    losses: dict = field(default_factory=dict)
    runtime: dict = field(default_factory=dict)

    @property
    def steps(self):
        return get_variant(self.config.variant)[0]["steps"]

    def y0(self):
        return self.dataset.noisy_labels[self.nodes] * (self.dataset.split[self.nodes] == TRAIN)

    def context_for(self, steps=None):
        """State level pass of a recipe over all train and validation nodes, cached per recipe."""
        steps = tuple(steps or self.steps)
        missing = [n for n in required_nets(steps) if n not in self.nets]
        if missing:
            raise UsageError(f"nets {missing} are not trained")
        if steps not in self.contexts:
            self.contexts[steps] = propagate(self, self.dataset.features[self.nodes], self.y0(), steps)
        return self.contexts[steps]

    @property
    def iterations(self):
        return self.context_for().iterations


def attention(y_prev_i, y_cur_i, y_prev_j, y_cur_j, eps):
    return int(bool(reliable(y_prev_i, y_cur_i, eps)) and bool(reliable(y_prev_j, y_cur_j, eps)))


def knn_vote(votes):
    """Majority sign of each row of neighbour labels (nearest first); a tie goes to the nearest neighbour."""
    pred = np.sign(votes.sum(axis=1))
    tie = pred == 0
    pred[tie] = votes[tie, 0]
    return pred.astype(np.int64)


def grid_search_gamma(embeddings, labels, train_idx, val_idx, candidates):
    """
    Picks the degree budget whose KNN vote (training nodes vote with their noisy labels) best matches the noisy
    validation labels. Ties go to the smaller budget.
    """
    candidates = sorted({int(c) for c in candidates})
    if not candidates:
        raise ConfigError("gamma grid search needs at least one candidate")
    if len(val_idx) == 0:
        logger.warning("No validation nodes, gamma falls back to the smallest candidate", extra={'phase': "GNET"})
        return candidates[0]
    k_max = min(candidates[-1], len(train_idx))
    idx = nearest(embeddings[val_idx], embeddings[train_idx], k_max)
    votes = labels[train_idx][idx]
    csum = np.cumsum(votes, axis=1)
    best, best_acc = None, -1.0
    for gamma in candidates:
        k = min(gamma, k_max)
        pred = np.sign(csum[:, k - 1])
        tie = pred == 0
        pred[tie] = votes[tie, 0]
        acc = float(np.mean(pred == labels[val_idx]))
        logger.debug("Gamma candidate", extra={'phase': "GNET", "gamma": gamma, "accuracy": acc})
        if acc > best_acc:
            best, best_acc = gamma, acc
    logger.info("Gamma selected", extra={'phase': "GNET", "gamma": best, "accuracy": best_acc})
    return best


def _draw(rng, pool, size, what):
    if size == 0:
        return np.empty(0, dtype=np.int64)
    if len(pool) == 0:
        raise SamplingError(f"no {what} nodes to build batches from")
    if len(pool) >= size:
        return rng.permutation(pool)[:size]
    logger.warning("Not enough nodes, sampling with replacement across batches",
                   extra={'phase': "DATA", "kind": what, "available": len(pool), "needed": size})
    rounds = -(-size // len(pool))
    return np.concatenate([rng.permutation(pool) for _ in range(rounds)])[:size]


def build_batches(ds, cfg, seed):
    rng = np.random.default_rng(seed)
    n_lab, n_unl, n_graphs = cfg.labeled_per_graph, cfg.unlabeled_per_graph, cfg.graphs_per_epoch
    labeled = _draw(rng, ds.indices(TRAIN), n_graphs * n_lab, "train")
    unlabeled = _draw(rng, ds.indices(VAL), n_graphs * n_unl, "val")
    batches = []
    for b in range(n_graphs):
        lab = labeled[b * n_lab:(b + 1) * n_lab]
        unl = unlabeled[b * n_unl:(b + 1) * n_unl]
        labels = np.concatenate([ds.noisy_labels[lab].astype(float), np.zeros(len(unl))])
        batches.append(Batch(np.concatenate([lab, unl]), labels))
    return batches


def _new_net(cfg, name, input_dim):
    return MetricNet(input_dim, cfg.nets[name], seed=derive_seed(cfg.seed, name, "init"))


def _prepared_batches(state, stage, epoch, prepare):
    """
    Builds the epoch's batch graphs and runs `prepare(batch, seed)` on each. A batch whose graph lacks one of the
    edge classes (SamplingError) is replaced by a freshly drawn one.
    """
    cfg, ds = state.config, state.dataset
    out = []
    for b, batch in enumerate(build_batches(ds, cfg, derive_seed(cfg.seed, stage, epoch))):
        for attempt in range(cfg.max_resample + 1):
            try:
                out.append(prepare(batch, derive_seed(cfg.seed, stage, epoch, b, attempt)))
                break
            except SamplingError as e:
                logger.warning("Batch skipped and resampled", extra={'phase': NET_PHASES[stage], "epoch": epoch,
                                                                     "batch": b, "error": str(e)})
                batch = build_batches(ds, cfg, derive_seed(cfg.seed, stage, epoch, b, attempt, "resample"))[0]
        else:
            raise SamplingError(f"no usable batch after {cfg.max_resample} resamples (epoch {epoch}, batch {b})")
    return out


def run_stage_gnet(ds, cfg, state=None):
    """Trains D on the plain triplet loss, picks gamma0 and builds the unweighted graph G0 on train+val."""
    start = time.time()
    state = state or PipelineState(config=cfg, dataset=ds, nodes=np.flatnonzero(ds.split != TEST))
    net = _new_net(cfg, "gnet", ds.n_features)

    def prepare(batch, seed):
        triplets = sample_triplets(batch.labels, cfg.triplets_per_graph, seed)
        return ds.features[batch.nodes], triplets

    def loss(net, batch):
        return triplet_loss_E(net, batch[0], batch[1], cfg.margin_e)

    train(net, loss, cfg.nets["gnet"], lambda epoch: _prepared_batches(state, "gnet", epoch, prepare),
          phase="GNET")
    emb = net.embed(ds.features)
    gamma0 = grid_search_gamma(emb, ds.noisy_labels, ds.indices(TRAIN), ds.indices(VAL), cfg.gamma_candidates)
    g0 = knn_edges(emb[state.nodes], gamma0)
    state.nets["gnet"], state.gamma0 = net, gamma0
    state.losses["gnet"] = list(net.history)
    state.runtime["gnet"] = time.time() - start
    return net, gamma0, g0


def _steps_before(steps, net_name):
    r = 0
    for pos, step in enumerate(steps):
        if step == "weight" and net_name == f"wnet{r + 1}":
            return steps[:pos]
        if step == "update" and net_name == "unet":
            return steps[:pos]
        if step == "regularize":
            r += 1
    raise ConfigError(f"recipe {steps} has no stage training {net_name}")


def run_stage_wnet(state, r, cfg):
    """
    Trains C^r on the attention weighted triplet loss. Every batch graph alternates weight, GLR and attention
    refresh with the current net before the gradient step. Returns the state level (net, graph, Y^r, attention).
    """
    start = time.time()
    ds, name = state.dataset, f"wnet{r}"
    prefix = _steps_before(state.steps, name)
    eps = epsilon_for(cfg, r)

    def prepare(batch, seed):
        ctx = propagate(state, ds.features[batch.nodes], batch.labels, prefix)
        part = partition_edges(ctx.mask, ctx.signal)
        if len(part.P) == 0 or len(part.Q) == 0:
            raise SamplingError("batch graph lacks same-label or opposite-label edges")
        ctx.triplets = sample_triplets(ctx.signal, cfg.triplets_per_graph, seed, edges=ctx.mask.edges)
        return ctx

    def loss(net, ctx):
        inputs = ctx.wnet_inputs()
        g = weigh(ctx, net.embed(inputs))
        y = denoise(build_laplacian(g), ctx.signal, cfg.glr)
        return triplet_loss_W(net, inputs, ctx.triplets, cfg.margin_w, attention_matrix(g, ctx.signal, y, eps))

    batches = lambda epoch: _prepared_batches(state, name, epoch, prepare)
    first = batches(0)
    net = _new_net(cfg, name, first[0].wnet_inputs().shape[1])
    train(net, loss, cfg.nets[name], lambda epoch: first if epoch == 0 else batches(epoch), phase="WNET")
    state.nets[name] = net
    state.losses[name] = list(net.history)
    state.runtime[name] = time.time() - start
    it = state.context_for(_steps_through(state.steps, r)).iterations[r]
    return net, it.graph, it.signal, it.attention


def _steps_through(steps, r):
    """Recipe prefix ending with the r-th regularize step."""
    seen = 0
    for pos, step in enumerate(steps):
        if step == "regularize":
            seen += 1
            if seen == r:
                return steps[:pos + 1]
    raise ConfigError(f"recipe {steps} has no iteration {r}")


def run_stage_unet(state, cfg):
    """
    Trains H_U on g(x) (features plus the denoised labels of the six strongest neighbours) with the attention
    weighted triplet loss, then rebuilds the state level graph from the surviving edges.
    """
    start = time.time()
    ds = state.dataset
    prefix = _steps_before(state.steps, "unet")

    def prepare(batch, seed):
        ctx = propagate(state, ds.features[batch.nodes], batch.labels, prefix)
        it = ctx.last()
        triplets = sample_triplets(it.signal, cfg.triplets_per_graph, seed, edges=it.graph.edges)
        return unet_inputs(ctx.features, it.laplacian, it.signal, cfg.unet_neighbors), triplets, it.attention

    def loss(net, batch):
        return triplet_loss_W(net, batch[0], batch[1], cfg.margin_w, batch[2])

    first = _prepared_batches(state, "unet", 0, prepare)
    net = _new_net(cfg, "unet", first[0][0].shape[1])
    train(net, loss, cfg.nets["unet"],
          lambda epoch: first if epoch == 0 else _prepared_batches(state, "unet", epoch, prepare), phase="UNET")
    state.nets["unet"] = net
    state.losses["unet"] = list(net.history)
    state.runtime["unet"] = time.time() - start
    ctx = state.context_for(prefix + ["update"])
    return net, ctx.updated_graph


def fit(ds, cfg):
    """Trains every net the configured variant needs, in recipe order."""
    if len(ds.indices(TRAIN)) < 2:
        raise UsageError("training needs labeled nodes")
    state = PipelineState(config=cfg, dataset=ds, nodes=np.flatnonzero(ds.split != TEST))
    logger.info("Training pipeline", extra={'phase': "GNET", "variant": cfg.variant, "dataset": ds.name})
    run_stage_gnet(ds, cfg, state)
    for name in required_nets(state.steps):
        if name.startswith("wnet"):
            run_stage_wnet(state, int(name[-1]), cfg)
        elif name == "unet":
            run_stage_unet(state, cfg)
    state.context_for()
    return state


def stratified_groups(indices, labels, n_groups, seed):
    """Deals `indices` into n_groups class-balanced groups."""
    indices = np.asarray(indices)
    rng = np.random.default_rng(seed)
    dealt = np.concatenate([rng.permutation(indices[labels[indices] == c]) for c in (-1, 1)])
    slot = np.arange(len(dealt)) % n_groups
    return [np.sort(dealt[slot == g]) for g in range(n_groups) if (slot == g).any()]


def _neighbour_votes(ctx, offset, count):
    """Weighted sign vote of the graph neighbours of nodes offset .. offset + count in the last iteration."""
    it = ctx.last()
    adj = it.laplacian.adjacency if it.laplacian is not None else it.graph.weights
    rows = adj.tocsr()[offset:offset + count]
    return np.asarray(rows @ np.sign(it.signal)).ravel()


def _resolve_ties(values, votes):
    out = np.sign(values)
    tied = out == 0
    out[tied] = np.where(np.sign(votes[tied]) != 0, np.sign(votes[tied]), 1.0)
    return out.astype(np.int64)


def transduce(state, reference_sets, queries, steps=None):
    """
    Joins each chunk of query nodes to every reference set, runs the recipe with the queries unlabeled and
    averages the final signal over the reference sets. Zero averages go to the neighbour vote summed over the
    same graphs, then to +1. Returns labels in {-1, +1}.
    """
    ds, cfg = state.dataset, state.config
    steps = list(steps or state.steps)
    queries = np.asarray(queries)
    out = np.empty(len(queries), dtype=np.int64)
    size = max(cfg.unlabeled_per_graph, 1)
    for start in range(0, len(queries), size):
        chunk = queries[start:start + size]
        total = np.zeros(len(chunk))
        votes = np.zeros(len(chunk))
        for refs in reference_sets:
            nodes = np.concatenate([refs, chunk])
            y0 = np.concatenate([ds.noisy_labels[refs].astype(float), np.zeros(len(chunk))])
            ctx = propagate(state, ds.features[nodes], y0, steps)
            total += ctx.signal[len(refs):]
            votes += _neighbour_votes(ctx, len(refs), len(chunk))
        out[start:start + len(chunk)] = _resolve_ties(total / len(reference_sets), votes)
    return out


def top_k(scores, k):
    """Indices of the k highest scores, ties to the lower index, returned sorted."""
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((np.arange(len(scores)), -scores))
    return np.sort(order[:k])


def fused_rank_score(accuracy, stability):
    """Equal weight rank fusion; larger is better."""
    return -(rankdata(-np.asarray(accuracy)) + rankdata(-np.asarray(stability))) / 2.0


def clamp_rank_k(k, n_train, n_batches):
    if k <= n_train:
        return k
    clamped = int(0.6 * n_train) // n_batches * n_batches
    logger.warning("Rank sample size clamped", extra={'phase': "RANK", "requested": k, "k": clamped,
                                                      "train": n_train})
    if clamped == 0:
        raise SamplingError(f"{n_train} training nodes cannot fill {n_batches} rank sample batches")
    return clamped


def rank_sampling(ds, state, k, cfg, steps=None):
    """
    Scores every training node by the validation accuracy of the reference groups it served in and by the
    stability of its denoised label over the last GLR pass, and keeps the top k of the fused rank.
    """
    steps = list(steps or state.steps)
    train_idx = ds.indices(TRAIN)
    val_idx = ds.indices(VAL)
    k = clamp_rank_k(k, len(train_idx), cfg.rank_sample_batches)
    n_groups = max(-(-len(train_idx) // cfg.labeled_per_graph), 1)
    acc_sum = np.zeros(len(train_idx))
    acc_cnt = np.zeros(len(train_idx))
    for rnd in range(cfg.rank_rounds):
        seed = derive_seed(cfg.seed, "rank", rnd)
        probe = stratified_choice(ds.noisy_labels, min(cfg.rank_val_nodes, len(val_idx)), seed, val_idx)
        if len(probe) == 0:
            break
        for group in stratified_groups(train_idx, ds.noisy_labels, n_groups, seed):
            pred = transduce(state, [group], probe, steps)
            pos = np.searchsorted(train_idx, group)
            acc_sum[pos] += float(np.mean(pred == ds.noisy_labels[probe]))
            acc_cnt[pos] += 1
    accuracy = acc_sum / np.maximum(acc_cnt, 1)

    ctx = state.context_for(steps)
    rows = np.searchsorted(state.nodes, train_idx)
    previous = ctx.iterations[ctx.r - 1].signal if ctx.r >= 1 else ctx.signal
    stability = -np.abs(previous[rows] - ctx.signal[rows])
    chosen = train_idx[top_k(fused_rank_score(accuracy, stability), k)]
    logger.info("Rank sample selected", extra={'phase': "RANK", "k": k, "train": len(train_idx)})
    return chosen


def reference_sets(state, sampling, steps=None):
    ds, cfg = state.dataset, state.config
    train_idx = ds.indices(TRAIN)
    if sampling:
        key = tuple(steps or state.steps)
        if key not in state.rank_samples:
            state.rank_samples[key] = rank_sampling(ds, state, cfg.rank_sample_k, cfg, list(key))
        return stratified_groups(state.rank_samples[key], ds.noisy_labels, cfg.rank_sample_batches,
                                 derive_seed(cfg.seed, "rank", "batches"))
    if cfg.reference_batches > 0:
        return [stratified_choice(ds.noisy_labels, cfg.labeled_per_graph, derive_seed(cfg.seed, "reference", b),
                                  train_idx) for b in range(cfg.reference_batches)]
    n_groups = max(-(-len(train_idx) // cfg.labeled_per_graph), 1)
    return stratified_groups(train_idx, ds.noisy_labels, n_groups, derive_seed(cfg.seed, "reference"))


def predict(state, test_indices, cfg=None):
    """Labels in {-1, +1} for the given nodes under cfg.variant (defaults to the trained variant)."""
    if state is None or "gnet" not in getattr(state, "nets", {}):
        raise UsageError("no trained pipeline state")
    cfg = cfg or state.config
    recipe, sampling = get_variant(cfg.variant)
    missing = [n for n in required_nets(recipe["steps"]) if n not in state.nets]
    if missing:
        raise UsageError(f"variant {cfg.variant} needs untrained nets {missing}")
    ds = state.dataset
    test_indices = np.asarray(test_indices)
    start = time.time()
    if recipe["predict"] == "knn":
        train_idx = ds.indices(TRAIN)
        net = state.nets["gnet"]
        k = min(state.gamma0, len(train_idx))
        idx = nearest(net.embed(ds.features[test_indices]), net.embed(ds.features[train_idx]), k)
        labels = knn_vote(ds.noisy_labels[train_idx][idx])
    else:
        refs = reference_sets(state, sampling, recipe["steps"])
        labels = transduce(state, refs, test_indices, recipe["steps"])
    logger.info("Prediction finished", extra={'phase': "PREDICT", "variant": cfg.variant,
                                              "nodes": len(test_indices), "time": time.time() - start})
    return labels


def _coo_arrays(matrix):
    pairs = upper_pairs(matrix)
    values = np.asarray(matrix[pairs[:, 0], pairs[:, 1]]).ravel() if len(pairs) else np.zeros(0)
    return pairs, values


def save_run(state, run_dir, manifest=None):
    """Writes nets, state snapshots and the run manifest; returns the manifest path."""
    nets_dir = os.path.join(run_dir, "nets")
    state_dir = os.path.join(run_dir, "state")
    os.makedirs(nets_dir, exist_ok=True)
    os.makedirs(state_dir, exist_ok=True)
    for name, net in state.nets.items():
        net.save(os.path.join(nets_dir, f"{name}.json"))
    ctx = state.context_for()
    for r, it in ctx.iterations.items():
        edges, weights = _coo_arrays(it.graph.weights)
        att, _ = _coo_arrays(it.attention)
        np.savez_compressed(os.path.join(state_dir, f"iteration_{r}.npz"), embeddings=it.embeddings,
                            signal=it.signal, edges=edges, weights=weights, attention=att, gamma=it.graph.gamma)
    if ctx.updated_graph is not None:
        edges, _ = _coo_arrays(ctx.updated_graph.edges.astype(float))
        np.savez_compressed(os.path.join(state_dir, "updated_graph.npz"), edges=edges,
                            gamma=ctx.updated_graph.gamma)
    data = dict(manifest or {})
    data.update({
        "version": 1,
        "variant": state.config.variant,
        "config": state.config.to_dict(),
        "gamma0": state.gamma0,
        "nets": {name: f"nets/{name}.json" for name in state.nets},
        "state": sorted(f"state/iteration_{r}.npz" for r in ctx.iterations),
        "losses": state.losses,
        "runtime": state.runtime,
        "rank_samples": {",".join(k): v for k, v in state.rank_samples.items()},
    })
    path = os.path.join(run_dir, "manifest.json")
    write_json(path, data)
    return path


def load_run(manifest_path, ds):
    """Restores a PipelineState from a run manifest; state level iterations are recomputed from the nets."""
    if not os.path.exists(manifest_path):
        raise UsageError(f"run manifest {manifest_path} not found")
    manifest = read_json(manifest_path)
    run_dir = os.path.dirname(os.path.abspath(manifest_path))
    cfg = PipelineConfig.from_dict(manifest["config"])
    state = PipelineState(config=cfg, dataset=ds, nodes=np.flatnonzero(ds.split != TEST), gamma0=manifest["gamma0"],
                          losses=manifest.get("losses", {}))
    for name, rel in manifest["nets"].items():
        state.nets[name] = MetricNet.load(os.path.join(run_dir, rel))
    for key, chosen in manifest.get("rank_samples", {}).items():
        state.rank_samples[tuple(key.split(","))] = np.asarray(chosen, dtype=np.int64)
    return state, manifest


def iteration_snapshot(path):
    with np.load(path) as data:
        n = len(data["signal"])
        pairs, weights = data["edges"], data["weights"]
        w = sparse.coo_matrix((weights, (pairs[:, 0], pairs[:, 1])), shape=(n, n)).tocsr() if len(pairs) \
            else sparse.csr_matrix((n, n))
        return {"embeddings": data["embeddings"], "signal": data["signal"], "weights": (w + w.T).tocsr(),
                "attention_pairs": data["attention"]}


def with_variant(cfg, variant):
    return replace(cfg, variant=variant)
