import os
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from lib import ConfigError, SamplingError, ShapeError, TrainingError, get_logger, read_json, write_json

logger = get_logger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class NetConfig:
    layer_widths: list = field(default_factory=lambda: [64, 32])
    embedding_dim: int = 16
    shallow_tap_index: int = None
    lr_start: float = 0.02
    lr_end: float = 0.01
    epochs: int = 60
    skip: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.layer_widths = [int(w) for w in self.layer_widths]
        if any(w <= 0 for w in self.layer_widths) or self.embedding_dim <= 0:
            raise ConfigError("layer widths and embedding_dim must be positive")
        if self.shallow_tap_index is None:
            self.shallow_tap_index = max(len(self.layer_widths) - 1, 0)
        if not 0 <= self.shallow_tap_index <= len(self.layer_widths):
            raise ConfigError(f"shallow_tap_index {self.shallow_tap_index} outside the {len(self.layer_widths) + 1} "
                              f"layers")
        if not self.lr_start >= self.lr_end > 0:
            raise ConfigError(f"learning rates must satisfy lr_start >= lr_end > 0, got {self.lr_start}, "
                              f"{self.lr_end}")
        if self.epochs <= 0:
            raise ConfigError("epochs must be positive")
        if self.skip and not self.layer_widths:
            raise ConfigError("skip connection needs at least one hidden layer")


class Triplet(NamedTuple):
    anchor: int
    positive: int
    negative: int


def learning_rate(config, epoch):
    if config.epochs == 1:
        return config.lr_start
    t = epoch / (config.epochs - 1)
    return config.lr_start + (config.lr_end - config.lr_start) * t


class Adam(object):
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class MetricNet(object):
    """
    Dense feedforward embedding network. Hidden layers use ReLU, the output layer is linear. `shallow` is the
    activation at config.shallow_tap_index (the penultimate layer by default).
    """

    def __init__(self, input_dim, config, seed=0):
        self.input_dim = int(input_dim)
        self.config = config
        self.rng = np.random.default_rng(seed)
        dims = [self.input_dim] + config.layer_widths + [config.embedding_dim]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(self.rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.skip = None
        if config.skip:
            width = config.layer_widths[-1]
            limit = np.sqrt(6.0 / (self.input_dim + width))
            self.skip = self.rng.uniform(-limit, limit, size=(self.input_dim, width))
        self.optimizer = Adam(self.params, config.beta1, config.beta2, config.adam_eps)
        self.history = []

    @property
    def params(self):
        params = [p for pair in zip(self.weights, self.biases) for p in pair]
        if self.skip is not None:
            params.append(self.skip)
        return params

    @property
    def n_params(self):
        return int(sum(p.size for p in self.params))

    def zero_grads(self):
        return [np.zeros_like(p) for p in self.params]

    def is_finite(self):
        return all(np.isfinite(p).all() for p in self.params)

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"input of shape {x.shape} does not match input_dim {self.input_dim}")
        return x, single

    def forward_cache(self, x):
        x, _ = self._check_input(x)
        hidden = len(self.config.layer_widths)
        acts = [x]
        pre = []
        a = x
        for k in range(hidden):
            z = a @ self.weights[k] + self.biases[k]
            if self.skip is not None and k == hidden - 1:
                z = z + x @ self.skip
            pre.append(z)
            a = np.maximum(z, 0.0)
            acts.append(a)
        out = a @ self.weights[hidden] + self.biases[hidden]
        return out, {"acts": acts, "pre": pre}

    def forward(self, x):
        _, single = self._check_input(x)
        out, cache = self.forward_cache(x)
        tap = self.config.shallow_tap_index
        shallow = cache["acts"][tap + 1] if tap < len(self.config.layer_widths) else out
        if single:
            return out[0], shallow[0]
        return out, shallow

    def embed(self, x):
        return self.forward_cache(x)[0]

    def backward(self, cache, grad_out):
        hidden = len(self.config.layer_widths)
        acts, pre = cache["acts"], cache["pre"]
        grad_w = [None] * (hidden + 1)
        grad_b = [None] * (hidden + 1)
        grad_skip = None
        g = grad_out
        grad_w[hidden] = acts[hidden].T @ g
        grad_b[hidden] = g.sum(axis=0)
        g = g @ self.weights[hidden].T
        for k in range(hidden - 1, -1, -1):
            g = g * (pre[k] > 0)
            grad_w[k] = acts[k].T @ g
            grad_b[k] = g.sum(axis=0)
            if self.skip is not None and k == hidden - 1:
                grad_skip = acts[0].T @ g
            g = g @ self.weights[k].T
        grads = [p for pair in zip(grad_w, grad_b) for p in pair]
        if self.skip is not None:
            grads.append(grad_skip)
        return grads

    def to_dict(self):
        return {
            "version": CHECKPOINT_VERSION,
            "input_dim": self.input_dim,
            "config": asdict(self.config),
            "shapes": [list(p.shape) for p in self.params],
            "params": [p.tolist() for p in self.params],
            "optimizer": {"t": self.optimizer.t, "m": [m.tolist() for m in self.optimizer.m],
                          "v": [v.tolist() for v in self.optimizer.v]},
            "rng_state": self.rng.bit_generator.state,
            "history": list(self.history),
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {data.get('version')}")
        net = cls(data["input_dim"], NetConfig(**data["config"]))
        for p, stored, shape in zip(net.params, data["params"], data["shapes"]):
            value = np.asarray(stored, dtype=float).reshape(shape)
            if value.shape != p.shape:
                raise ShapeError(f"checkpoint shape {value.shape} does not match {p.shape}")
            p[...] = value
        net.optimizer.t = data["optimizer"]["t"]
        for m, stored in zip(net.optimizer.m, data["optimizer"]["m"]):
            m[...] = np.asarray(stored, dtype=float).reshape(m.shape)
        for v, stored in zip(net.optimizer.v, data["optimizer"]["v"]):
            v[...] = np.asarray(stored, dtype=float).reshape(v.shape)
        net.rng.bit_generator.state = data["rng_state"]
        net.history = list(data.get("history", []))
        return net

    def save(self, path):
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path):
        if not os.path.exists(path):
            raise ConfigError(f"checkpoint {path} not found")
        return cls.from_dict(read_json(path))


def as_index_array(triplets):
    if len(triplets) == 0:
        return np.empty((0, 3), dtype=np.int64)
    return np.asarray(triplets, dtype=np.int64).reshape(-1, 3)


def _triplet_hinge(net, inputs, triplets, margin, pi_ap, pi_an):
    idx = as_index_array(triplets)
    keep = (pi_ap > 0) | (pi_an > 0)
    idx, pi_ap, pi_an = idx[keep], pi_ap[keep], pi_an[keep]
    if len(idx) == 0:
        return 0.0, net.zero_grads()
    nodes, inverse = np.unique(idx, return_inverse=True)
    inverse = inverse.reshape(-1, 3)
    emb, cache = net.forward_cache(np.asarray(inputs)[nodes])
    a, p, n = emb[inverse[:, 0]], emb[inverse[:, 1]], emb[inverse[:, 2]]
    d_ap = ((a - p) ** 2).sum(axis=1)
    d_an = ((a - n) ** 2).sum(axis=1)
    hinge = margin - d_an * pi_an + d_ap * pi_ap
    active = hinge > 0
    loss = float(hinge[active].sum())

    c_ap = (active * pi_ap)[:, None]
    c_an = (active * pi_an)[:, None]
    grad_emb = np.zeros_like(emb)
    np.add.at(grad_emb, inverse[:, 0], 2.0 * c_ap * (a - p) - 2.0 * c_an * (a - n))
    np.add.at(grad_emb, inverse[:, 1], -2.0 * c_ap * (a - p))
    np.add.at(grad_emb, inverse[:, 2], 2.0 * c_an * (a - n))
    return loss, net.backward(cache, grad_emb)


def triplet_loss_E(net, inputs, triplets, margin=10.0):
    if margin <= 0:
        raise ConfigError("margin must be positive")
    ones = np.ones(len(triplets))
    return _triplet_hinge(net, inputs, triplets, margin, ones, ones)


def attention_lookup(attention, rows, cols):
    if len(rows) == 0:
        return np.zeros(0)
    return np.asarray(attention[rows, cols], dtype=float).ravel()


def triplet_loss_W(net, inputs, triplets, margin, attention):
    """
    Attention weighted hinge: the anchor-positive distance is scaled by pi(a,p), the anchor-negative one by
    pi(a,n). `attention` is a sparse {0,1} matrix; pairs it does not store count as 0.
    """
    if margin <= 0:
        raise ConfigError("margin must be positive")
    idx = as_index_array(triplets)
    pi_ap = attention_lookup(attention, idx[:, 0], idx[:, 1])
    pi_an = attention_lookup(attention, idx[:, 0], idx[:, 2])
    return _triplet_hinge(net, inputs, idx, margin, pi_ap, pi_an)


def sample_triplets(labels, count, seed, edges=None, anchors=None):
    """
    Uniform triplet sampler. Without `edges` every same-sign labeled node is a positive candidate and every
    opposite-sign one a negative; with a sparse `edges` structure the candidates are the anchor's neighbours.
    """
    if count <= 0:
        return []
    signs = np.sign(np.asarray(labels, dtype=float)).astype(np.int64)
    labeled = np.flatnonzero(signs != 0)
    if len(np.unique(signs[labeled])) < 2:
        raise SamplingError("triplet sampling needs both classes among the labeled nodes")
    rng = np.random.default_rng(seed)
    pool = labeled if anchors is None else np.intersect1d(labeled, np.asarray(anchors))

    if edges is None:
        pos = {c: labeled[signs[labeled] == c] for c in (-1, 1)}
        valid = np.array([a for a in pool if len(pos[signs[a]]) > 1])
        if len(valid) == 0:
            raise SamplingError("no anchor has a positive partner")
        out = []
        for a in rng.choice(valid, size=count, replace=True):
            same = pos[signs[a]]
            j = rng.integers(len(same) - 1)
            if j >= np.searchsorted(same, a):
                j += 1
            p = same[j]
            n = pos[-signs[a]][rng.integers(len(pos[-signs[a]]))]
            out.append(Triplet(int(a), int(p), int(n)))
        return out

    edges = edges.tocsr()
    candidates = {}
    for a in pool:
        nbrs = edges.indices[edges.indptr[a]:edges.indptr[a + 1]]
        nbrs = np.sort(nbrs[(signs[nbrs] != 0) & (nbrs != a)])
        same = nbrs[signs[nbrs] == signs[a]]
        other = nbrs[signs[nbrs] == -signs[a]]
        if len(same) and len(other):
            candidates[int(a)] = (same, other)
    if not candidates:
        raise SamplingError("no anchor has both a same-label and an opposite-label neighbour")
    valid = np.array(sorted(candidates))
    out = []
    for a in rng.choice(valid, size=count, replace=True):
        same, other = candidates[int(a)]
        out.append(Triplet(int(a), int(same[rng.integers(len(same))]), int(other[rng.integers(len(other))])))
    return out


def train(net, loss_fn, config, batches, phase="TRAIN"):
    """
    Runs config.epochs epochs of Adam. `batches` is either a sequence reused every epoch or a callable
    epoch -> sequence; loss_fn(net, batch) returns (loss, grads). One optimizer step per batch.
    """
    for epoch in range(config.epochs):
        lr = learning_rate(config, epoch)
        epoch_batches = batches(epoch) if callable(batches) else batches
        if not epoch_batches:
            raise TrainingError("no batches to train on", epoch=epoch)
        total = 0.0
        for b, batch in enumerate(epoch_batches):
            loss, grads = loss_fn(net, batch)
            if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads):
                raise TrainingError(f"non-finite loss {loss}", epoch=epoch, batch=b)
            net.optimizer.step(net.params, grads, lr)
            if not net.is_finite():
                raise TrainingError("non-finite parameters after optimizer step", epoch=epoch, batch=b)
            total += loss
        net.history.append(total / len(epoch_batches))
        logger.debug("Epoch finished", extra={'phase': phase, "epoch": epoch, "lr": lr, "loss": net.history[-1]})
    logger.info("Training finished", extra={'phase': phase, "epochs": config.epochs,
                                            "loss": net.history[-1] if net.history else None})
    return net
