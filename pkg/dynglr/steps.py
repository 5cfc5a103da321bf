from dataclasses import dataclass

import numpy as np
from scipy import sparse

from lib.glr import denoise
from lib.graph import (Graph, LaplacianSystem, assign_weights, attention_matrix, auto_sigma, build_laplacian,
                       graph_update, knn_edges, partition_edges, unet_inputs, unit_weights)


@dataclass
class Iteration:
    embeddings: np.ndarray
    graph: Graph
    signal: np.ndarray
    attention: sparse.csr_matrix
    laplacian: LaplacianSystem = None


class GraphContext(object):
    """
    Everything one node set accumulates while a recipe runs over it: the iterations r = 0, 1, 2, the current
    unweighted edge mask and the shallow feature map feeding the next W-Net.
    """

    def __init__(self, features, y0):
        self.features = np.asarray(features, dtype=float)
        self.y0 = np.asarray(y0, dtype=float)
        self.r = 0
        self.iterations = {}
        self.signal = self.y0
        self.mask = None
        self.mask_embeddings = None
        self.shallow = None
        self.weighted = None
        self.updated_graph = None

    def wnet_inputs(self):
        return np.hstack([self.features, self.shallow])

    def last(self):
        return self.iterations[self.r]


def epsilon_for(cfg, r):
    return cfg.epsilon[min(r, len(cfg.epsilon)) - 1]


def weigh(ctx, embeddings):
    part = partition_edges(ctx.mask, ctx.signal)
    sigma = auto_sigma(embeddings, part, ctx.mask)
    return assign_weights(ctx.mask, embeddings, sigma)


def generate(state, ctx):
    emb, shallow = state.nets["gnet"].forward(ctx.features)
    g = knn_edges(emb, state.gamma0)
    ctx.mask, ctx.mask_embeddings, ctx.shallow = g, emb, shallow
    ctx.signal = ctx.y0
    ctx.iterations[0] = Iteration(emb, g, ctx.y0, g.edges.astype(float).tocsr())


def weight(state, ctx):
    emb = state.nets[f"wnet{ctx.r + 1}"].embed(ctx.wnet_inputs())
    ctx.weighted = (emb, weigh(ctx, emb))


def unit_weight(state, ctx):
    ctx.weighted = (ctx.mask_embeddings, unit_weights(ctx.mask))


def regularize(state, ctx):
    r = ctx.r + 1
    emb, g = ctx.weighted
    lap = build_laplacian(g)
    y = denoise(lap, ctx.signal, state.config.glr)
    att = attention_matrix(g, ctx.signal, y, epsilon_for(state.config, r))
    ctx.iterations[r] = Iteration(emb, g, y, att, lap)
    ctx.r, ctx.signal, ctx.weighted = r, y, None


def update(state, ctx):
    it = ctx.last()
    inputs = unet_inputs(ctx.features, it.laplacian, it.signal, state.config.unet_neighbors)
    emb, shallow = state.nets["unet"].forward(inputs)
    g = graph_update(it.graph, it.laplacian, it.signal, emb, state.config.beta)
    ctx.mask, ctx.mask_embeddings, ctx.shallow, ctx.updated_graph = g, emb, shallow, g


STEPS = {
    "generate": generate,
    "weight": weight,
    "unit_weight": unit_weight,
    "regularize": regularize,
    "update": update,
}


def required_nets(steps):
    nets = []
    r = 0
    for step in steps:
        if step == "generate":
            nets.append("gnet")
        elif step == "weight":
            nets.append(f"wnet{r + 1}")
        elif step == "update":
            nets.append("unet")
        elif step == "regularize":
            r += 1
    return nets


def propagate(state, features, y0, steps):
    ctx = GraphContext(features, y0)
    for step in steps:
        STEPS[step](state, ctx)
    return ctx
