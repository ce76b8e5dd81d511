"""Submodular neuron selection baseline.

Each hidden layer keeps ``e * m`` neurons. Before every step the ``m`` most
useful, least redundant neurons are picked greedily and only that slice of
the network is trained.

Neuron vectors are the incoming weight columns of a layer's kernel.
Redundancy is clamped cosine similarity restricted to a t-nearest-neighbour
graph, and utility is the column norm plus the largest neighbourhood
similarity mass ``c``, which keeps the objective monotone when alpha == beta.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import DataSplits
from .mk_layer import ExtendedKernel
from .model import ModelParams, forward, backprop, cross_entropy_grad
from .numeric import ContractError, matmul
from .mk_layer import init_extended

log = logging.getLogger(__name__)


@dataclass
class NeighborGraph:
    t: int
    neighbors: list  # per row: [(j, s_ij), ...] sorted by descending similarity
    adjacency: np.ndarray  # symmetric; s_ij on edges of the union graph, 0 elsewhere

    @property
    def size(self) -> int:
        return self.adjacency.shape[0]


def cosine_similarity(rows) -> np.ndarray:
    """Pairwise cosine similarity clamped to [0, 1]; zero-norm rows get 0 to all."""
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=1)
    zero = norms == 0.0
    if zero.any():
        log.warning("%d zero-norm rows; their similarities are set to 0", int(zero.sum()))
    unit = rows / np.where(zero, 1.0, norms)[:, None]
    sim = np.clip(matmul(unit, unit.T), 0.0, 1.0)
    sim[zero, :] = 0.0
    sim[:, zero] = 0.0
    return sim


def build_graph(rows, t: int = 10) -> NeighborGraph:
    """t-nearest-neighbour graph over the rows by clamped cosine similarity.

    Ties in similarity are broken by the smaller row index. The edge set is
    the union: (i, j) is an edge when either lists the other.
    """
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[0]
    if n < 2:
        raise ContractError("build_graph needs at least 2 rows")
    sim = cosine_similarity(rows)
    k = min(t, n - 1)
    neighbors = []
    adjacency = np.zeros((n, n))
    for i in range(n):
        cand = np.delete(np.arange(n), i)
        order = cand[np.argsort(-sim[i, cand], kind="stable")[:k]]
        neighbors.append([(int(j), float(sim[i, j])) for j in order])
        adjacency[i, order] = sim[i, order]
        adjacency[order, i] = sim[order, i]
    return NeighborGraph(t, neighbors, adjacency)


@dataclass
class SubmodObjective:
    """f(S) = alpha * sum_{i in S} u(i) - beta * sum_{i<j in S, (i,j) in E} s(i,j)."""

    alpha: float
    beta: float
    utilities: np.ndarray
    graph: NeighborGraph
    offset: float

    @classmethod
    def from_rows(cls, rows, t: int = 10, alpha: float = 1.0, beta: float = 1.0) -> "SubmodObjective":
        graph = build_graph(rows, t)
        offset = float(graph.adjacency.sum(axis=1).max())
        utilities = np.linalg.norm(np.asarray(rows, dtype=np.float64), axis=1) + offset
        return cls(alpha, beta, utilities, graph, offset)

    @property
    def size(self) -> int:
        return len(self.utilities)

    def value(self, subset) -> float:
        s = np.asarray(sorted(set(int(i) for i in subset)), dtype=np.int64)
        if s.size == 0:
            return 0.0
        penalty = np.triu(self.graph.adjacency[np.ix_(s, s)], 1).sum()
        return float(self.alpha * self.utilities[s].sum() - self.beta * penalty)

    def gain(self, i: int, subset) -> float:
        s = [j for j in subset if j != i]
        return float(self.alpha * self.utilities[i] - self.beta * self.graph.adjacency[i, s].sum())


def greedy_select(obj: SubmodObjective, m: int) -> np.ndarray:
    """Pick m indices by largest marginal gain, smallest index on ties; returned sorted."""
    if m > obj.size:
        raise ContractError(f"cannot select {m} of {obj.size} candidates")
    if m < 0:
        raise ContractError("m must be >= 0")
    gains = obj.alpha * obj.utilities.astype(np.float64).copy()
    taken = np.zeros(obj.size, dtype=bool)
    chosen = []
    for _ in range(m):
        masked = np.where(taken, -np.inf, gains)
        i = int(np.argmax(masked))
        chosen.append(i)
        taken[i] = True
        gains = gains - obj.beta * obj.graph.adjacency[:, i]
    return np.sort(np.asarray(chosen, dtype=np.int64))


# -- training ----------------------------------------------------------------------

def init_subset_params(spec, rng, e: int) -> ModelParams:
    """Hidden layers widened to e * m_r; fan-in scaling uses the base widths."""
    dims = [spec.input_dim, *spec.hidden_dims, spec.output_dim]
    layers = []
    n_layers = len(dims) - 1
    for i in range(n_layers):
        n_full = dims[i] if i == 0 else dims[i] * e
        m_full = dims[i + 1] if i == n_layers - 1 else dims[i + 1] * e
        layers.append(init_extended(rng.child(f"layer{i}"), n_full, m_full, 1, fan_in=dims[i]))
    return ModelParams(layers)


def select_subnetwork(full: ModelParams, spec, t: int, alpha: float, beta: float) -> list:
    """Selected neuron indices for each hidden layer of the widened network."""
    selections = []
    for r, m in enumerate(spec.hidden_dims):
        columns = full.layers[r].weights[:, :, 0].T  # one row per neuron
        if columns.shape[0] == m:
            selections.append(np.arange(m))
            continue
        obj = SubmodObjective.from_rows(columns, t, alpha, beta)
        selections.append(greedy_select(obj, m))
    return selections


def _index_pairs(full: ModelParams, selections) -> list:
    pairs = []
    for r, layer in enumerate(full.layers):
        rows = np.arange(layer.n) if r == 0 else selections[r - 1]
        cols = selections[r] if r < len(selections) else np.arange(layer.m)
        pairs.append((rows, cols))
    return pairs


def slice_network(full: ModelParams, selections) -> ModelParams:
    layers = []
    for layer, (rows, cols) in zip(full.layers, _index_pairs(full, selections)):
        w = layer.weights[:, :, 0][np.ix_(rows, cols)]
        layers.append(ExtendedKernel(w[:, :, None], layer.bias[cols]))
    return ModelParams(layers)


def train_subset(config, data: DataSplits):
    """Greedy-select a base-size slice each step, train only that slice, and
    return the slice chosen by one final selection."""
    from .trainers import TrainResult, _Run, _expect, network_logits

    _expect(config, "subset")
    run = _Run(config, data)
    spec = config.spec
    sub_cfg = config.subset
    full = init_subset_params(spec, run.root.child("init"), spec.expansion)
    opt = run.optimizer()
    log_fh = open(sub_cfg.selection_log, "w") if sub_cfg.selection_log else None
    if log_fh:
        log_fh.write("step,layer,indices\n")
    counter = [0]
    history = []

    def select():
        return select_subnetwork(full, spec, sub_cfg.t, sub_cfg.alpha, sub_cfg.beta)

    def step(x, y, _):
        counter[0] += 1
        sel = select()
        if log_fh:
            for r, s in enumerate(sel):
                log_fh.write(f"{counter[0]},{r},{' '.join(map(str, s))}\n")
        history.append([s.copy() for s in sel])
        sub = slice_network(full, sel)
        logits, cache = forward(sub, None, x)
        grads = backprop(sub, cache, cross_entropy_grad(logits, y))
        entries = []
        for i, (layer, (rows, cols)) in enumerate(zip(full.layers, _index_pairs(full, sel))):
            entries.append((f"layer{i}.weight", layer.weights, grads.weights[i],
                            np.ix_(rows, cols, np.arange(1))))
            entries.append((f"layer{i}.bias", layer.bias, grads.biases[i], (cols,)))
        opt.apply(entries)

    try:
        records = run.loop(step, lambda: network_logits(slice_network(full, select())))
    finally:
        if log_fh:
            log_fh.close()
    final = slice_network(full, select())
    return TrainResult(final, records, config, extended=full, selections=history)
