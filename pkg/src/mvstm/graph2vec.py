"""Skipgram embeddings of subgraphs and nodes.

Each walk node w observed in the context of subgraph G contributes
log Pr(w | G), with Pr defined by a softmax of the inner products between
the graph vector and every node vector in the vocabulary. Training ascends
this log-likelihood one (graph, node) occurrence at a time, by exact
full-softmax gradients by default; a uniform negative-sampling objective is
available as an opt-in for large vocabularies.

The trained graph vector of a trajectory's subgraph is its spatial feature.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ConfigError
from .roadgraph import SubgraphCorpus


@dataclass
class EmbeddingState:
    graph_vectors: np.ndarray  # [num_graphs x delta]
    node_vectors: np.ndarray  # [vocab x delta]

    @property
    def delta(self) -> int:
        return self.graph_vectors.shape[1]

    @property
    def num_graphs(self) -> int:
        return self.graph_vectors.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.node_vectors.shape[0]


@dataclass(frozen=True)
class SkipgramConfig:
    delta: int = 16
    learning_rate: float = 0.025
    epochs: int = 15
    seed: int = 0
    objective: str = "full_softmax"
    negatives: int = 5  # used by the negative_sampling objective

    def __post_init__(self):
        if self.delta < 1:
            raise ConfigError("embedding dimension must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.objective not in ("full_softmax", "negative_sampling"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.objective == "negative_sampling" and self.negatives < 1:
            raise ConfigError("negative_sampling needs at least one negative")


def init_embeddings(num_graphs: int, vocab_size: int, delta: int, seed: int) -> EmbeddingState:
    """Entries i.i.d. uniform in [-0.5/delta, +0.5/delta]."""
    if num_graphs < 1 or vocab_size < 1 or delta < 1:
        raise ConfigError(
            f"counts must be >= 1, got graphs={num_graphs} vocab={vocab_size} delta={delta}"
        )
    rng = np.random.default_rng(seed)
    half = 0.5 / delta
    return EmbeddingState(
        graph_vectors=rng.uniform(-half, half, size=(num_graphs, delta)),
        node_vectors=rng.uniform(-half, half, size=(vocab_size, delta)),
    )


def _check_ids(state: EmbeddingState, graph_id: int, node_id: int):
    if not 0 <= graph_id < state.num_graphs:
        raise IndexError(f"graph id {graph_id} out of range [0, {state.num_graphs})")
    if not 0 <= node_id < state.vocab_size:
        raise IndexError(f"node id {node_id} out of range [0, {state.vocab_size})")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max()
    return logits - (m + np.log(np.exp(logits - m).sum()))


def prob(state: EmbeddingState, graph_id: int, node_id: int) -> float:
    """Pr(node | graph): softmax over the whole node vocabulary."""
    _check_ids(state, graph_id, node_id)
    logits = state.node_vectors @ state.graph_vectors[graph_id]
    return float(np.exp(_log_softmax(logits)[node_id]))


def log_likelihood(state: EmbeddingState, corpus: SubgraphCorpus) -> float:
    """Sum of log Pr(w | G) over every walk position in the corpus."""
    total = 0.0
    for graph_id, nodes in corpus.walks:
        _check_ids(state, graph_id, max(nodes))
        logits = state.node_vectors @ state.graph_vectors[graph_id]
        logp = _log_softmax(logits)
        total += float(logp[list(nodes)].sum())
    return total


def train_step(state: EmbeddingState, graph_id: int, node_id: int, learning_rate: float) -> None:
    """One exact gradient-ascent step on log Pr(node | graph), in place.

    d/dG   = w_j - sum_w p(w) w
    d/dw_k = G * ([k == j] - p(k))
    """
    _check_ids(state, graph_id, node_id)
    G = state.graph_vectors[graph_id]
    W = state.node_vectors
    logits = W @ G
    p = np.exp(_log_softmax(logits))
    grad_graph = W[node_id] - p @ W
    grad_nodes = -np.outer(p, G)
    grad_nodes[node_id] += G
    state.graph_vectors[graph_id] = G + learning_rate * grad_graph
    W += learning_rate * grad_nodes


def _train_step_negative(
    state: EmbeddingState,
    graph_id: int,
    node_id: int,
    learning_rate: float,
    negatives: int,
    rng: np.random.Generator,
) -> None:
    """Ascent on log s(G.w_j) + sum over k negatives of log s(-G.w_neg),
    negatives uniform over the vocabulary (draws that hit the positive are
    skipped)."""
    G = state.graph_vectors[graph_id].copy()
    W = state.node_vectors
    grad_graph = np.zeros_like(G)

    s = 1.0 / (1.0 + np.exp(-W[node_id] @ G))
    grad_graph += (1.0 - s) * W[node_id]
    W[node_id] += learning_rate * (1.0 - s) * G

    for neg in rng.integers(0, state.vocab_size, size=negatives):
        if neg == node_id:
            continue
        s_n = 1.0 / (1.0 + np.exp(-W[neg] @ G))
        grad_graph -= s_n * W[neg]
        W[neg] -= learning_rate * s_n * G
    state.graph_vectors[graph_id] += learning_rate * grad_graph


def train(corpus: SubgraphCorpus, config: SkipgramConfig) -> tuple[EmbeddingState, list[float]]:
    """Seeded epochs over all (graph, node) occurrences in shuffled order.

    Returns the final state and the per-epoch log-likelihood trace.
    """
    if not corpus.walks:
        raise ConfigError("corpus has no walks")
    state = init_embeddings(corpus.num_graphs, corpus.vocab_size, config.delta, config.seed)
    occurrences = [
        (graph_id, node) for graph_id, nodes in corpus.walks for node in nodes
    ]
    rng = np.random.default_rng([config.seed, 1])
    trace = []
    for _ in range(config.epochs):
        order = rng.permutation(len(occurrences))
        for k in order:
            graph_id, node_id = occurrences[k]
            if config.objective == "full_softmax":
                train_step(state, graph_id, node_id, config.learning_rate)
            else:
                _train_step_negative(
                    state, graph_id, node_id, config.learning_rate,
                    config.negatives, rng,
                )
        trace.append(log_likelihood(state, corpus))
    return state, trace


def spatial_feature(state: EmbeddingState, graph_id: int) -> np.ndarray:
    """The graph's embedding row (a copy)."""
    if not 0 <= graph_id < state.num_graphs:
        raise IndexError(f"graph id {graph_id} out of range [0, {state.num_graphs})")
    return state.graph_vectors[graph_id].copy()


def save_embeddings(state: EmbeddingState, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "delta": state.delta,
                "graph_vectors": state.graph_vectors.tolist(),
                "node_vectors": state.node_vectors.tolist(),
            },
            fh,
            sort_keys=True,
        )
        fh.write("\n")


def load_embeddings(path) -> EmbeddingState:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        state = EmbeddingState(
            graph_vectors=np.asarray(raw["graph_vectors"], dtype=np.float64),
            node_vectors=np.asarray(raw["node_vectors"], dtype=np.float64),
        )
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"cannot load embeddings from {path}: {exc}") from exc
    if state.graph_vectors.ndim != 2 or state.node_vectors.ndim != 2:
        raise CheckpointError(f"embedding file {path} has malformed matrices")
    if int(raw["delta"]) != state.delta:
        raise CheckpointError(
            f"embedding file {path}: delta {raw['delta']} does not match "
            f"matrix width {state.delta}"
        )
    return state
