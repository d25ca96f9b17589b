"""Road network representation, trajectory neighborhoods, and node walks.

A road link is a node of the directed graph; an edge u -> v means traffic
can continue from link u to link v. The neighborhood of a trajectory is the
union of nodes reachable within k hops following edges forward (downstream)
or backward (upstream) from any of its links.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, GraphLookupError, ParseError


@dataclass(frozen=True)
class RoadNetwork:
    """Directed graph over link ids with a dense vocabulary."""

    nodes: frozenset[int]
    out_edges: dict[int, tuple[int, ...]]
    in_edges: dict[int, tuple[int, ...]]
    vocabulary: dict[int, int]  # link id -> dense index
    index_to_link: tuple[int, ...]
    self_loops: tuple[int, ...] = ()
    link_attrs: dict[int, dict[str, float]] = field(default_factory=dict)

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    @property
    def num_edges(self) -> int:
        return sum(len(v) for v in self.out_edges.values())

    def edges(self) -> list[tuple[int, int]]:
        return [(u, v) for u in sorted(self.out_edges) for v in self.out_edges[u]]

    @classmethod
    def from_edges(cls, edges, link_attrs=None) -> "RoadNetwork":
        """Build from (src, dst) pairs; duplicates collapse, self-loops are
        kept and flagged."""
        nodes = set()
        uniq = set()
        loops = set()
        for u, v in edges:
            nodes.add(u)
            nodes.add(v)
            uniq.add((u, v))
            if u == v:
                loops.add(u)
        out: dict[int, list[int]] = {n: [] for n in nodes}
        inc: dict[int, list[int]] = {n: [] for n in nodes}
        for u, v in uniq:
            out[u].append(v)
            inc[v].append(u)
        ordered = tuple(sorted(nodes))
        return cls(
            nodes=frozenset(nodes),
            out_edges={n: tuple(sorted(out[n])) for n in nodes},
            in_edges={n: tuple(sorted(inc[n])) for n in nodes},
            vocabulary={link: i for i, link in enumerate(ordered)},
            index_to_link=ordered,
            self_loops=tuple(sorted(loops)),
            link_attrs=dict(link_attrs or {}),
        )


@dataclass(frozen=True)
class Subgraph:
    """Induced neighborhood of one trajectory at one time interval."""

    graph_id: int
    interval: int
    nodes: tuple[int, ...]  # link ids, sorted
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.nodes:
            raise ContractError("subgraph node set must be nonempty")


@dataclass(frozen=True)
class NodeSequence:
    graph_id: int
    nodes: tuple[int, ...]  # link ids visited by the walk


@dataclass
class SubgraphCorpus:
    """Sampled walks over all subgraphs, with walk nodes expressed as dense
    vocabulary indices. ``graphs`` holds the subgraph metadata when the
    corpus was built in-process; a corpus read back from disk has only the
    walks and counts."""

    num_graphs: int
    vocab_size: int
    walks: list[tuple[int, tuple[int, ...]]]  # (graph_id, vocab indices)
    graphs: list[Subgraph] | None = None


def _directional_bfs(adjacency, seeds, hops):
    seen = set(seeds)
    frontier = deque((s, 0) for s in seeds)
    while frontier:
        node, depth = frontier.popleft()
        if depth == hops:
            continue
        for nxt in adjacency.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append((nxt, depth + 1))
    return seen


def extract_subgraph(network: RoadNetwork, trajectory, hops: int) -> Subgraph:
    """k-hop upstream/downstream neighborhood of the trajectory's links."""
    if hops < 0:
        raise ContractError(f"hops must be >= 0, got {hops}")
    seeds = [link.link_id for link in trajectory.links]
    for link_id in seeds:
        if link_id not in network.nodes:
            raise GraphLookupError(f"link {link_id} is not in the road network")
    reached = _directional_bfs(network.out_edges, seeds, hops)
    reached |= _directional_bfs(network.in_edges, seeds, hops)
    node_tuple = tuple(sorted(reached))
    node_set = set(node_tuple)
    edges = tuple(
        (u, v)
        for u in node_tuple
        for v in network.out_edges.get(u, ())
        if v in node_set
    )
    return Subgraph(
        graph_id=0,
        interval=trajectory.conditions.time_interval,
        nodes=node_tuple,
        edges=edges,
    )


def sample_node_sequence(
    subgraph: Subgraph, length: int, rng: np.random.Generator
) -> NodeSequence:
    """Random walk over the induced subgraph.

    The start node is uniform over the node set; steps are uniform over
    out-neighbors, with a uniform restart over the node set at dead ends.
    """
    if length < 1:
        raise ContractError(f"walk length must be >= 1, got {length}")
    nodes = subgraph.nodes
    out: dict[int, list[int]] = {}
    for u, v in subgraph.edges:
        out.setdefault(u, []).append(v)
    for u in out:
        out[u].sort()

    walk = [nodes[rng.integers(len(nodes))]]
    while len(walk) < length:
        here = walk[-1]
        neighbors = out.get(here)
        if neighbors:
            walk.append(neighbors[rng.integers(len(neighbors))])
        else:
            walk.append(nodes[rng.integers(len(nodes))])
    return NodeSequence(graph_id=subgraph.graph_id, nodes=tuple(walk))


def build_corpus(
    network: RoadNetwork,
    dataset,
    hops: int,
    walks_per_graph: int,
    walk_length: int,
    seed: int,
) -> SubgraphCorpus:
    """One subgraph per (trajectory, time interval), each with
    ``walks_per_graph`` sampled node sequences.

    Walks for trajectory i draw from an rng stream seeded by (seed, i), so
    the corpus does not depend on traversal schedule.
    """
    graphs = []
    walks = []
    vocab = network.vocabulary
    for idx, trajectory in enumerate(dataset.trajectories):
        sub = replace(extract_subgraph(network, trajectory, hops), graph_id=idx)
        graphs.append(sub)
        rng = np.random.default_rng([seed, idx])
        for _ in range(walks_per_graph):
            seq = sample_node_sequence(sub, walk_length, rng)
            walks.append((idx, tuple(vocab[n] for n in seq.nodes)))
    return SubgraphCorpus(
        num_graphs=len(graphs),
        vocab_size=network.vocab_size,
        walks=walks,
        graphs=graphs,
    )


def save_corpus(corpus: SubgraphCorpus, path) -> None:
    """One JSON record per walk: {"graph_id": ..., "nodes": [...]}."""
    with open(path, "w", encoding="utf-8") as fh:
        for graph_id, nodes in corpus.walks:
            fh.write(json.dumps({"graph_id": graph_id, "nodes": list(nodes)}))
            fh.write("\n")


def load_corpus(path, num_graphs: int, vocab_size: int) -> SubgraphCorpus:
    """Read walks back; graph metadata is not stored in the walk file."""
    walks = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                walks.append((int(rec["graph_id"]), tuple(int(n) for n in rec["nodes"])))
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(f"line {line_no}: bad walk record ({exc})") from exc
    return SubgraphCorpus(num_graphs=num_graphs, vocab_size=vocab_size, walks=walks)
