"""Louvain-based client partitioning and the node/topology decoupling perturbations."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import networkx as nx
import numpy as np
import scipy.sparse as sp

from fedtad.errors import PartitionError
from fedtad.graph import UNLABELED, Graph

DEFAULT_SPLIT = (0.2, 0.4, 0.4)


@dataclass(frozen=True, eq=False)
class Partition:
    assignments: np.ndarray
    K: int

    def __post_init__(self):
        counts = np.bincount(self.assignments, minlength=self.K)
        if len(counts) != self.K or (counts == 0).any():
            raise PartitionError("every client must receive at least one node")

    def members(self, client: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == client)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.K)

    def to_json(self, path) -> None:
        payload = {"K": self.K, "assignments": [int(a) for a in self.assignments]}
        Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> Partition:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(np.asarray(payload["assignments"], dtype=np.int64), int(payload["K"]))


@dataclass(frozen=True, eq=False)
class ClientShard:
    client_id: int
    graph: Graph
    global_ids: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    reliability: np.ndarray | None = None

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    def with_graph(self, graph: Graph) -> ClientShard:
        return replace(self, graph=graph)

    def with_reliability(self, phi: np.ndarray) -> ClientShard:
        return replace(self, reliability=np.asarray(phi, dtype=np.float64))


def _to_networkx(g: Graph) -> nx.Graph:
    nxg = nx.Graph()
    nxg.add_nodes_from(range(g.num_nodes))
    nxg.add_edges_from(map(tuple, g.edge_array()))
    return nxg


def modularity(g: Graph, communities: np.ndarray) -> float:
    """Newman modularity (resolution 1) of a labeling."""
    m = g.num_edges
    if m == 0:
        raise PartitionError("modularity is undefined for an edgeless graph")
    coo = sp.triu(g.adj, k=1).tocoo()
    inside = np.bincount(communities[coo.row][communities[coo.row] == communities[coo.col]],
                         minlength=communities.max() + 1)
    deg_sum = np.bincount(communities, weights=g.degrees, minlength=communities.max() + 1)
    return float(np.sum(inside / m - (deg_sum / (2 * m)) ** 2))


def louvain_levels(g: Graph, seed: int = 0) -> list[np.ndarray]:
    """Community labelings after each Louvain pass, coarsest last."""
    if g.num_edges == 0:
        raise PartitionError("Louvain needs a graph with at least one edge")
    levels = []
    for communities in nx.community.louvain_partitions(_to_networkx(g), resolution=1.0,
                                                       threshold=1e-7, seed=seed):
        levels.append(_labels_from_sets(communities, g.num_nodes))
    return levels


def louvain(g: Graph, seed: int = 0) -> np.ndarray:
    """Community label per node; labels are renumbered by first appearance."""
    return louvain_levels(g, seed)[-1]


def _labels_from_sets(communities, n: int) -> np.ndarray:
    raw = np.empty(n, dtype=np.int64)
    for cid, members in enumerate(communities):
        raw[list(members)] = cid
    _, first = np.unique(raw, return_index=True)
    remap = np.empty(len(first), dtype=np.int64)
    remap[np.argsort(np.argsort(first))] = np.arange(len(first))
    return remap[raw]


def _bfs_order(g: Graph, nodes: np.ndarray) -> list[int]:
    allowed = set(int(u) for u in nodes)
    order, seen = [], set()
    for start in sorted(allowed):
        if start in seen:
            continue
        seen.add(start)
        queue = deque([start])
        while queue:
            u = queue.popleft()
            order.append(u)
            for v in g.neighbors(u):
                v = int(v)
                if v in allowed and v not in seen:
                    seen.add(v)
                    queue.append(v)
    return order


def split_communities(communities: Sequence[np.ndarray], K: int, g: Graph | None = None) -> list[np.ndarray]:
    """Halve the largest community (in BFS order when ``g`` is given) until there are >= K."""
    groups = [np.sort(np.asarray(c, dtype=np.int64)) for c in communities]
    while len(groups) < K:
        biggest = max(range(len(groups)), key=lambda i: (len(groups[i]), -i))
        members = groups.pop(biggest)
        if len(members) < 2:
            raise PartitionError(f"cannot produce {K} nonempty clients")
        ordered = np.asarray(_bfs_order(g, members) if g is not None else members)
        half = len(ordered) // 2
        groups += [np.sort(ordered[:half]), np.sort(ordered[half:])]
    return groups


def assign_communities(communities, K: int, seed: int = 0, g: Graph | None = None) -> Partition:
    """Balanced largest-first assignment of communities to the currently smallest client.

    ``communities`` is either a per-node label array or a sequence of member
    arrays. Equal-sized communities are visited in a seed-dependent order.
    """
    if isinstance(communities, np.ndarray) and communities.ndim == 1 and communities.dtype.kind in "iu":
        labels = communities
        groups = [np.flatnonzero(labels == c) for c in np.unique(labels)]
    else:
        groups = [np.asarray(c, dtype=np.int64) for c in communities]
    n = int(sum(len(c) for c in groups))
    if K < 1 or K > n:
        raise PartitionError(f"K must lie in [1, {n}], got {K}")
    groups = split_communities(groups, K, g)

    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(len(groups))
    order = sorted(range(len(groups)), key=lambda i: (-len(groups[i]), tiebreak[i]))
    loads = np.zeros(K, dtype=np.int64)
    assignments = np.full(n, -1, dtype=np.int64)
    for i in order:
        client = int(np.argmin(loads))
        assignments[groups[i]] = client
        loads[client] += len(groups[i])
    if (assignments < 0).any():
        raise PartitionError("community members must cover nodes 0..N-1")
    return Partition(assignments, K)


def apportion(total: int, ratios: Sequence[float]) -> list[int]:
    """Floor each share, then hand leftovers to the largest fractional parts (ties: earliest)."""
    exact = [total * r / sum(ratios) for r in ratios]
    counts = [int(np.floor(x + 1e-9)) for x in exact]
    leftovers = total - sum(counts)
    for i in sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))[:leftovers]:
        counts[i] += 1
    return counts


def stratified_split(labels: np.ndarray, ratios: Sequence[float], rng: np.random.Generator):
    """Split labeled indices into train/val/test, interleaving splits within each class."""
    labeled = np.flatnonzero(labels != UNLABELED)
    targets = apportion(len(labeled), ratios)
    # class-major order, shuffled inside each class
    shuffled = rng.permutation(labeled)
    ordered = shuffled[np.argsort(labels[shuffled], kind="stable")]
    assigned = [0] * len(ratios)
    buckets: list[list[int]] = [[] for _ in ratios]
    n = len(ordered)
    for i, node in enumerate(ordered):
        deficits = [targets[s] * (i + 1) / n - assigned[s] for s in range(len(ratios))]
        s = max((s for s in range(len(ratios)) if assigned[s] < targets[s]), key=lambda s: (deficits[s], -s))
        assigned[s] += 1
        buckets[s].append(int(node))
    return [np.sort(np.asarray(b, dtype=np.int64)) for b in buckets]


def induce_shards(g: Graph, partition: Partition, split_ratios=DEFAULT_SPLIT, seed: int = 0) -> list[ClientShard]:
    """Induced subgraph per client; cross-client edges are dropped."""
    if len(split_ratios) != 3 or min(split_ratios) < 0 or sum(split_ratios) <= 0:
        raise PartitionError(f"split_ratios must be three nonnegative numbers, got {split_ratios}")
    shards = []
    for k in range(partition.K):
        nodes = partition.members(k)
        sub = g.subgraph(nodes)
        rng = np.random.default_rng([seed, k])
        train, val, test = stratified_split(sub.labels, split_ratios, rng)
        if len(train) == 0:
            raise PartitionError(
                f"client {k} has no labeled training nodes; try a different seed or fewer clients")
        shards.append(ClientShard(k, sub, nodes, train, val, test))
    return shards


def partition_graph(g: Graph, K: int, seed: int = 0, split_ratios=DEFAULT_SPLIT) -> tuple[Partition, list[ClientShard]]:
    """Louvain communities, balanced assignment and shard induction in one call."""
    communities = louvain(g, seed) if g.num_edges else np.arange(g.num_nodes)
    partition = assign_communities(communities, K, seed, g)
    return partition, induce_shards(g, partition, split_ratios, seed)


def simulate_node_variation(shards: Sequence[ClientShard]) -> list[ClientShard]:
    """Strip every edge so only label distributions differ between clients."""
    empty = lambda s: sp.csr_matrix((s.num_nodes, s.num_nodes))
    return [s.with_graph(s.graph.with_adjacency(empty(s))) for s in shards]


def simulate_topology_variation(base: ClientShard, K: int, edges_to_add: int, seed: int = 0,
                                keep_first: bool = True) -> list[ClientShard]:
    """K copies of ``base`` each with ``edges_to_add`` random new edges.

    With ``keep_first`` client 0 receives the unperturbed copy.
    """
    if edges_to_add < 0:
        raise PartitionError("edges_to_add must be >= 0")
    n = base.num_nodes
    capacity = n * (n - 1) // 2 - base.graph.num_edges
    if edges_to_add > capacity:
        raise PartitionError(f"cannot add {edges_to_add} edges; only {capacity} non-edges exist")
    existing = {(int(u), int(v)) for u, v in base.graph.edge_array()}
    shards = []
    for k in range(K):
        if keep_first and k == 0 or edges_to_add == 0:
            shards.append(replace(base, client_id=k))
            continue
        rng = np.random.default_rng([seed, k])
        added: set[tuple[int, int]] = set()
        while len(added) < edges_to_add:
            u, v = (int(x) for x in rng.integers(0, n, size=2))
            if u == v:
                continue
            e = (min(u, v), max(u, v))
            if e not in existing and e not in added:
                added.add(e)
        extra = np.asarray(sorted(added), dtype=np.int64)
        adj = base.graph.adj + sp.coo_matrix((np.ones(len(extra)), (extra[:, 0], extra[:, 1])), shape=(n, n))
        shards.append(replace(base, client_id=k, graph=base.graph.with_adjacency(adj)))
    return shards
