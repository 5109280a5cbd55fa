"""Meta-path enumeration, raw path features and Drop-MP."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, TypeVar

import numpy as np

from .graph import NodeType, Subgraph

T = TypeVar("T")

NUM_NODE_TYPES = len(NodeType)


class NodeMissing(KeyError):
    pass


class InvalidRate(ValueError):
    pass


@dataclass(frozen=True)
class MetaPath:
    node_ids: tuple[int, ...]
    relations: tuple[int, ...]

    @property
    def hops(self) -> int:
        return len(self.relations)

    @property
    def head(self) -> int:
        return self.node_ids[0]

    @property
    def tail(self) -> int:
        return self.node_ids[-1]

    def sort_key(self):
        return (self.hops, self.head, self.relations, self.node_ids)


@dataclass(frozen=True)
class RawPathFeature:
    hops: int
    vector: np.ndarray


def feature_dim(hops: int, num_relations: int, node_dim: int) -> int:
    return (hops + 1) * NUM_NODE_TYPES + hops * (2 * num_relations + 1) + node_dim


def enumerate_metapaths(graph: Subgraph, max_hops: int = 2) -> list[MetaPath]:
    """All 1-hop paths (every doubled edge) plus simple k-hop paths, 2 <= k <= max_hops,
    joining a question entity and an answer entity in either direction.

    The context node never appears on a path of two or more hops.
    """
    if max_hops < 1:
        raise ValueError(f"max_hops must be >= 1, got {max_hops}")
    paths = [MetaPath((e.head, e.tail), (e.relation,)) for e in graph.doubled_edges]

    if max_hops >= 2:
        q_set, a_set = set(graph.q_nodes), set(graph.a_nodes)
        z = graph.context_node
        adj = graph.adjacency

        def extend(nodes: list[int], rels: list[int], targets: set[int]):
            last = nodes[-1]
            for rel, nxt in adj[last]:
                if nxt == z or nxt in nodes:
                    continue
                nodes.append(nxt)
                rels.append(rel)
                if len(rels) >= 2 and nxt in targets:
                    paths.append(MetaPath(tuple(nodes), tuple(rels)))
                if len(rels) < max_hops:
                    extend(nodes, rels, targets)
                nodes.pop()
                rels.pop()

        for start in sorted(q_set | a_set):
            extend([start], [], a_set if start in q_set else q_set)

    paths.sort(key=MetaPath.sort_key)
    return paths


def cap_tokens(paths: Sequence[T], cap: int | None) -> list[T]:
    """Keep the first ``cap`` paths; enumeration order already puts short paths first."""
    if cap is None:
        return list(paths)
    return list(paths[:cap])


def featurize(path: MetaPath, graph: Subgraph) -> RawPathFeature:
    """[phi(h), r_1, phi(v_1), ..., r_k, phi(t), f_t - f_h]."""
    idx = graph.node_index
    for v in path.node_ids:
        if v not in idx:
            raise NodeMissing(f"path node {v} not in graph")
    n_rel = graph.relation_vocab_size
    parts = []
    for i, v in enumerate(path.node_ids):
        parts.append(idx[v].node_type.one_hot())
        if i < path.hops:
            r = np.zeros(n_rel)
            r[path.relations[i]] = 1.0
            parts.append(r)
    parts.append(graph.feature(path.tail) - graph.feature(path.head))
    return RawPathFeature(path.hops, np.concatenate(parts))


def drop_mp(tokens: Sequence[T], rate: float, rng: np.random.Generator, training: bool = True) -> list[T]:
    """Keep each token independently with probability ``1 - rate`` (training only)."""
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"drop rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return list(tokens)
    keep = rng.random(len(tokens)) >= rate
    return [t for t, k in zip(tokens, keep) if k]


def drop_mask(n: int, rate: float, rng: np.random.Generator, training: bool = True) -> np.ndarray:
    """Boolean keep-mask with the same semantics as :func:`drop_mp`."""
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"drop rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return np.ones(n, dtype=bool)
    return rng.random(n) >= rate
