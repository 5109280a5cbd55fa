"""Per-question multi-relational subgraph with typed nodes.

Relation ids ``0 .. R-1`` are knowledge-graph relations, ``R .. 2R-1`` their
inverses and ``2R`` is reserved for the links between the inserted context
node Z and the question/answer entities.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable

import numpy as np


class NodeType(enum.IntEnum):
    Z = 0
    Q = 1
    A = 2
    O = 3

    def one_hot(self) -> np.ndarray:
        vec = np.zeros(len(NodeType))
        vec[int(self)] = 1.0
        return vec


class GraphError(ValueError):
    pass


class DanglingEdge(GraphError):
    pass


class DuplicateNodeId(GraphError):
    pass


class RelationOutOfRange(GraphError):
    pass


class MultipleContextNodes(GraphError):
    pass


class AlreadyHasContext(GraphError):
    pass


class SelfLoop(GraphError):
    pass


class InvalidNodeSet(GraphError):
    pass


@dataclass(frozen=True)
class Node:
    id: int
    node_type: NodeType
    surface: str
    feature: tuple[float, ...]


@dataclass(frozen=True)
class Edge:
    head: int
    relation: int
    tail: int


@dataclass(frozen=True)
class Subgraph:
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]
    num_relations: int
    q_nodes: tuple[int, ...] = ()
    a_nodes: tuple[int, ...] = ()
    feature_dim: int | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "q_nodes", tuple(self.q_nodes))
        object.__setattr__(self, "a_nodes", tuple(self.a_nodes))
        if self.feature_dim is None and self.nodes:
            object.__setattr__(self, "feature_dim", len(self.nodes[0].feature))

    @property
    def context_relation(self) -> int:
        return 2 * self.num_relations

    @property
    def relation_vocab_size(self) -> int:
        """Size of the relation one-hot: relations, inverses and the context link."""
        return 2 * self.num_relations + 1

    @cached_property
    def node_index(self) -> dict[int, Node]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def context_node(self) -> int | None:
        for n in self.nodes:
            if n.node_type == NodeType.Z:
                return n.id
        return None

    def node(self, node_id: int) -> Node:
        return self.node_index[node_id]

    def feature(self, node_id: int) -> np.ndarray:
        return np.asarray(self.node_index[node_id].feature, dtype=np.float64)

    def inverse_relation(self, relation: int) -> int:
        if relation == self.context_relation:
            return relation
        if relation < self.num_relations:
            return relation + self.num_relations
        return relation - self.num_relations

    @cached_property
    def doubled_edges(self) -> tuple[Edge, ...]:
        """Stored edges plus their inverses, deduplicated and sorted.

        Context edges are stored in both directions already and map to
        themselves under inversion.
        """
        out = set(self.edges)
        out.update(Edge(e.tail, self.inverse_relation(e.relation), e.head) for e in self.edges)
        return tuple(sorted(out, key=lambda e: (e.head, e.relation, e.tail)))

    @cached_property
    def adjacency(self) -> dict[int, tuple[tuple[int, int], ...]]:
        """node id -> sorted ((relation, neighbour), ...) over doubled edges."""
        adj: dict[int, list[tuple[int, int]]] = {n.id: [] for n in self.nodes}
        for e in self.doubled_edges:
            adj[e.head].append((e.relation, e.tail))
        return {k: tuple(sorted(v)) for k, v in adj.items()}


def validate(graph: Subgraph) -> None:
    """Raise a :class:`GraphError` subclass naming the first violated invariant."""
    ids = set()
    for n in graph.nodes:
        if n.id in ids:
            raise DuplicateNodeId(f"duplicate node id {n.id}")
        ids.add(n.id)
        if not isinstance(n.node_type, NodeType):
            raise GraphError(f"node {n.id} has invalid type {n.node_type!r}")
    dims = {len(n.feature) for n in graph.nodes}
    if len(dims) > 1:
        raise GraphError(f"non-uniform feature dimensions {sorted(dims)}")

    z_nodes = [n.id for n in graph.nodes if n.node_type == NodeType.Z]
    if len(z_nodes) > 1:
        raise MultipleContextNodes(f"context nodes {z_nodes}")
    z = z_nodes[0] if z_nodes else None

    if graph.num_relations < 0:
        raise RelationOutOfRange(f"negative num_relations {graph.num_relations}")
    for e in graph.edges:
        for end in (e.head, e.tail):
            if end not in ids:
                raise DanglingEdge(f"edge {(e.head, e.relation, e.tail)} references missing node {end}")
        if e.head == e.tail:
            # a looped edge would be a 1-hop token that revisits its node
            raise SelfLoop(f"edge {(e.head, e.relation, e.tail)} is a self-loop")
        in_range = 0 <= e.relation < 2 * graph.num_relations
        is_context = e.relation == graph.context_relation and z is not None and z in (e.head, e.tail)
        if not (in_range or is_context):
            raise RelationOutOfRange(
                f"edge {(e.head, e.relation, e.tail)}: relation must be < {2 * graph.num_relations}"
            )

    types = {n.id: n.node_type for n in graph.nodes}
    for name, members, want in (("q_nodes", graph.q_nodes, NodeType.Q), ("a_nodes", graph.a_nodes, NodeType.A)):
        for v in members:
            if v not in types:
                raise InvalidNodeSet(f"{name} lists missing node {v}")
            if types[v] != want:
                raise InvalidNodeSet(f"{name} lists node {v} of type {types[v].name}")
    overlap = set(graph.q_nodes) & set(graph.a_nodes)
    if overlap:
        raise InvalidNodeSet(f"nodes {sorted(overlap)} are in both q_nodes and a_nodes")


def insert_context_node(graph: Subgraph, feature_dim: int | None = None) -> Subgraph:
    """Add the Z hub linked both ways to every question and answer entity.

    Its feature is the mean of existing node features (zero vector when the
    graph is empty; ``feature_dim`` sets its length then). The new id is one
    past the largest existing id.
    """
    if graph.context_node is not None:
        raise AlreadyHasContext(f"graph already has context node {graph.context_node}")
    dim = graph.feature_dim or feature_dim or 0
    if graph.nodes:
        mean = np.mean([n.feature for n in graph.nodes], axis=0)
        z_feature = tuple(float(x) for x in mean)
        z_id = max(n.id for n in graph.nodes) + 1
    else:
        z_feature = tuple(0.0 for _ in range(dim))
        z_id = 0
    z = Node(z_id, NodeType.Z, "", z_feature)
    rel = graph.context_relation
    new_edges = []
    for v in (*graph.q_nodes, *graph.a_nodes):
        new_edges.append(Edge(z_id, rel, v))
        new_edges.append(Edge(v, rel, z_id))
    return replace(graph, nodes=graph.nodes + (z,), edges=graph.edges + tuple(new_edges))


def build_subgraph(
    nodes: Iterable[tuple[int, str, str, Iterable[float]]],
    edges: Iterable[tuple[int, int, int]],
    num_relations: int,
    q_nodes: Iterable[int] = (),
    a_nodes: Iterable[int] = (),
) -> Subgraph:
    """Convenience constructor from plain tuples ``(id, type, surface, feature)``
    and ``(head, relation, tail)``."""
    node_objs = tuple(
        Node(int(i), NodeType[t] if isinstance(t, str) else NodeType(t), s, tuple(float(x) for x in f))
        for i, t, s, f in nodes
    )
    edge_objs = tuple(Edge(int(h), int(r), int(t)) for h, r, t in edges)
    return Subgraph(node_objs, edge_objs, int(num_relations), tuple(q_nodes), tuple(a_nodes))
