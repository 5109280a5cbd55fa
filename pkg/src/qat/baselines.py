"""Node-centric and relation-network KG encoders used for comparison."""

from __future__ import annotations

import numpy as np

from .autodiff import Module, Tensor, as_tensor, matmul
from .encoders import MLP, Linear
from .graph import NodeType, Subgraph
from .metapath import MetaPath, feature_dim, featurize


def qa_edges(graph: Subgraph) -> list[MetaPath]:
    """Stored edges running from a question entity to an answer entity."""
    q, a = set(graph.q_nodes), set(graph.a_nodes)
    return [MetaPath((e.head, e.tail), (e.relation,)) for e in graph.edges if e.head in q and e.tail in a]


def node_inputs(graph: Subgraph) -> np.ndarray:
    """Rows ``[feature, phi(node)]``, one per node in graph order."""
    dim = (graph.feature_dim or 0) + len(NodeType)
    if not graph.nodes:
        return np.zeros((0, dim))
    return np.stack([np.concatenate([np.asarray(n.feature, dtype=np.float64), n.node_type.one_hot()]) for n in graph.nodes])


class RnEncoder(Module):
    """Mean of an MLP applied to each question->answer edge feature."""

    def __init__(self, rng: np.random.Generator, num_relations: int, node_dim: int, d_model: int):
        self.d_model = d_model
        self.g = MLP(rng, feature_dim(1, num_relations, node_dim), d_model, d_model)

    def pooled(self, features: np.ndarray, owners: np.ndarray, num_groups: int) -> Tensor:
        """Mean of ``g`` over rows grouped by ``owners``; empty groups give zeros."""
        if len(features) == 0:
            return Tensor(np.zeros((num_groups, self.d_model)))
        pool = np.zeros((num_groups, len(features)))
        pool[owners, np.arange(len(features))] = 1.0
        counts = pool.sum(axis=1, keepdims=True)
        pool = np.divide(pool, counts, out=np.zeros_like(pool), where=counts > 0)
        return matmul(as_tensor(pool), self.g(as_tensor(features)))

    def __call__(self, graph: Subgraph) -> Tensor:
        edges = qa_edges(graph)
        feats = np.stack([featurize(p, graph).vector for p in edges]) if edges else np.zeros((0, 1))
        out = self.pooled(feats, np.zeros(len(edges), dtype=int), 1)
        return out.reshape(self.d_model)


def rn_encode(encoder: RnEncoder, graph: Subgraph) -> Tensor:
    return encoder(graph)


class NodeTokenEncoder(Module):
    """Affine map of ``[feature, phi(node)]`` per node."""

    def __init__(self, rng: np.random.Generator, node_dim: int, d_model: int):
        self.d_model = d_model
        self.proj = Linear(rng, node_dim + len(NodeType), d_model)

    def __call__(self, graph: Subgraph) -> Tensor:
        return self.encode_matrix(node_inputs(graph))

    def encode_matrix(self, rows: np.ndarray) -> Tensor:
        if len(rows) == 0:
            return Tensor(np.zeros((0, self.d_model)))
        return self.proj(as_tensor(rows))


def node_token_encode(encoder: NodeTokenEncoder, graph: Subgraph) -> Tensor:
    return encoder(graph)
