"""Question-answer scoring pipeline: tokenize, encode, fuse with RASA, score."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Module, Tensor, concat, index, reshape, take_rows
from .baselines import NodeTokenEncoder, RnEncoder, node_inputs, qa_edges
from .data import Choice, McqaExample
from .encoders import CLS, SEP, ContextEncoder, Linear, PathEncoder, Vocabulary, context_sequence
from .graph import NodeType, Subgraph, insert_context_node
from .matching import RpbMask, WordEmbeddings, build_mask
from .metapath import MetaPath, cap_tokens, drop_mask, enumerate_metapaths, featurize
from .rasa import KG, LM, RasaStack

KG_ENCODERS = ("metapath", "node", "rn", "none")


@dataclass(frozen=True)
class ModelConfig:
    num_relations: int
    node_dim: int
    d_model: int = 64
    num_layers: int = 2
    num_heads: int = 2
    max_hops: int = 2
    kg_encoder: str = "metapath"
    rpb: bool = True
    rpb_orientation: str = "literal"
    token_cap: int | None = 400
    ffn_mult: int = 4

    def __post_init__(self):
        if self.kg_encoder not in KG_ENCODERS:
            raise ValueError(f"kg_encoder must be one of {KG_ENCODERS}, got {self.kg_encoder!r}")
        if self.max_hops < 1:
            raise ValueError("max_hops must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PreparedChoice:
    """Everything about one (question, choice) pair that does not depend on parameters."""

    lm_ids: np.ndarray
    lm_labels: list[str]
    lm_content: list[tuple[int, str]]
    kg_hops: np.ndarray
    kg_features: list[np.ndarray]
    kg_labels: list[str]
    kg_surfaces: list[tuple[str, str]]
    mask: RpbMask | None
    paths: list[MetaPath] = field(default_factory=list)

    @property
    def n_lm(self) -> int:
        return len(self.lm_ids)

    @property
    def n_kg(self) -> int:
        return len(self.kg_labels)


@dataclass
class PreparedExample:
    choices: list[PreparedChoice]
    answer: int


@dataclass
class ForwardResult:
    logits: Tensor
    attention: list[np.ndarray]
    lengths: np.ndarray
    n_lm: np.ndarray
    masks: list[RpbMask | None]
    labels: list[list[str]]


def _path_label(path: MetaPath, graph: Subgraph) -> str:
    parts = []
    for i, v in enumerate(path.node_ids):
        node = graph.node(v)
        parts.append(node.surface or f"<{node.node_type.name}>")
        if i < path.hops:
            parts.append(f"-r{path.relations[i]}->")
    return "".join(parts)


class QATModel(Module):
    def __init__(self, config: ModelConfig, vocab: Vocabulary, seed: int = 0, embeddings: WordEmbeddings | None = None):
        if config.rpb and config.kg_encoder != "none" and embeddings is None:
            raise ValueError("cross-modal bias needs word embeddings")
        rng = np.random.default_rng(seed)
        self.config = config
        self.embeddings = embeddings
        d = config.d_model
        self.context = ContextEncoder(rng, vocab, d)
        if config.kg_encoder == "metapath":
            self.kg = PathEncoder(rng, config.max_hops, config.num_relations, config.node_dim, d)
        elif config.kg_encoder == "node":
            self.kg = NodeTokenEncoder(rng, config.node_dim, d)
        elif config.kg_encoder == "rn":
            self.kg = RnEncoder(rng, config.num_relations, config.node_dim, d)
        else:
            self.kg = None
        self.stack = RasaStack(rng, d, config.num_layers, config.num_heads, rpb=config.rpb, ffn_mult=config.ffn_mult)
        self.head = Linear(rng, d, 1)

    @property
    def vocab(self) -> Vocabulary:
        return self.context.vocab

    @property
    def omega(self):
        return self.stack.omega

    # -- preparation ---------------------------------------------------------

    def check_graph(self, graph: Subgraph):
        cfg = self.config
        if graph.num_relations != cfg.num_relations:
            raise ValueError(f"graph has {graph.num_relations} relations, model expects {cfg.num_relations}")
        if graph.nodes and (graph.feature_dim or 0) != cfg.node_dim:
            raise ValueError(f"graph node features have dim {graph.feature_dim}, model expects {cfg.node_dim}")

    def prepare(self, question: Sequence[str], answer: Sequence[str], graph: Subgraph) -> PreparedChoice:
        cfg = self.config
        self.check_graph(graph)
        if graph.context_node is None:
            graph = insert_context_node(graph, cfg.node_dim)
        labels = context_sequence(question, answer)
        lm_ids = self.context.ids(question, answer)
        content = [(i, w) for i, w in enumerate(labels) if w not in (CLS, SEP)]

        hops, feats, kg_labels, surfaces, paths = [], [], [], [], []
        if cfg.kg_encoder == "metapath":
            paths = cap_tokens(enumerate_metapaths(graph, cfg.max_hops), cfg.token_cap)
            for p in paths:
                hops.append(p.hops)
                feats.append(featurize(p, graph).vector)
                kg_labels.append(_path_label(p, graph))
                surfaces.append((graph.node(p.head).surface, graph.node(p.tail).surface))
        elif cfg.kg_encoder == "node":
            rows = node_inputs(graph)
            for n, row in zip(graph.nodes, rows):
                hops.append(0)
                feats.append(row)
                kg_labels.append(n.surface or f"<{n.node_type.name}>")
                surfaces.append((n.surface, n.surface))
        elif cfg.kg_encoder == "rn":
            edges = qa_edges(graph)
            hops.append(0)
            rows = [featurize(p, graph).vector for p in edges]
            feats.append(np.stack(rows) if rows else np.zeros((0, 0)))
            kg_labels.append("[rn]")
            surfaces.append(("", ""))

        mask = None
        if cfg.rpb:
            mask = self._mask(surfaces, content, len(labels))
        return PreparedChoice(
            lm_ids=lm_ids,
            lm_labels=list(labels),
            lm_content=content,
            kg_hops=np.array(hops, dtype=int),
            kg_features=feats,
            kg_labels=kg_labels,
            kg_surfaces=surfaces,
            mask=mask,
            paths=paths,
        )

    def _mask(self, surfaces, content, n_lm) -> RpbMask:
        if self.embeddings is None:
            return RpbMask(n_lm, len(surfaces))
        return build_mask(surfaces, content, n_lm, self.embeddings, self.config.rpb_orientation)

    def prepare_example(self, ex: McqaExample) -> PreparedExample:
        return PreparedExample([self.prepare(ex.question, c.text, c.graph) for c in ex.choices], ex.answer)

    # -- forward -------------------------------------------------------------

    def forward(
        self,
        choices: Sequence[PreparedChoice],
        training: bool = False,
        rng: np.random.Generator | None = None,
        drop_rate: float = 0.0,
        kg_order: Sequence[np.ndarray] | None = None,
    ) -> ForwardResult:
        """Score a batch of prepared choices; returns logits of shape ``(B,)``.

        Drop-MP applies to meta-path tokens when ``training``. ``kg_order``
        optionally reorders each choice's KG tokens (the mask follows).
        """
        cfg = self.config
        d = cfg.d_model
        b = len(choices)

        kept, masks = [], []
        for i, c in enumerate(choices):
            keep = np.arange(c.n_kg)
            mask = c.mask
            if cfg.kg_encoder == "metapath" and training and drop_rate > 0:
                keep = keep[drop_mask(c.n_kg, drop_rate, rng, training=True)]
                if cfg.rpb and len(keep) < c.n_kg:
                    mask = self._mask([c.kg_surfaces[j] for j in keep], c.lm_content, c.n_lm)
            if kg_order is not None:
                # reorder the cells too; re-matching could break ties differently
                order = np.asarray(kg_order[i], dtype=np.intp)
                keep = keep[order]
                if cfg.rpb:
                    mask = mask.permute_kg(order)
            kept.append(keep)
            masks.append(mask if cfg.rpb else None)

        lengths = np.array([c.n_lm + len(k) for c, k in zip(choices, kept)])
        n = int(lengths.max())

        blocks = [self.context.table]
        offset = self.context.table.shape[0]
        kg_rows = [np.zeros(len(k), dtype=np.intp) for k in kept]

        if cfg.kg_encoder == "metapath":
            for hop in range(1, cfg.max_hops + 1):
                owners = [(i, pos, j) for i, k in enumerate(kept) for pos, j in enumerate(k) if choices[i].kg_hops[j] == hop]
                if not owners:
                    continue
                feats = np.stack([choices[i].kg_features[j] for i, _, j in owners])
                blocks.append(self.kg.encode_matrix(hop, feats))
                for r, (i, pos, _) in enumerate(owners):
                    kg_rows[i][pos] = offset + r
                offset += len(owners)
        elif cfg.kg_encoder == "node":
            owners = [(i, pos, j) for i, k in enumerate(kept) for pos, j in enumerate(k)]
            if owners:
                blocks.append(self.kg.encode_matrix(np.stack([choices[i].kg_features[j] for i, _, j in owners])))
                for r, (i, pos, _) in enumerate(owners):
                    kg_rows[i][pos] = offset + r
                offset += len(owners)
        elif cfg.kg_encoder == "rn":
            feats, groups = [], []
            for i, c in enumerate(choices):
                f = c.kg_features[0]
                if len(f):
                    feats.append(f)
                    groups.extend([i] * len(f))
            mat = np.concatenate(feats) if feats else np.zeros((0, 0))
            blocks.append(self.kg.pooled(mat, np.array(groups, dtype=int), b))
            for i in range(b):
                kg_rows[i][:] = offset + i
            offset += b

        blocks.append(Tensor(np.zeros((1, d))))
        pad_row = offset
        source = concat(blocks, axis=0)

        rows = np.full((b, n), pad_row, dtype=np.intp)
        modality = np.full((b, n), LM, dtype=np.intp)
        key_mask = np.zeros((b, 1, 1, n))
        for i, c in enumerate(choices):
            rows[i, : c.n_lm] = c.lm_ids
            rows[i, c.n_lm : lengths[i]] = kg_rows[i]
            modality[i, c.n_lm : lengths[i]] = KG
            key_mask[i, ..., lengths[i] :] = -np.inf
        x = take_rows(source, rows)

        selectors = None
        if cfg.rpb:
            sel1 = np.zeros((b, n, n))
            sel2 = np.zeros((b, n, n))
            for i, m in enumerate(masks):
                m1, m2 = m.selectors()
                sel1[i, : m.size, : m.size] = m1
                sel2[i, : m.size, : m.size] = m2
            selectors = (sel1, sel2)

        z, maps = self.stack(x, modality, selectors, key_mask if n > lengths.min() else None)
        cls = index(z, (slice(None), 0))
        logits = reshape(self.head(cls), (b,))
        labels = [c.lm_labels + [c.kg_labels[j] for j in k] for c, k in zip(choices, kept)]
        return ForwardResult(logits, maps, lengths, np.array([c.n_lm for c in choices]), masks, labels)

    def score_choice(self, question: Sequence[str], answer: Sequence[str], graph: Subgraph) -> float:
        """Logit for one (question, choice) pair in eval mode."""
        return float(self.forward([self.prepare(question, answer, graph)]).logits.data[0])

    def choice_logits(self, examples: Sequence[PreparedExample], training=False, rng=None, drop_rate=0.0):
        """Forward every choice of every example; returns ``(Q, C_max)`` logits
        (``-inf`` where a question has fewer choices) and the raw result."""
        flat = [c for ex in examples for c in ex.choices]
        res = self.forward(flat, training=training, rng=rng, drop_rate=drop_rate)
        cmax = max(len(ex.choices) for ex in examples)
        pad = len(flat)
        idx = np.full((len(examples), cmax), pad, dtype=np.intp)
        k = 0
        for q, ex in enumerate(examples):
            idx[q, : len(ex.choices)] = np.arange(k, k + len(ex.choices))
            k += len(ex.choices)
        padded = concat([res.logits, Tensor(np.array([-np.inf]))], axis=0)
        return index(padded, idx), res
