"""Dataset files and synthetic tasks whose answers are only visible in the KG."""

from __future__ import annotations

import json
import zlib
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import Edge, GraphError, Node, NodeType, Subgraph, validate

TASKS = ("hop1", "hop2", "distractor")


class ParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class ValidationError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


@dataclass(frozen=True)
class Choice:
    text: tuple[str, ...]
    graph: Subgraph


@dataclass(frozen=True)
class McqaExample:
    question: tuple[str, ...]
    choices: tuple[Choice, ...]
    answer: int

    def __post_init__(self):
        if len(self.choices) < 2:
            raise ValueError(f"need at least 2 choices, got {len(self.choices)}")
        if not 0 <= self.answer < len(self.choices):
            raise ValueError(f"answer index {self.answer} out of range for {len(self.choices)} choices")


# ---------------------------------------------------------------------------
# JSON lines
# ---------------------------------------------------------------------------

def graph_to_dict(g: Subgraph) -> dict:
    return {
        "nodes": [
            {"id": n.id, "type": n.node_type.name, "surface": n.surface, "feature": list(n.feature)} for n in g.nodes
        ],
        "edges": [[e.head, e.relation, e.tail] for e in g.edges],
        "num_relations": g.num_relations,
        "q_nodes": list(g.q_nodes),
        "a_nodes": list(g.a_nodes),
    }


def graph_from_dict(d: dict) -> Subgraph:
    nodes = tuple(
        Node(int(n["id"]), NodeType[n["type"]], str(n.get("surface", "")), tuple(float(x) for x in n.get("feature", ())))
        for n in d["nodes"]
    )
    edges = tuple(Edge(int(h), int(r), int(t)) for h, r, t in d["edges"])
    return Subgraph(nodes, edges, int(d["num_relations"]), tuple(d.get("q_nodes", ())), tuple(d.get("a_nodes", ())))


def example_to_dict(ex: McqaExample) -> dict:
    return {
        "question": list(ex.question),
        "answer": ex.answer,
        "choices": [{"text": list(c.text), "graph": graph_to_dict(c.graph)} for c in ex.choices],
    }


def example_from_dict(d: dict) -> McqaExample:
    choices = tuple(Choice(tuple(c["text"]), graph_from_dict(c["graph"])) for c in d["choices"])
    return McqaExample(tuple(d["question"]), choices, int(d["answer"]))


def load_dataset(path) -> list[McqaExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                ex = example_from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(lineno, f"{type(exc).__name__}: {exc}") from exc
            for c in ex.choices:
                try:
                    validate(c.graph)
                except GraphError as exc:
                    raise ValidationError(lineno, f"{type(exc).__name__}: {exc}") from exc
            out.append(ex)
    return out


def save_dataset(path, examples: Sequence[McqaExample]):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_dict(ex)) + "\n")


def dataset_words(examples: Sequence[McqaExample]) -> set[str]:
    """Every question/answer word and every underbar-separated surface word."""
    words = set()
    for ex in examples:
        words.update(ex.question)
        for c in ex.choices:
            words.update(c.text)
            for n in c.graph.nodes:
                words.update(w for w in n.surface.split("_") if w)
    return words


# ---------------------------------------------------------------------------
# synthetic tasks
# ---------------------------------------------------------------------------

# Question and answer entities come from small pools so that every
# (question, answer) word pair recurs across examples with mixed labels and
# cannot be memorized as a shortcut.
QUESTION_WORDS = tuple(f"ent{i:03d}" for i in range(10))
ANSWER_WORDS = tuple(f"ent{i:03d}" for i in range(10, 22))
MID_WORDS = tuple(f"ent{i:03d}" for i in range(22, 60))
TEMPLATE = ("what", "relates", "to")


def word_feature(word: str, dim: int) -> tuple[float, ...]:
    """Fixed pseudo-random node feature for a surface word."""
    rng = np.random.default_rng(zlib.crc32(word.encode("utf-8")))
    return tuple(float(x) for x in np.round(rng.standard_normal(dim), 6))


def _node(i: int, t: NodeType, word: str, dim: int) -> Node:
    return Node(i, t, word, word_feature(word, dim))


def _hop1_graph(rng, qword, aword, signal, num_relations, dim) -> Subgraph:
    mids = [str(w) for w in rng.choice(MID_WORDS, size=2, replace=False)]
    nodes = (
        _node(0, NodeType.Q, qword, dim),
        _node(1, NodeType.A, aword, dim),
        _node(2, NodeType.O, mids[0], dim),
        _node(3, NodeType.O, mids[1], dim),
    )
    noise = rng.integers(2, num_relations, size=3)
    edges = (
        Edge(0, signal, 1),
        Edge(0, int(noise[0]), 2),
        Edge(2, int(noise[1]), 1),
        Edge(3, int(noise[2]), 0),
    )
    return Subgraph(nodes, edges, num_relations, (0,), (1,))


def _hop2_graph(qword, aword, mid, pairs, num_relations, dim) -> Subgraph:
    # the intermediates share one surface (hence one feature) so 1-hop
    # translation vectors cannot be chained to recover the composition
    nodes = (
        _node(0, NodeType.Q, qword, dim),
        _node(1, NodeType.A, aword, dim),
        *(_node(2 + i, NodeType.O, mid, dim) for i in range(len(pairs))),
    )
    edges = []
    for i, (r1, r2) in enumerate(pairs):
        edges.append(Edge(0, int(r1), 2 + i))
        edges.append(Edge(2 + i, int(r2), 1))
    return Subgraph(nodes, tuple(edges), num_relations, (0,), (1,))


def gen_synthetic(
    task: str,
    n: int,
    seed: int = 0,
    num_choices: int = 4,
    num_relations: int = 6,
    node_dim: int = 8,
) -> list[McqaExample]:
    """Generate ``n`` questions whose correct choice is identifiable only from the KG.

    hop1: the correct choice has a question->answer edge of relation 0, the
    others a decoy relation 1. hop2: each choice has three question->x->answer
    paths. The correct one composes (0, 1) and (c, d), the others (0, d) and
    (c, 1), plus a shared noise path, so every choice holds the same relation
    multiset and only the 2-hop composition differs. distractor: hop1 with
    answer-node surfaces shuffled so they no longer echo the choice text.
    """
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    if n <= 0:
        raise ValueError("n must be positive")
    if num_relations < 4:
        raise ValueError("synthetic tasks need at least 4 relations")
    if num_choices > len(ANSWER_WORDS):
        raise ValueError(f"at most {len(ANSWER_WORDS)} choices supported")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        qword = str(rng.choice(QUESTION_WORDS))
        answers = [str(w) for w in rng.choice(ANSWER_WORDS, size=num_choices, replace=False)]
        question = TEMPLATE + (qword,)
        answer = int(rng.integers(num_choices))
        graphs = []
        if task in ("hop1", "distractor"):
            surfaces = list(answers)
            if task == "distractor":
                perm = rng.permutation(num_choices)
                while np.any(perm == np.arange(num_choices)):
                    perm = rng.permutation(num_choices)
                surfaces = [answers[i] for i in perm]
            for c in range(num_choices):
                signal = 0 if c == answer else 1
                graphs.append(_hop1_graph(rng, qword, surfaces[c], signal, num_relations, node_dim))
        else:
            c_rel, d_rel, e_rel, f_rel = (int(x) for x in rng.integers(2, num_relations, size=4))
            mid = str(rng.choice(MID_WORDS))
            for c in range(num_choices):
                if c == answer:
                    pairs = [(0, 1), (c_rel, d_rel), (e_rel, f_rel)]
                else:
                    pairs = [(0, d_rel), (c_rel, 1), (e_rel, f_rel)]
                graphs.append(_hop2_graph(qword, answers[c], mid, pairs, num_relations, node_dim))
        choices = tuple(Choice((answers[c],), graphs[c]) for c in range(num_choices))
        out.append(McqaExample(question, choices, answer))
    return out


def relation_histogram(graph: Subgraph) -> Counter:
    return Counter(e.relation for e in graph.edges)
