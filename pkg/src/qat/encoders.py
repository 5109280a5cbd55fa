"""Meta-path token encoders and the stub context encoder."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import Module, Parameter, Tensor, add, as_tensor, concat, gelu, init_uniform, matmul, take_rows
from .metapath import RawPathFeature, feature_dim

PAD, UNK, CLS, SEP = "[pad]", "[unk]", "[cls]", "[sep]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP)


class UnknownHopCount(KeyError):
    pass


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = Parameter(init_uniform(rng, (d_in, d_out), d_in))
        self.bias = Parameter(init_uniform(rng, (d_out,), d_in)) if bias else None

    def __call__(self, x) -> Tensor:
        y = matmul(x, self.weight)
        return add(y, self.bias) if self.bias is not None else y


class MLP(Module):
    """Two affine maps with a GELU between them."""

    def __init__(self, rng: np.random.Generator, d_in: int, d_hidden: int, d_out: int):
        self.fc1 = Linear(rng, d_in, d_hidden)
        self.fc2 = Linear(rng, d_hidden, d_out)

    def __call__(self, x) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class PathEncoder(Module):
    """A separate MLP per hop count, all mapping to ``d_model``."""

    def __init__(self, rng, max_hops: int, num_relations: int, node_dim: int, d_model: int, d_hidden: int | None = None):
        self.max_hops = max_hops
        self.num_relations = num_relations
        self.node_dim = node_dim
        self.d_model = d_model
        self.nets = {
            k: MLP(rng, feature_dim(k, num_relations, node_dim), d_hidden or d_model, d_model)
            for k in range(1, max_hops + 1)
        }

    def input_dim(self, hops: int) -> int:
        return feature_dim(hops, self.num_relations, self.node_dim)

    def encode_matrix(self, hops: int, features: np.ndarray) -> Tensor:
        if hops not in self.nets:
            raise UnknownHopCount(f"no encoder for {hops}-hop paths (max_hops={self.max_hops})")
        return self.nets[hops](as_tensor(features))

    def __call__(self, features: Sequence[RawPathFeature]) -> Tensor:
        """Encode in input order; returns ``(len(features), d_model)``."""
        if not features:
            return Tensor(np.zeros((0, self.d_model)))
        hops = np.array([f.hops for f in features])
        blocks, order = [], []
        for k in sorted(set(hops.tolist())):
            sel = np.flatnonzero(hops == k)
            blocks.append(self.encode_matrix(k, np.stack([features[i].vector for i in sel])))
            order.extend(sel.tolist())
        stacked = concat(blocks, axis=0)
        inverse = np.empty(len(order), dtype=np.intp)
        inverse[np.array(order)] = np.arange(len(order))
        return take_rows(stacked, inverse)


def encode_paths(encoder: PathEncoder, features: Sequence[RawPathFeature]) -> list[np.ndarray]:
    out = encoder(features)
    return [row for row in out.data]


class Vocabulary:
    def __init__(self, tokens: Sequence[str] = ()):
        self.tokens: list[str] = list(SPECIAL_TOKENS)
        for t in tokens:
            if t not in SPECIAL_TOKENS:
                self.tokens.append(t)
        self.index = {}
        for i, t in enumerate(self.tokens):
            self.index.setdefault(t, i)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    @classmethod
    def from_corpus(cls, sentences) -> Vocabulary:
        seen: dict[str, None] = {}
        for s in sentences:
            for w in s:
                seen.setdefault(w, None)
        return cls(sorted(seen))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> Vocabulary:
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        return cls.from_tokens(tokens)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> Vocabulary:
        """Keep ``tokens`` in order (position is the id); specials missing
        from the list go at the end."""
        tokens = list(tokens)
        tokens += [t for t in SPECIAL_TOKENS if t not in tokens]
        vocab = cls.__new__(cls)
        vocab.tokens = tokens
        vocab.index = {}
        for i, t in enumerate(tokens):
            vocab.index.setdefault(t, i)
        return vocab


def context_sequence(question: Sequence[str], answer: Sequence[str]) -> list[str]:
    return [CLS, *question, SEP, *answer]


class ContextEncoder(Module):
    """Trainable embedding lookup over ``[cls] question [sep] answer``."""

    def __init__(self, rng: np.random.Generator, vocab: Vocabulary, d_model: int):
        self.vocab = vocab
        self.d_model = d_model
        self.table = Parameter(init_uniform(rng, (len(vocab), d_model), d_model))

    def ids(self, question: Sequence[str], answer: Sequence[str]) -> np.ndarray:
        return np.array(self.vocab.ids(context_sequence(question, answer)), dtype=np.intp)

    def __call__(self, question: Sequence[str], answer: Sequence[str]) -> Tensor:
        return take_rows(self.table, self.ids(question, answer))


def encode_context(encoder: ContextEncoder, question: Sequence[str], answer: Sequence[str]) -> Tensor:
    return encoder(question, answer)
