"""Word-embedding entity matching and the cross-modal relative position bias."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Module, Parameter, Tensor, add, as_tensor, index, mul, reshape

OMEGA1 = 1
OMEGA2 = 2

ORIENTATIONS = ("literal", "figure")

# similarities this close to the best one count as tied (parallel phrase
# vectors differ by an ulp or so after averaging and normalising)
TIE_TOL = 1e-12


class SizeMismatch(ValueError):
    pass


class WordEmbeddings:
    """word -> vector; unknown words map to the zero vector."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int | None = None):
        if dim is None:
            dim = len(next(iter(vectors.values()))) if vectors else 0
        self.dim = dim
        self.vectors = {}
        for w, v in vectors.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (dim,):
                raise ValueError(f"embedding for {w!r} has shape {v.shape}, expected ({dim},)")
            self.vectors[w] = v
        self._zero = np.zeros(dim)

    def __contains__(self, word: str) -> bool:
        return word in self.vectors

    def __len__(self):
        return len(self.vectors)

    def __getitem__(self, word: str) -> np.ndarray:
        return self.vectors.get(word, self._zero)

    def phrase(self, surface: str) -> np.ndarray:
        return phrase_embedding(surface, self)

    def scaled(self, factor: float) -> WordEmbeddings:
        return WordEmbeddings({w: v * factor for w, v in self.vectors.items()}, self.dim)


def load_embeddings(path) -> WordEmbeddings:
    """Read ``word v1 v2 ... vd`` lines (whitespace separated, UTF-8)."""
    vectors = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            word, vals = parts[0], parts[1:]
            if dim is None:
                dim = len(vals)
            elif len(vals) != dim:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(vals)}")
            vectors[word] = np.array([float(x) for x in vals])
    return WordEmbeddings(vectors, dim or 0)


def save_embeddings(path, emb: WordEmbeddings):
    with open(path, "w", encoding="utf-8") as fh:
        for w, v in emb.vectors.items():
            fh.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")


def random_embeddings(words: Iterable[str], dim: int = 50, seed: int = 0) -> WordEmbeddings:
    """Gaussian vector per word, seeded by (seed, word) so a word's vector
    does not depend on which other words are present."""
    vecs = {}
    for w in sorted(set(words)):
        rng = np.random.default_rng([seed, zlib.crc32(w.encode("utf-8"))])
        vecs[w] = rng.standard_normal(dim)
    return WordEmbeddings(vecs, dim)


def phrase_embedding(surface: str, emb: WordEmbeddings) -> np.ndarray:
    """Average of the embeddings of the known underbar-separated words."""
    words = [w for w in surface.split("_") if w]
    known = [emb.vectors[w] for w in words if w in emb.vectors]
    if not known:
        return np.zeros(emb.dim)
    return np.mean(known, axis=0)


@dataclass
class RpbMask:
    """Sparse selector map over the joint token sequence.

    ``cells`` maps ``(row, col)`` to :data:`OMEGA1` or :data:`OMEGA2`; every
    other cell carries zero bias. LM tokens occupy ``0 .. n_lm-1`` and KG
    tokens ``n_lm .. n_lm+n_kg-1``.
    """

    n_lm: int
    n_kg: int
    cells: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.n_lm + self.n_kg

    def selectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense 0/1 matrices for the omega1 and omega2 slots."""
        m1 = np.zeros((self.size, self.size))
        m2 = np.zeros((self.size, self.size))
        for (r, c), slot in self.cells.items():
            (m1 if slot == OMEGA1 else m2)[r, c] = 1.0
        return m1, m2

    def permute_kg(self, perm: Sequence[int]) -> RpbMask:
        """Mask for the KG block reordered so new KG position ``i`` holds old ``perm[i]``."""
        inv = np.empty(len(perm), dtype=int)
        inv[np.asarray(perm)] = np.arange(len(perm))

        def move(p):
            return p if p < self.n_lm else self.n_lm + int(inv[p - self.n_lm])

        return RpbMask(self.n_lm, self.n_kg, {(move(r), move(c)): s for (r, c), s in self.cells.items()})


def _normalize_rows(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(m, axis=-1)
    ok = norms > 0
    out = np.zeros_like(m)
    out[ok] = m[ok] / norms[ok, None]
    return out, ok


def _first_best(sim: np.ndarray, axis: int) -> np.ndarray:
    """Lowest index whose similarity is within TIE_TOL of the maximum."""
    top = sim.max(axis=axis, keepdims=True)
    return np.argmax(sim >= top - TIE_TOL, axis=axis)


def build_mask(
    kg_surfaces: Sequence[tuple[str, str]],
    lm_tokens: Sequence[tuple[int, str]],
    n_lm: int,
    emb: WordEmbeddings,
    orientation: str = "literal",
) -> RpbMask:
    """Match KG token endpoints to LM words by cosine similarity.

    ``kg_surfaces`` holds ``(head_surface, tail_surface)`` per KG token;
    ``lm_tokens`` holds ``(position, word)`` for LM content positions only
    (cls/sep left out by the caller). Each KG endpoint marks its most
    similar LM position with the omega2 slot at ``(lm, kg)``; each LM word
    marks its most similar KG token with the omega1 slot at ``(kg, lm)``.
    Zero-vector phrases take no part and ties (within ``TIE_TOL``) go to
    the lowest index. The
    ``figure`` orientation transposes every marked cell.
    """
    if orientation not in ORIENTATIONS:
        raise ValueError(f"orientation must be one of {ORIENTATIONS}, got {orientation!r}")
    n_kg = len(kg_surfaces)
    mask = RpbMask(n_lm, n_kg)
    if n_kg == 0 or not lm_tokens:
        return mask

    lm_pos = np.array([p for p, _ in lm_tokens], dtype=int)
    lm_vec, lm_ok = _normalize_rows(np.array([emb[w] for _, w in lm_tokens]).reshape(len(lm_tokens), emb.dim))
    cache: dict[str, np.ndarray] = {}

    def phr(s):
        if s not in cache:
            cache[s] = phrase_embedding(s, emb)
        return cache[s]

    ends = np.array([[phr(h), phr(t)] for h, t in kg_surfaces]).reshape(n_kg, 2, emb.dim)
    kg_vec, kg_ok = _normalize_rows(ends)
    if not lm_ok.any() or not kg_ok.any():
        return mask

    # sim[j, v, i]: KG token j endpoint v against LM content token i
    sim = np.einsum("jvd,id->jvi", kg_vec, lm_vec)
    sim = np.where(kg_ok[:, :, None] & lm_ok[None, None, :], sim, -np.inf)

    cells: dict[tuple[int, int], int] = {}
    best_lm = _first_best(sim, axis=2)
    for j in range(n_kg):
        for v in range(2):
            if kg_ok[j, v]:
                cells[(int(lm_pos[best_lm[j, v]]), n_lm + j)] = OMEGA2

    per_token = sim.max(axis=1)  # (n_kg, n_lm_content), max over endpoints
    best_kg = _first_best(per_token, axis=0)
    for i in range(len(lm_tokens)):
        if lm_ok[i]:
            cells[(n_lm + int(best_kg[i]), int(lm_pos[i]))] = OMEGA1

    if orientation == "figure":
        cells = {(c, r): s for (r, c), s in cells.items()}
    mask.cells = cells
    return mask


class OmegaParams(Module):
    """One trainable (omega1, omega2) pair per attention head per layer."""

    def __init__(self, num_layers: int, num_heads: int, init: float = 0.0):
        self.omega1 = Parameter(np.full((num_layers, num_heads), init), name="omega1")
        self.omega2 = Parameter(np.full((num_layers, num_heads), init), name="omega2")

    @property
    def num_layers(self) -> int:
        return self.omega1.shape[0]

    @property
    def num_heads(self) -> int:
        return self.omega1.shape[1]


def realize_omega(mask: RpbMask, params: OmegaParams, layer: int, head: int, size: int | None = None) -> Tensor:
    """Dense ``n x n`` bias for one (layer, head); differentiable in omega."""
    if size is not None and size != mask.size:
        raise SizeMismatch(f"mask covers {mask.size} tokens, attention has {size}")
    m1, m2 = mask.selectors()
    w1 = index(params.omega1, (layer, head))
    w2 = index(params.omega2, (layer, head))
    return add(mul(w1, m1), mul(w2, m2))


def omega_bias(sel1: np.ndarray, sel2: np.ndarray, params: OmegaParams, layer: int) -> Tensor:
    """Batched bias ``(B, H, n, n)`` from selector stacks ``(B, n, n)``."""
    h = params.num_heads
    w1 = reshape(index(params.omega1, layer), (1, h, 1, 1))
    w2 = reshape(index(params.omega2, layer), (1, h, 1, 1))
    return add(mul(w1, as_tensor(sel1[:, None])), mul(w2, as_tensor(sel2[:, None])))
