"""Relation-aware self-attention layers over joint LM + KG token sets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Module,
    Parameter,
    Tensor,
    add,
    as_tensor,
    init_uniform,
    layer_norm,
    matmul,
    reshape,
    scale,
    softmax,
    take_rows,
    transpose,
)
from .encoders import MLP, Linear
from .matching import OmegaParams, RpbMask, SizeMismatch, omega_bias

LM, KG = 0, 1


class LayerNorm(Module):
    def __init__(self, d_model: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(d_model))
        self.bias = Parameter(np.zeros(d_model))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class ModalityEmbeddings(Module):
    """Row 0 is e_LM, row 1 is e_KG."""

    def __init__(self, rng: np.random.Generator, d_model: int):
        self.table = Parameter(init_uniform(rng, (2, d_model), d_model))

    def __call__(self, modality_ids: np.ndarray) -> Tensor:
        return take_rows(self.table, modality_ids)


class RasaLayer(Module):
    def __init__(self, rng: np.random.Generator, d_model: int, num_heads: int, ffn_mult: int = 4):
        if d_model % num_heads:
            raise ValueError(f"num_heads={num_heads} must divide d_model={d_model}")
        self.d_model = d_model
        self.num_heads = num_heads
        self.ln1 = LayerNorm(d_model)
        self.wq = Parameter(init_uniform(rng, (d_model, d_model), d_model))
        self.wk = Parameter(init_uniform(rng, (d_model, d_model), d_model))
        self.wv = Parameter(init_uniform(rng, (d_model, d_model), d_model))
        self.out = Linear(rng, d_model, d_model)
        self.ln2 = LayerNorm(d_model)
        self.ffn = MLP(rng, d_model, ffn_mult * d_model, d_model)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return transpose(reshape(x, (b, n, self.num_heads, self.head_dim)), (0, 2, 1, 3))

    def attention(self, x_qk: Tensor, x_v: Tensor, bias: Tensor | None, key_mask: np.ndarray | None):
        """Multi-head attention; returns the projected output and the weights."""
        b, n, d = x_v.shape
        q = self._split(matmul(x_qk, self.wq))
        k = self._split(matmul(x_qk, self.wk))
        v = self._split(matmul(x_v, self.wv))
        scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(self.head_dim))
        if bias is not None:
            scores = add(scores, bias)
        if key_mask is not None:
            scores = add(scores, as_tensor(key_mask))
        weights = softmax(scores, axis=-1)
        heads = matmul(weights, v)
        merged = reshape(transpose(heads, (0, 2, 1, 3)), (b, n, d))
        return self.out(merged), weights

    def __call__(self, x: Tensor, modality: Tensor, bias: Tensor | None = None, key_mask: np.ndarray | None = None):
        """Pre-norm residual block. ``modality`` is added to query/key inputs only."""
        h = self.ln1(x)
        attn, weights = self.attention(add(h, modality), h, bias, key_mask)
        z_hat = add(attn, x)
        z = add(self.ffn(self.ln2(z_hat)), z_hat)
        return z, weights


class RasaStack(Module):
    def __init__(self, rng: np.random.Generator, d_model: int, num_layers: int, num_heads: int, rpb: bool = True, ffn_mult: int = 4):
        self.modality = ModalityEmbeddings(rng, d_model)
        self.layers = [RasaLayer(rng, d_model, num_heads, ffn_mult) for _ in range(num_layers)]
        self.omega = OmegaParams(num_layers, num_heads) if rpb else None

    def __call__(
        self,
        x: Tensor,
        modality_ids: np.ndarray,
        selectors: tuple[np.ndarray, np.ndarray] | None = None,
        key_mask: np.ndarray | None = None,
    ) -> tuple[Tensor, list[np.ndarray]]:
        """Batched forward over ``(B, n, d)`` inputs.

        ``selectors`` are the ``(B, n, n)`` omega1/omega2 slot indicators;
        ``key_mask`` is an additive ``(B, 1, 1, n)`` array with ``-inf`` on
        padding keys. Returns the output and per-layer attention weights
        ``(B, H, n, n)``.
        """
        mod = self.modality(modality_ids)
        maps = []
        for l, layer in enumerate(self.layers):
            bias = None
            if self.omega is not None and selectors is not None:
                bias = omega_bias(selectors[0], selectors[1], self.omega, l)
            x, w = layer(x, mod, bias, key_mask)
            maps.append(w.data)
        return x, maps


@dataclass
class TokenSet:
    """Joint sequence: LM block first, then KG block."""

    embeddings: Tensor
    modality: np.ndarray
    labels: list[str] = field(default_factory=list)
    attention: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.modality = np.asarray(self.modality, dtype=np.intp)
        if self.embeddings.shape[0] != len(self.modality):
            raise SizeMismatch(f"{self.embeddings.shape[0]} embeddings vs {len(self.modality)} modality tags")
        kg = np.flatnonzero(self.modality == KG)
        if kg.size and not np.all(self.modality[kg[0]:] == KG):
            raise ValueError("LM tokens must precede KG tokens")

    @property
    def n_lm(self) -> int:
        return int(np.sum(self.modality == LM))

    @property
    def n_kg(self) -> int:
        return int(np.sum(self.modality == KG))

    def __len__(self):
        return len(self.modality)


def _selectors(mask: RpbMask | None, n: int):
    if mask is None:
        return None
    if mask.size != n:
        raise SizeMismatch(f"mask covers {mask.size} tokens, token set has {n}")
    m1, m2 = mask.selectors()
    return m1[None], m2[None]


def layer_forward(tokens: TokenSet, stack: RasaStack, layer_index: int, mask: RpbMask | None = None) -> TokenSet:
    """Apply one layer of ``stack`` to a single (unbatched) token set."""
    n = len(tokens)
    layer = stack.layers[layer_index]
    x = reshape(tokens.embeddings, (1, n, layer.d_model))
    mod = stack.modality(tokens.modality[None])
    sel = _selectors(mask, n)
    bias = None
    if stack.omega is not None and sel is not None:
        bias = omega_bias(sel[0], sel[1], stack.omega, layer_index)
    z, w = layer(x, mod, bias)
    return TokenSet(reshape(z, (n, layer.d_model)), tokens.modality, tokens.labels, [w.data[0]])


def stack_forward(tokens: TokenSet, stack: RasaStack, mask: RpbMask | None = None) -> TokenSet:
    """All layers in sequence on one token set; per-layer omega values, one mask."""
    n = len(tokens)
    if not stack.layers:
        return TokenSet(tokens.embeddings, tokens.modality, tokens.labels, [])
    d = stack.layers[0].d_model
    z, maps = stack(reshape(tokens.embeddings, (1, n, d)), tokens.modality[None], _selectors(mask, n))
    return TokenSet(reshape(z, (n, d)), tokens.modality, tokens.labels, [m[0] for m in maps])
