"""Intent-aware deliberative reasoner.

Each layer first lets every sequence position cross-attend to the projected
intents (deliberation), then runs causal self-attention and a feed-forward
sublayer over the intent-enriched states (decision):

    H_cross = H + CrossAttn(H, T_D, T_D)
    H_self  = H_cross + MaskedSelfAttn(H_cross)
    H_out   = LayerNorm(H_self + FFN(H_self))
"""

from __future__ import annotations

import numpy as np

from .backbone import SequenceLengthError, right_aligned_positions
from .layers import (
    NO_DROPOUT,
    Dropout,
    ParamStore,
    add_attention,
    add_ffn,
    add_layer_norm,
    add_linear,
    causal_mask,
    feed_forward,
    linear,
    multi_head_attention,
    norm,
)
from .tensor import Tensor, apply_mask, concat, embedding_lookup, gelu


class IntentReasoner:
    def __init__(
        self,
        item_count: int,
        dim: int,
        intent_dim: int,
        max_len: int,
        layers: int = 2,
        heads: int = 2,
        dropout: float = 0.2,
        seed: int = 0,
        cross_attention: bool = True,
        projection: bool = True,
    ):
        self.item_count = item_count
        self.dim = dim
        self.intent_dim = intent_dim
        self.max_len = max_len
        self.layers = layers
        self.heads = heads
        self.dropout = dropout
        self.cross_attention = cross_attention
        rng = np.random.default_rng(seed)
        p = self.params = ParamStore()
        table = rng.normal(0.0, dim**-0.5, size=(item_count + 1, dim))
        table[0] = 0.0
        p.add("item_emb", table)
        p.add("pos_emb", rng.normal(0.0, dim**-0.5, size=(max_len, dim)))
        if projection:
            add_linear(p, "proj.fc1", intent_dim, 2 * dim, rng)
            add_linear(p, "proj.fc2", 2 * dim, dim, rng)
        for layer in range(layers):
            if cross_attention:
                add_attention(p, f"layer{layer}.cross", dim, rng)
            add_attention(p, f"layer{layer}.self", dim, rng)
            add_ffn(p, f"layer{layer}.ffn", dim, rng)
            add_layer_norm(p, f"layer{layer}.ln", dim)

    # -- pieces ---------------------------------------------------------------
    def project_intents(self, t_i: Tensor) -> Tensor:
        """Row-wise MLP ``d_I -> 2d -> d``."""
        return linear(self.params, "proj.fc2", gelu(linear(self.params, "proj.fc1", t_i)))

    def deliberate(self, layer: int, h: Tensor, t_d: Tensor, dropout: Dropout = NO_DROPOUT) -> Tensor:
        """``H + CrossAttn(Q=H, K=T_D, V=T_D)``; every position sees every intent."""
        return h + multi_head_attention(self.params, f"layer{layer}.cross", h, t_d, self.heads, None, dropout)

    def decide(self, layer: int, h_cross: Tensor, valid: np.ndarray, dropout: Dropout = NO_DROPOUT) -> Tensor:
        """Causal self-attention then FFN; padding rows come out zero."""
        mask = causal_mask(valid)
        h_self = h_cross + multi_head_attention(self.params, f"layer{layer}.self", h_cross, h_cross, self.heads, mask, dropout)
        out = norm(self.params, f"layer{layer}.ln", h_self + feed_forward(self.params, f"layer{layer}.ffn", h_self, dropout))
        return apply_mask(out, valid[:, :, None])

    def embed(self, items: np.ndarray, dropout: Dropout = NO_DROPOUT) -> tuple[Tensor, np.ndarray]:
        items = np.asarray(items, dtype=np.int64)
        valid = items != 0
        lengths = valid.sum(axis=1)
        if (lengths == 0).any():
            raise ValueError("empty input sequence")
        if int(lengths.max()) > self.max_len:
            raise SequenceLengthError(f"sequence of {int(lengths.max())} items exceeds {self.max_len}")
        x = embedding_lookup(self.params["item_emb"], items)
        x = x + embedding_lookup(self.params["pos_emb"], right_aligned_positions(valid))
        return apply_mask(dropout(x), valid[:, :, None]), valid

    # -- full passes ----------------------------------------------------------
    def hidden_states(self, items: np.ndarray, t_d: Tensor | None, dropout: Dropout = NO_DROPOUT) -> Tensor:
        h, valid = self.embed(items, dropout)
        for layer in range(self.layers):
            if t_d is not None and self.cross_attention:
                h = self.deliberate(layer, h, t_d, dropout)
            h = self.decide(layer, h, valid, dropout)
        return h

    def forward(self, items: np.ndarray, t_d: Tensor | None, dropout: Dropout = NO_DROPOUT) -> Tensor:
        """User representation ``h_u`` (B, d): the state at the last item (final column)."""
        return self.hidden_states(items, t_d, dropout)[:, -1, :]

    def concat_forward(self, items: np.ndarray, t_d: Tensor | None, dropout: Dropout = NO_DROPOUT) -> Tensor:
        """Ablation: intents prepended as pseudo-tokens instead of cross-attended.

        Row layout is ``[T_D, pad..., items]``; intents carry no positional
        term, and causal masking lets every item see all intents.
        """
        h, valid = self.embed(items, dropout)
        if t_d is not None:
            m = t_d.shape[1]
            h = concat([t_d, h], axis=1)
            valid = np.concatenate([np.ones((valid.shape[0], m), dtype=bool), valid], axis=1)
        for layer in range(self.layers):
            h = self.decide(layer, h, valid, dropout)
        return h[:, -1, :]
