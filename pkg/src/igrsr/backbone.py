"""SASRec-style causal transformer: the reflexive baseline and, once frozen,
the encoder inside the latent intent distiller."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .data import Batch
from .layers import (
    NO_DROPOUT,
    Dropout,
    ParamStore,
    add_attention,
    add_ffn,
    add_layer_norm,
    causal_mask,
    feed_forward,
    multi_head_attention,
    norm,
)
from .tensor import Tensor, apply_mask, cross_entropy_from_logits, embedding_lookup, matmul


class SequenceLengthError(ValueError):
    pass


def right_aligned_positions(valid: np.ndarray) -> np.ndarray:
    """Distance of each valid token from the last valid token of its row (pads -> 0).

    With left padding this only depends on a token's offset from the end, so
    prepending pad columns never shifts an item's position.
    """
    counts = np.cumsum(valid[:, ::-1], axis=1)[:, ::-1]
    return np.where(valid, counts - 1, 0)


class SASRec:
    """Stack of ``[x + SelfAttn(x)] -> LayerNorm(h + FFN(h))`` blocks over item embeddings.

    Item row 0 is the padding id.  Positions are learned and counted from the
    most recent item backwards.  Scoring ties the output layer to the item
    embedding table.
    """

    kind = "sasrec"

    def __init__(
        self,
        item_count: int,
        dim: int,
        max_len: int,
        layers: int = 2,
        heads: int = 2,
        dropout: float = 0.2,
        seed: int = 0,
    ):
        self.item_count = item_count
        self.dim = dim
        self.max_len = max_len
        self.layers = layers
        self.heads = heads
        self.dropout = dropout
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params = ParamStore()
        table = rng.normal(0.0, dim**-0.5, size=(item_count + 1, dim))
        table[0] = 0.0
        self.params.add("item_emb", table)
        self.params.add("pos_emb", rng.normal(0.0, dim**-0.5, size=(max_len, dim)))
        for layer in range(layers):
            add_attention(self.params, f"block{layer}.attn", dim, rng)
            add_ffn(self.params, f"block{layer}.ffn", dim, rng)
            add_layer_norm(self.params, f"block{layer}.ln", dim)

    # -- structure ------------------------------------------------------------
    def hyperparams(self) -> dict:
        return {
            "kind": self.kind,
            "item_count": self.item_count,
            "dim": self.dim,
            "max_len": self.max_len,
            "layers": self.layers,
            "heads": self.heads,
            "dropout": self.dropout,
            "seed": self.seed,
        }

    def fingerprint(self) -> str:
        """Hash of hyperparameters and current weights."""
        h = hashlib.sha256(json.dumps(self.hyperparams(), sort_keys=True).encode())
        h.update(self.params.checksum().encode())
        return h.hexdigest()[:16]

    def freeze(self) -> None:
        self.params.freeze()

    @property
    def item_valid(self) -> np.ndarray:
        valid = np.ones(self.item_count + 1, dtype=bool)
        valid[0] = False
        return valid

    # -- forward --------------------------------------------------------------
    def check_length(self, valid: np.ndarray) -> None:
        longest = int(valid.sum(axis=1).max()) if valid.size else 0
        if longest > self.max_len:
            raise SequenceLengthError(f"sequence of {longest} items exceeds positional table of {self.max_len}")

    def embed(self, items: np.ndarray) -> tuple[Tensor, np.ndarray]:
        items = np.asarray(items, dtype=np.int64)
        valid = items != 0
        self.check_length(valid)
        x = embedding_lookup(self.params["item_emb"], items)
        x = x + embedding_lookup(self.params["pos_emb"], right_aligned_positions(valid))
        return x, valid

    def encode(self, x: Tensor, valid: np.ndarray, dropout: Dropout = NO_DROPOUT) -> Tensor:
        """Run the transformer blocks on already-embedded tokens ``(B, n, d)``."""
        keep = valid[:, :, None].astype(np.float64)
        mask = causal_mask(valid)
        x = apply_mask(dropout(x), keep)
        for layer in range(self.layers):
            name = f"block{layer}"
            x = x + multi_head_attention(self.params, f"{name}.attn", x, x, self.heads, mask, dropout)
            x = norm(self.params, f"{name}.ln", x + feed_forward(self.params, f"{name}.ffn", x, dropout))
            x = apply_mask(x, keep)
        return x

    def forward(self, items: np.ndarray, dropout: Dropout = NO_DROPOUT) -> Tensor:
        x, valid = self.embed(items)
        return self.encode(x, valid, dropout)

    def user_repr(self, batch: Batch, dropout: Dropout = NO_DROPOUT) -> Tensor:
        return self.forward(batch.items, dropout)[:, -1, :]

    def score_items(self, h: Tensor) -> Tensor:
        logits = matmul(h, self.params["item_emb"].swapaxes(0, 1))
        return logits + Tensor(np.where(self.item_valid, 0.0, -np.inf))

    def loss(self, batch: Batch, rng: np.random.Generator | None = None, lambda_icr: float = 0.0):
        dropout = Dropout(self.dropout, rng)
        h = self.user_repr(batch, dropout)
        logits = matmul(h, self.params["item_emb"].swapaxes(0, 1))
        rec = cross_entropy_from_logits(logits, batch.targets, self.item_valid)
        return rec, {"rec": rec.item()}

    def scores(self, batch: Batch) -> np.ndarray:
        return self.score_items(self.user_repr(batch)).data
