"""Latent intent distiller: learnable prefix and ``<intent>`` tokens steering a
frozen SASRec encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import SASRec, SequenceLengthError, right_aligned_positions
from .layers import ParamStore
from .tensor import Tensor, concat, embedding_lookup


@dataclass(frozen=True)
class AugmentedTokens:
    """Token stream ``[prefix..., items..., intent...]`` for one sequence.

    ``kinds`` holds 0 for a prefix slot, 1 for an item, 2 for an intent slot;
    ``ids`` holds the slot index for prefix/intent tokens and the item id for items.
    """

    ids: tuple[int, ...]
    kinds: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)


PREFIX, ITEM, INTENT = 0, 1, 2


def build_augmented(prefix_tokens: int, sequence, intent_tokens: int, ablation_mode: bool = False) -> AugmentedTokens:
    if len(sequence) < 1:
        raise ValueError("cannot augment an empty sequence")
    if prefix_tokens == 0 and not ablation_mode:
        raise ValueError("k = 0 prefix tokens is only allowed in ablation mode")
    ids = tuple(range(prefix_tokens)) + tuple(int(i) for i in sequence) + tuple(range(intent_tokens))
    kinds = (PREFIX,) * prefix_tokens + (ITEM,) * len(sequence) + (INTENT,) * intent_tokens
    return AugmentedTokens(ids, kinds)


class LatentIntentDistiller:
    """Owns the ``(k, d_I)`` prefix and ``(m, d_I)`` intent-token embeddings.

    The backbone is frozen on construction; only the two embedding tables
    are trainable.  Items keep the positional embeddings they had during
    pretraining (distance from the last item); prefix and intent slots carry
    no positional term since their embeddings are learned per slot anyway.
    """

    def __init__(self, backbone: SASRec, prefix_tokens: int, intent_tokens: int, seed: int = 0, ablation_mode: bool = False):
        if prefix_tokens == 0 and not ablation_mode:
            raise ValueError("k = 0 prefix tokens is only allowed in ablation mode")
        backbone.freeze()
        self.backbone = backbone
        self.k = prefix_tokens
        self.m = intent_tokens
        self.ablation_mode = ablation_mode
        d = backbone.dim
        rng = np.random.default_rng(seed)
        self.params = ParamStore()
        self.params.add("lid.prefix_emb", rng.normal(0.0, d**-0.5, size=(prefix_tokens, d)))
        self.params.add("lid.intent_emb", rng.normal(0.0, d**-0.5, size=(intent_tokens, d)))

    @property
    def dim(self) -> int:
        return self.backbone.dim

    def trainable_parameters(self) -> list[tuple[str, Tensor]]:
        return self.params.trainable()

    def augmented_batch(self, items: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Left-padded ``(B, n)`` items -> ``(B, k + n + m)`` ids, kinds and validity.

        The layout per row is ``[pad..., P, S^u, I]``.  Token ids index a joint
        table ``[item rows | prefix rows | intent rows]``.
        """
        items = np.asarray(items, dtype=np.int64)
        b, n = items.shape
        k, m, v = self.k, self.m, self.backbone.item_count + 1
        valid_items = items != 0
        lengths = valid_items.sum(axis=1)
        if (lengths == 0).any():
            raise ValueError("cannot distill intents from an empty sequence")
        width = k + n + m
        ids = np.zeros((b, width), dtype=np.int64)
        kinds = np.full((b, width), -1, dtype=np.int64)
        ids[:, k : k + n] = items
        kinds[:, k : k + n] = np.where(valid_items, ITEM, -1)
        ids[:, k + n :] = v + k + np.arange(m)
        kinds[:, k + n :] = INTENT
        # prefix sits directly before each row's first real item, over pad columns
        cols = (n - lengths)[:, None] + np.arange(k)[None, :]
        rows = np.repeat(np.arange(b), k)
        ids[rows, cols.ravel()] = v + np.tile(np.arange(k), b)
        kinds[rows, cols.ravel()] = PREFIX
        return ids, kinds, kinds >= 0

    def distill(self, items: np.ndarray) -> Tensor:
        """Intent representations ``T_I`` of shape ``(B, m, d_I)``."""
        items = np.asarray(items, dtype=np.int64)
        valid_items = items != 0
        if int(valid_items.sum(axis=1).max()) > self.backbone.max_len:
            raise SequenceLengthError("sequence exceeds the backbone positional capacity")
        ids, kinds, valid = self.augmented_batch(items)
        table = concat(
            [self.backbone.params["item_emb"], self.params["lid.prefix_emb"], self.params["lid.intent_emb"]],
            axis=0,
        )
        x = embedding_lookup(table, ids)
        item_slots = kinds == ITEM
        pos = right_aligned_positions(item_slots)
        pos_term = embedding_lookup(self.backbone.params["pos_emb"], pos).data * item_slots[:, :, None]
        x = x + Tensor(pos_term)
        hidden = self.backbone.encode(x, valid)
        return hidden[:, -self.m :, :]
