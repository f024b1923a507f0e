"""IGR-SR: latent intent distiller + projection + intent-aware reasoner, with
the ablation variants used in the experiments."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .backbone import SASRec
from .config import ModelConfig
from .data import Batch
from .icr import infonce, sample_views, view_representations
from .idr import IntentReasoner
from .layers import NO_DROPOUT, Dropout, ParamStore
from .lid import LatentIntentDistiller
from .tensor import Tensor, cross_entropy_from_logits, matmul


class IGRSR:
    """Variants: ``full``; ``no_lid`` (no intents, deliberation skipped);
    ``concat`` (intents prepended as tokens instead of cross-attended);
    ``no_icr`` (contrastive term never computed)."""

    kind = "igrsr"

    def __init__(self, item_count: int, config: ModelConfig, backbone: SASRec | None, seed: int = 0):
        self.item_count = item_count
        self.config = config
        self.seed = seed
        variant = config.variant
        self.use_lid = variant != "no_lid"
        self.use_icr = variant in ("full", "concat")
        self.fusion = "concat" if variant == "concat" else "cross"
        self.params = ParamStore()
        self.lid: LatentIntentDistiller | None = None
        if self.use_lid:
            if backbone is None:
                raise ValueError(f"variant {variant!r} needs a pretrained backbone")
            if backbone.dim != config.intent_dim:
                raise ValueError(f"backbone width {backbone.dim} != intent_dim {config.intent_dim}")
            if backbone.item_count != item_count:
                raise ValueError("backbone was trained on a different item vocabulary")
            self.lid = LatentIntentDistiller(
                backbone, config.prefix_tokens, config.intent_tokens, seed=seed + 7919, ablation_mode=config.ablation_mode
            )
        self.idr = IntentReasoner(
            item_count,
            config.hidden_dim,
            config.intent_dim,
            config.n_max,
            layers=config.layers,
            heads=config.heads,
            dropout=config.dropout,
            seed=seed,
            cross_attention=self.use_lid and self.fusion == "cross",
            projection=self.use_lid,
        )
        self.params.include(self.idr.params)
        if self.lid is not None:
            self.params.include(self.lid.params)
            self.params.include(self.lid.backbone.params, prefix="backbone.")

    @property
    def backbone(self) -> SASRec | None:
        return None if self.lid is None else self.lid.backbone

    def hyperparams(self) -> dict:
        return {"kind": self.kind, "item_count": self.item_count, "seed": self.seed, "config": self.config.__dict__}

    def fingerprint(self) -> str:
        h = hashlib.sha256(json.dumps(self.hyperparams(), sort_keys=True).encode())
        h.update(self.params.checksum().encode())
        return h.hexdigest()[:16]

    def backbone_checksum(self) -> str | None:
        return None if self.lid is None else self.lid.backbone.params.checksum()

    @property
    def item_valid(self) -> np.ndarray:
        valid = np.ones(self.item_count + 1, dtype=bool)
        valid[0] = False
        return valid

    # -- forward --------------------------------------------------------------
    def intents(self, items: np.ndarray) -> Tensor | None:
        """Projected intents ``T_D`` (B, m, d), recomputed from the current prefix/intent embeddings."""
        if self.lid is None:
            return None
        return self.idr.project_intents(self.lid.distill(items))

    def encode(self, items: np.ndarray, t_d: Tensor | None, dropout: Dropout = NO_DROPOUT) -> Tensor:
        if self.fusion == "concat":
            return self.idr.concat_forward(items, t_d, dropout)
        return self.idr.forward(items, t_d, dropout)

    def user_repr(self, batch: Batch, dropout: Dropout = NO_DROPOUT) -> Tensor:
        return self.encode(batch.items, self.intents(batch.items), dropout)

    def logits(self, h: Tensor) -> Tensor:
        return matmul(h, self.idr.params["item_emb"].swapaxes(0, 1))

    def scores(self, batch: Batch) -> np.ndarray:
        out = self.logits(self.user_repr(batch)).data
        out[:, 0] = -np.inf
        return out

    def icr_loss(self, items: np.ndarray, t_d: Tensor, rng) -> Tensor:
        """Contrastive term over two masked intent views; ordinary dropout off."""
        view1, view2 = sample_views(t_d, self.config.p_mask, rng)
        h1, h2 = view_representations(lambda it, t: self.encode(it, t, NO_DROPOUT), items, view1, view2)
        return infonce(h1, h2, self.config.temperature)

    def loss(self, batch: Batch, rng: np.random.Generator | None = None, lambda_icr: float = 0.1):
        """``L_rec + lambda_icr * L_IntentCL`` summed over the batch.

        The recommendation path uses the unmasked intents; the masked views
        only feed the contrastive term.
        """
        dropout = Dropout(self.config.dropout, rng)
        t_d = self.intents(batch.items)
        h = self.encode(batch.items, t_d, dropout)
        rec = cross_entropy_from_logits(self.logits(h), batch.targets, self.item_valid)
        parts = {"rec": rec.item(), "icr": 0.0}
        if not (self.use_icr and lambda_icr > 0.0):
            return rec, parts
        icr = self.icr_loss(batch.items, t_d, rng if rng is not None else np.random.default_rng(0))
        parts["icr"] = icr.item()
        return rec + icr * lambda_icr, parts
