"""Objective, Adam, early-stopped training, and checkpoint archives."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbone import SASRec
from .config import ModelConfig, TrainConfig
from .data import Batch, InteractionDataset, Split, make_batches, pad_split, sample_cuts
from .metrics import rank_and_score
from .model import IGRSR
from .tensor import Tensor, cross_entropy_from_logits, matmul

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "igrsr-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDivergence(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


def rec_loss(h: Tensor, targets, item_embeddings: Tensor) -> Tensor:
    """Full-vocabulary softmax cross-entropy, summed over the batch; row 0 (padding) is never a class."""
    valid = np.ones(item_embeddings.shape[0], dtype=bool)
    valid[0] = False
    return cross_entropy_from_logits(matmul(h, item_embeddings.swapaxes(0, 1)), targets, valid)


def total_loss(model, batch: Batch, rng: np.random.Generator | None, lambda_icr: float) -> Tensor:
    return model.loss(batch, rng, lambda_icr)[0]


class Adam:
    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros(p.shape) for name, p in params}
        self.v = {name: np.zeros(p.shape) for name, p in params}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in self.params:
            if p.grad is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class FitResult:
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = -1.0
    steps: int = 0

    def deterministic_log(self) -> list[dict]:
        return [{k: v for k, v in rec.items() if k != "wall_time"} for rec in self.log]


def _diagnostics(model, batch: Batch) -> str:
    norms = {n: float(np.linalg.norm(t.data)) for n, t in model.params.trainable()}
    worst = sorted(norms.items(), key=lambda kv: -kv[1] if math.isfinite(kv[1]) else -math.inf)[:5]
    return f"users={batch.users[:10].tolist()} param_norms={worst}"


def fit(
    model,
    ds: InteractionDataset,
    splits: tuple[Split, Split, Split],
    config: TrainConfig,
    n_max: int,
    log_path: str | Path | None = None,
    eval_batch_size: int = 512,
) -> FitResult:
    """Adam on every trainable tensor; early stopping on validation Recall@10.

    The best-scoring parameters are restored before returning.
    """
    train, val, _ = splits
    padded = None if config.samples_per_user else pad_split(ds, train, n_max)
    trainable = model.params.trainable()
    opt = Adam(trainable, config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    rng = np.random.default_rng(config.seed)
    result = FitResult()
    best_state = model.params.state()
    bad_epochs = 0
    fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            started = time.perf_counter()
            sums = {"loss": 0.0, "rec": 0.0, "icr": 0.0}
            rows = 0
            shuffle = int(rng.integers(2**31))
            epoch_split = train
            if config.samples_per_user:
                epoch_split = sample_cuts(train, config.samples_per_user, np.random.default_rng(shuffle))
            batches = make_batches(
                ds, epoch_split, n_max, config.batch_size, shuffle_seed=shuffle, padded=padded, bucket=True, trim=True
            )
            for batch in batches:
                model.params.zero_grad()
                loss, parts = model.loss(batch, rng, config.lambda_icr)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDivergence(f"non-finite loss at epoch {epoch}, step {result.steps}: {_diagnostics(model, batch)}")
                loss.backward()
                opt.step()
                result.steps += 1
                rows += len(batch)
                sums["loss"] += value
                sums["rec"] += parts.get("rec", value)
                sums["icr"] += parts.get("icr", 0.0)
                if config.max_steps is not None and result.steps >= config.max_steps:
                    break
            metrics = rank_and_score(model, ds, val, n_max, eval_batch_size).to_dict()
            record = {
                "epoch": epoch,
                "steps": result.steps,
                "loss": sums["loss"] / max(rows, 1),
                "rec_loss": sums["rec"] / max(rows, 1),
                "icr_loss": sums["icr"] / max(rows, 1),
                **{f"val_{k}": v for k, v in metrics.items()},
                "wall_time": time.perf_counter() - started,
            }
            result.log.append(record)
            if fh:
                fh.write(json.dumps(record) + "\n")
                fh.flush()
            log.info("epoch %d loss %.4f val recall@10 %.4f", epoch, record["loss"], metrics["recall@10"])
            if metrics["recall@10"] > result.best_val:
                result.best_val = metrics["recall@10"]
                result.best_epoch = epoch
                best_state = model.params.state()
                bad_epochs = 0
            else:
                bad_epochs += 1
            if bad_epochs >= config.patience:
                break
            if config.max_steps is not None and result.steps >= config.max_steps:
                break
    finally:
        if fh:
            fh.close()
    model.params.load_state(best_state)
    return result


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model, path: str | Path, config_fingerprint: str = "") -> None:
    """``.npz`` archive: one array per named tensor plus a JSON ``__meta__`` record."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": model.kind,
        "hyperparams": model.hyperparams(),
        "config_fingerprint": config_fingerprint,
        "tensors": {n: {"shape": list(t.shape), "trainable": model.params.is_trainable(n)} for n, t in model.params.items()},
    }
    if model.kind == "igrsr" and model.backbone is not None:
        meta["backbone"] = model.backbone.hyperparams()
        meta["backbone_fingerprint"] = model.backbone.fingerprint()
    arrays = {f"t:{n}": t.data for n, t in model.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def _read(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["__meta__"]))
        arrays = {k[2:]: archive[k] for k in archive.files if k.startswith("t:")}
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not an {CHECKPOINT_FORMAT} archive")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    return meta, arrays


def _sasrec_from(hp: dict) -> SASRec:
    return SASRec(hp["item_count"], hp["dim"], hp["max_len"], hp["layers"], hp["heads"], hp["dropout"], hp["seed"])


def load_checkpoint(path: str | Path, backbone: SASRec | None = None):
    """Rebuild a ``SASRec`` or ``IGRSR`` from an archive.

    For IGR-SR archives a supplied ``backbone`` must match the stored
    fingerprint; otherwise the backbone is rebuilt from the archive itself.
    """
    meta, arrays = _read(path)
    if meta["kind"] == "sasrec":
        model = _sasrec_from(meta["hyperparams"])
        model.params.load_state(arrays)
        if not all(info["trainable"] for info in meta["tensors"].values()):
            model.freeze()
        return model
    if meta["kind"] != "igrsr":
        raise CheckpointError(f"unknown model kind {meta['kind']!r}")
    hp = meta["hyperparams"]
    config = ModelConfig(**hp["config"])
    if "backbone" in meta:
        if backbone is None:
            backbone = _sasrec_from(meta["backbone"])
            backbone.params.load_state({n[len("backbone."):]: a for n, a in arrays.items() if n.startswith("backbone.")})
        if backbone.fingerprint() != meta["backbone_fingerprint"]:
            raise CheckpointError("backbone fingerprint mismatch: archive was trained on a different frozen encoder")
    else:
        backbone = None
    model = IGRSR(hp["item_count"], config, backbone, seed=hp["seed"])
    model.params.load_state(arrays)
    return model
