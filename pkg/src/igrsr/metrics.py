"""Full-ranking Recall@K / NDCG@K under leave-one-out evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Batch, InteractionDataset, Split, history_items, pad_split

KS = (10, 20)


def target_ranks(scores: np.ndarray, targets: np.ndarray, exclude: list[np.ndarray] | None = None) -> np.ndarray:
    """1-based rank of each row's target among all items.

    Excluded items (and ``-inf`` scores, e.g. padding) never outrank the
    target; the target itself is never excluded.  Equal scores are broken
    in favour of the smaller item id.
    """
    scores = np.array(scores, dtype=np.float64, copy=True)
    rows = np.arange(len(targets))
    target_scores = scores[rows, targets].copy()
    if exclude is not None:
        flat_rows = np.repeat(rows, [len(e) for e in exclude])
        if flat_rows.size:
            scores[flat_rows, np.concatenate(exclude)] = -np.inf
        scores[rows, targets] = target_scores
    ts = target_scores[:, None]
    ids = np.arange(scores.shape[1])[None, :]
    higher = (scores > ts).sum(axis=1)
    tied_before = ((scores == ts) & (ids < targets[:, None])).sum(axis=1)
    return 1 + higher + tied_before


def recall_at(ranks: np.ndarray, k: int) -> float:
    return float(np.mean(ranks <= k))


def ndcg_at(ranks: np.ndarray, k: int) -> float:
    gains = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(np.mean(gains))


@dataclass
class RankingMetrics:
    recall: dict[int, float]
    ndcg: dict[int, float]
    ranks: np.ndarray
    users: np.ndarray

    @classmethod
    def from_ranks(cls, ranks: np.ndarray, users: np.ndarray, ks=KS) -> "RankingMetrics":
        ranks = np.asarray(ranks, dtype=np.int64)
        return cls({k: recall_at(ranks, k) for k in ks}, {k: ndcg_at(ranks, k) for k in ks}, ranks, np.asarray(users))

    def to_dict(self) -> dict[str, float]:
        out = {}
        for k in sorted(self.recall):
            out[f"recall@{k}"] = self.recall[k]
        for k in sorted(self.ndcg):
            out[f"ndcg@{k}"] = self.ndcg[k]
        return out


def rank_and_score(
    model,
    ds: InteractionDataset,
    split: Split,
    n_max: int,
    batch_size: int = 512,
    ks=KS,
    exclude_history: bool = True,
) -> RankingMetrics:
    """Rank every user's held-out target against the whole item vocabulary.

    ``model.scores(batch)`` must return ``(B, item_count + 1)`` scores with
    the padding column at ``-inf``.
    """
    padded = pad_split(ds, split, n_max)
    histories = history_items(ds, split) if exclude_history else None
    # rows of similar length share a batch so little width is spent on padding
    order = np.argsort(padded.lengths, kind="stable")
    ranks = np.zeros(len(split), dtype=np.int64)
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        width = max(int(padded.lengths[idx].max()), 1)
        batch = Batch(padded.items[idx, -width:], padded.lengths[idx], padded.targets[idx], padded.users[idx])
        exclude = None if histories is None else [histories[i] for i in idx]
        ranks[idx] = target_ranks(model.scores(batch), batch.targets, exclude)
    return RankingMetrics.from_ranks(ranks, split.users, ks)
