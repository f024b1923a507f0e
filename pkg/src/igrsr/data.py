"""Interaction logs: ingestion, k-core filtering, leave-one-out splits,
padded batches, behavioral noise injection, and a synthetic generator with
known latent intents."""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

PAD = 0
DATASET_FORMAT = "igrsr-dataset"
DATASET_VERSION = 1

JSON_KEY_ALIASES = {
    "user": ("user", "reviewerID", "user_id"),
    "item": ("item", "asin", "item_id"),
    "ts": ("ts", "unixReviewTime", "timestamp"),
}


class DataFormatError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionDataset:
    """Per-user chronological item sequences over dense ids ``1..item_count``.

    ``user_ids[u]`` and ``item_ids[i - 1]`` give the raw identifiers.
    """

    sequences: tuple[tuple[int, ...], ...]
    timestamps: tuple[tuple[int, ...], ...]
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    # synthetic ground truth; -1 marks a noise interaction
    user_intents: tuple[tuple[int, ...], ...] | None = field(default=None, compare=False)
    interaction_intents: tuple[tuple[int, ...], ...] | None = field(default=None, compare=False)

    @property
    def user_count(self) -> int:
        return len(self.sequences)

    @property
    def item_count(self) -> int:
        return len(self.item_ids)

    @property
    def interaction_count(self) -> int:
        return sum(len(s) for s in self.sequences)

    @property
    def user_map(self) -> dict[str, int]:
        return {raw: u for u, raw in enumerate(self.user_ids)}

    @property
    def item_map(self) -> dict[str, int]:
        return {raw: i + 1 for i, raw in enumerate(self.item_ids)}

    def stats(self) -> dict:
        inter = self.interaction_count
        return {
            "users": self.user_count,
            "items": self.item_count,
            "interactions": inter,
            "sparsity": 1.0 - inter / (self.user_count * self.item_count),
        }


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def _parse_tsv(path: Path) -> list[tuple[str, str, int]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            user, item, ts = parts
            try:
                ts_val = int(ts)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: timestamp {ts!r} is not an integer") from None
            if not user or not item:
                raise DataFormatError(f"{path}:{lineno}: empty user or item id")
            rows.append((user, item, ts_val))
    return rows


def _lookup(record: dict, key: str):
    for alias in JSON_KEY_ALIASES[key]:
        if alias in record:
            return record[alias]
    raise KeyError(key)


def _parse_jsonl(path: Path) -> list[tuple[str, str, int]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                user, item, ts = _lookup(record, "user"), _lookup(record, "item"), _lookup(record, "ts")
                rows.append((str(user), str(item), int(ts)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed record ({exc})") from None
    return rows


def k_core(rows: Sequence[tuple], k: int = 5) -> list[tuple]:
    """Iteratively drop users and items with fewer than ``k`` interactions."""
    rows = list(rows)
    while True:
        users = Counter(r[0] for r in rows)
        items = Counter(r[1] for r in rows)
        kept = [r for r in rows if users[r[0]] >= k and items[r[1]] >= k]
        if len(kept) == len(rows):
            return kept
        rows = kept


def from_interactions(rows: Sequence[tuple], core: int = 5, labels: dict | None = None) -> InteractionDataset:
    """Filter, densify and order raw ``(user, item, ts)`` rows.

    Users and items get dense ids in sorted raw-id order; each user's
    interactions are sorted by timestamp, ties keeping input order.
    """
    rows = k_core(rows, core) if core > 1 else list(rows)
    if not rows:
        raise EmptyDatasetError("no interactions left after filtering")
    items = sorted({r[1] for r in rows})
    item_map = {raw: i + 1 for i, raw in enumerate(items)}
    per_user: dict[str, list[tuple[int, int, int]]] = defaultdict(list)
    for order, (user, item, ts) in enumerate(rows):
        per_user[user].append((ts, order, item_map[item], item))
    user_ids = tuple(sorted(per_user))
    seqs, stamps, inter_labels = [], [], []
    for user in user_ids:
        events = sorted(per_user[user])
        seqs.append(tuple(e[2] for e in events))
        stamps.append(tuple(e[0] for e in events))
        if labels is not None:
            inter_labels.append(tuple(labels["interactions"][(user, e[0])] for e in events))
    if labels is not None:
        return InteractionDataset(
            tuple(seqs),
            tuple(stamps),
            user_ids,
            tuple(items),
            user_intents=tuple(labels["users"][u] for u in user_ids),
            interaction_intents=tuple(inter_labels),
        )
    return InteractionDataset(tuple(seqs), tuple(stamps), user_ids, tuple(items))


def ingest(path: str | Path, fmt: str | None = None, core: int = 5) -> InteractionDataset:
    path = Path(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix in (".jsonl", ".json") else "tsv"
    if fmt == "tsv":
        rows = _parse_tsv(path)
    elif fmt == "jsonl":
        rows = _parse_jsonl(path)
    else:
        raise DataFormatError(f"unknown format {fmt!r} (expected tsv or jsonl)")
    return from_interactions(rows, core=core)


def write_tsv(ds: InteractionDataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, (seq, ts) in enumerate(zip(ds.sequences, ds.timestamps)):
            for item, t in zip(seq, ts):
                fh.write(f"{ds.user_ids[u]}\t{ds.item_ids[item - 1]}\t{t}\n")


def save_dataset(ds: InteractionDataset, path: str | Path) -> None:
    payload = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "user_ids": list(ds.user_ids),
        "item_ids": list(ds.item_ids),
        "sequences": [list(s) for s in ds.sequences],
        "timestamps": [list(t) for t in ds.timestamps],
    }
    if ds.user_intents is not None:
        payload["user_intents"] = [list(x) for x in ds.user_intents]
        payload["interaction_intents"] = [list(x) for x in ds.interaction_intents]
    Path(path).write_text(json.dumps(payload))


def load_dataset(path: str | Path) -> InteractionDataset:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != DATASET_FORMAT:
        raise DataFormatError(f"{path}: not an {DATASET_FORMAT} container")
    if payload.get("version") != DATASET_VERSION:
        raise DataFormatError(f"{path}: unsupported dataset version {payload.get('version')}")
    intents = payload.get("user_intents")
    return InteractionDataset(
        tuple(tuple(s) for s in payload["sequences"]),
        tuple(tuple(t) for t in payload["timestamps"]),
        tuple(payload["user_ids"]),
        tuple(payload["item_ids"]),
        user_intents=None if intents is None else tuple(tuple(x) for x in intents),
        interaction_intents=None
        if intents is None
        else tuple(tuple(x) for x in payload["interaction_intents"]),
    )


# ---------------------------------------------------------------------------
# Splits and batches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Split:
    """Index view: row r predicts ``sequences[users[r]][cuts[r]]`` from the items before it."""

    name: str
    users: np.ndarray
    cuts: np.ndarray

    def __len__(self) -> int:
        return len(self.users)


def leave_one_out_split(ds: InteractionDataset) -> tuple[Split, Split, Split]:
    """Last item -> test, second-to-last -> validation, earlier items -> training.

    Training pairs use every cut ``1..n-3`` so each training target has a
    non-empty history that excludes the validation and test targets.
    """
    tr_u, tr_c, va_u, va_c, te_u, te_c = [], [], [], [], [], []
    for u, seq in enumerate(ds.sequences):
        n = len(seq)
        if n < 3:
            raise ValueError(f"user {ds.user_ids[u]} has {n} interactions; leave-one-out needs >= 3")
        for cut in range(1, n - 2):
            tr_u.append(u)
            tr_c.append(cut)
        va_u.append(u)
        va_c.append(n - 2)
        te_u.append(u)
        te_c.append(n - 1)
    as_arr = lambda x: np.asarray(x, dtype=np.int64)  # noqa: E731
    return (
        Split("train", as_arr(tr_u), as_arr(tr_c)),
        Split("val", as_arr(va_u), as_arr(va_c)),
        Split("test", as_arr(te_u), as_arr(te_c)),
    )


@dataclass
class Batch:
    items: np.ndarray  # (B, n_max), left-padded with 0
    lengths: np.ndarray
    targets: np.ndarray
    users: np.ndarray

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def valid(self) -> np.ndarray:
        return self.items != PAD


def pad_split(ds: InteractionDataset, split: Split, n_max: int) -> Batch:
    """The whole split as one left-padded batch, inputs truncated to the last ``n_max`` items."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    rows = len(split)
    items = np.zeros((rows, n_max), dtype=np.int64)
    lengths = np.zeros(rows, dtype=np.int64)
    targets = np.zeros(rows, dtype=np.int64)
    for r, (u, cut) in enumerate(zip(split.users, split.cuts)):
        seq = ds.sequences[u]
        history = seq[max(0, cut - n_max) : cut]
        if history:
            items[r, n_max - len(history) :] = history
        lengths[r] = len(history)
        targets[r] = seq[cut]
    return Batch(items, lengths, targets, split.users.copy())


def make_batches(
    ds: InteractionDataset,
    split: Split,
    n_max: int,
    batch_size: int,
    shuffle_seed: int | None = None,
    padded: Batch | None = None,
    bucket: bool = False,
    trim: bool = False,
) -> Iterator[Batch]:
    """Yield left-padded batches in a seed-determined order.

    ``bucket`` groups rows of similar length (batch order still shuffled) and
    ``trim`` drops columns that are padding in every row of a batch; neither
    changes what a causal, right-aligned model computes for a row.
    """
    full = padded if padded is not None else pad_split(ds, split, n_max)
    rng = np.random.default_rng(shuffle_seed) if shuffle_seed is not None else None
    order = np.arange(len(full))
    if rng is not None:
        order = rng.permutation(order)
    chunks = [order[s : s + batch_size] for s in range(0, len(order), batch_size)]
    if bucket:
        order = order[np.argsort(full.lengths[order], kind="stable")]
        chunks = [order[s : s + batch_size] for s in range(0, len(order), batch_size)]
        if rng is not None:
            chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    for idx in chunks:
        items = full.items[idx]
        if trim and len(idx):
            width = max(int(full.lengths[idx].max()), 1)
            items = items[:, -width:]
        yield Batch(items, full.lengths[idx], full.targets[idx], full.users[idx])


def sample_cuts(split: Split, per_user: int, rng: np.random.Generator) -> Split:
    """Keep at most ``per_user`` randomly chosen rows of each user."""
    keys = rng.random(len(split))
    order = np.lexsort((keys, split.users))
    users = split.users[order]
    first = np.searchsorted(users, users, side="left")
    keep = order[(np.arange(len(order)) - first) < per_user]
    keep.sort()
    return Split(split.name, split.users[keep], split.cuts[keep])


def history_items(ds: InteractionDataset, split: Split) -> list[np.ndarray]:
    """Items each row has already interacted with (everything before its target)."""
    return [np.asarray(ds.sequences[u][:cut], dtype=np.int64) for u, cut in zip(split.users, split.cuts)]


# ---------------------------------------------------------------------------
# Noise and synthetic data
# ---------------------------------------------------------------------------


def inject_noise(ds: InteractionDataset, ratio: float = 0.2, seed: int = 0) -> InteractionDataset:
    """Replace ``ceil(ratio * (n - 1))`` random non-final interactions per user with other items.

    The final (test) item of each sequence and all lengths are preserved.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    if ratio == 0.0:
        return ds
    rng = np.random.default_rng(seed)
    n_items = ds.item_count
    new_seqs = []
    for seq in ds.sequences:
        seq = list(seq)
        eligible = len(seq) - 1
        count = min(eligible, math.ceil(ratio * eligible - 1e-9))
        for pos in rng.choice(eligible, size=count, replace=False):
            other = int(rng.integers(1, n_items))  # uniform over the n_items - 1 other ids
            seq[pos] = other if other < seq[pos] else other + 1
        new_seqs.append(tuple(seq))
    return InteractionDataset(
        tuple(new_seqs),
        ds.timestamps,
        ds.user_ids,
        ds.item_ids,
        user_intents=ds.user_intents,
        interaction_intents=ds.interaction_intents,
    )


def generate_synthetic(
    users: int = 2000,
    items: int = 500,
    intent_count: int = 4,
    seq_len_range: tuple[int, int] = (8, 20),
    seed: int = 0,
    noise: float = 0.1,
    intents_per_user: tuple[int, int] = (1, 2),
    switch_prob: float = 0.2,
    popularity_exponent: float = 0.8,
    core: int = 5,
) -> InteractionDataset:
    """Intent-driven sequences with ground-truth labels.

    Items are split into ``intent_count`` disjoint contiguous pools.  Each user
    holds 1-2 intents and moves between them in sticky spans (``switch_prob``
    per step).  An interaction is either uniform noise over all items (prob
    ``noise``) or a draw from the active intent's pool under a Zipf-like
    popularity profile.  No user repeats an item.
    """
    if items % intent_count:
        raise ValueError("items must divide evenly into intent pools")
    if items // intent_count < seq_len_range[1]:
        raise ValueError("each intent pool must hold at least seq_len_range[1] items (no repeats per user)")
    rng = np.random.default_rng(seed)
    pool_size = items // intent_count
    pools = [np.arange(p * pool_size, (p + 1) * pool_size) + 1 for p in range(intent_count)]
    pop = 1.0 / np.arange(1, pool_size + 1) ** popularity_exponent
    lo_int, hi_int = intents_per_user
    rows = []
    user_labels: dict[str, tuple[int, ...]] = {}
    inter_labels: dict[tuple[str, int], int] = {}
    for u in range(users):
        raw_user = f"u{u:06d}"
        n_int = int(rng.integers(lo_int, min(hi_int, intent_count) + 1))
        mine = tuple(sorted(int(x) for x in rng.choice(intent_count, size=n_int, replace=False)))
        user_labels[raw_user] = mine
        length = int(rng.integers(seq_len_range[0], seq_len_range[1] + 1))
        active = mine[int(rng.integers(len(mine)))]
        seen: set[int] = set()
        for t in range(length):
            if len(mine) > 1 and rng.random() < switch_prob:
                active = rng.choice([i for i in mine if i != active])
            if rng.random() < noise:
                label = -1
                while True:
                    item = int(rng.integers(1, items + 1))
                    if item not in seen:
                        break
            else:
                label = int(active)
                weights = pop * np.array([i not in seen for i in pools[label]])
                item = int(rng.choice(pools[label], p=weights / weights.sum()))
            seen.add(item)
            rows.append((raw_user, f"i{item:06d}", t))
            inter_labels[(raw_user, t)] = label
    return from_interactions(rows, core=core, labels={"users": user_labels, "interactions": inter_labels})
