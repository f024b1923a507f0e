"""Parameter storage and the transformer building blocks shared by all models."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import Tensor, apply_mask, layer_norm, matmul, parameter, relu, scaled_dot_attention


class ParamStore:
    """Named parameter tensors, each flagged trainable or frozen."""

    def __init__(self) -> None:
        self._tensors: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        t = parameter(np.array(value, dtype=np.float64), name=name)
        t.requires_grad = trainable
        self._tensors[name] = t
        self._trainable[name] = trainable
        return t

    def include(self, other: "ParamStore", prefix: str = "") -> None:
        """Register another store's tensors (shared, not copied) under ``prefix``."""
        for name, t in other.items():
            key = prefix + name
            if key in self._tensors:
                raise KeyError(f"duplicate parameter {key!r}")
            self._tensors[key] = t
            self._trainable[key] = other.is_trainable(name)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def freeze(self) -> None:
        for name, t in self._tensors.items():
            self._trainable[name] = False
            t.requires_grad = False
            t.grad = None

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._tensors.items() if self._trainable[n]]

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def scalar_count(self, trainable_only: bool = True) -> int:
        return sum(t.size for n, t in self._tensors.items() if self._trainable[n] or not trainable_only)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self._tensors):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self._tensors[name].data).tobytes())
        return h.hexdigest()

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._tensors) - set(state)
        if missing:
            raise KeyError(f"state lacks parameters: {sorted(missing)}")
        for name, t in self._tensors.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} vs {t.shape}")
            t.data = value.copy()


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def add_linear(store: ParamStore, name: str, fan_in: int, fan_out: int, rng, trainable: bool = True) -> None:
    store.add(f"{name}.w", xavier(rng, fan_in, fan_out), trainable)
    store.add(f"{name}.b", np.zeros(fan_out), trainable)


def add_attention(store: ParamStore, name: str, d: int, rng, trainable: bool = True) -> None:
    for proj in ("q", "k", "v", "o"):
        add_linear(store, f"{name}.{proj}", d, d, rng, trainable)


def add_ffn(store: ParamStore, name: str, d: int, rng, trainable: bool = True) -> None:
    add_linear(store, f"{name}.fc1", d, d, rng, trainable)
    add_linear(store, f"{name}.fc2", d, d, rng, trainable)


def add_layer_norm(store: ParamStore, name: str, d: int, trainable: bool = True) -> None:
    store.add(f"{name}.gain", np.ones(d), trainable)
    store.add(f"{name}.bias", np.zeros(d), trainable)


def linear(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return matmul(x, store[f"{name}.w"]) + store[f"{name}.b"]


@dataclass
class Dropout:
    """Draws 0/1 keep-masks from a seeded generator; ``rate == 0`` disables."""

    rate: float
    rng: np.random.Generator | None = None

    @property
    def active(self) -> bool:
        return self.rng is not None and self.rate > 0.0

    def __call__(self, x: Tensor) -> Tensor:
        if not self.active:
            return x
        keep = self.rng.random(x.shape) >= self.rate
        return apply_mask(x, keep, scale=1.0 / (1.0 - self.rate))


NO_DROPOUT = Dropout(0.0)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def multi_head_attention(
    store: ParamStore,
    name: str,
    queries: Tensor,
    keys: Tensor,
    heads: int,
    mask: np.ndarray | None = None,
    dropout: Dropout = NO_DROPOUT,
) -> Tensor:
    """Multi-head attention over ``(B, q, d)`` queries and ``(B, s, d)`` keys/values.

    ``mask`` is boolean ``(B, q, s)``; it is shared across heads.
    """
    q = _split_heads(linear(store, f"{name}.q", queries), heads)
    k = _split_heads(linear(store, f"{name}.k", keys), heads)
    v = _split_heads(linear(store, f"{name}.v", keys), heads)
    if mask is not None:
        mask = mask[:, None, :, :]
    out = _merge_heads(scaled_dot_attention(q, k, v, mask))
    return dropout(linear(store, f"{name}.o", out))


def feed_forward(store: ParamStore, name: str, x: Tensor, dropout: Dropout = NO_DROPOUT) -> Tensor:
    hidden = dropout(relu(linear(store, f"{name}.fc1", x)))
    return dropout(linear(store, f"{name}.fc2", hidden))


def norm(store: ParamStore, name: str, x: Tensor) -> Tensor:
    return layer_norm(x, store[f"{name}.gain"], store[f"{name}.bias"])


def causal_mask(valid: np.ndarray) -> np.ndarray:
    """``(B, n)`` validity -> ``(B, n, n)`` attention mask.

    Position t sees valid positions <= t.  Padding query rows are allowed to
    see themselves only, so the softmax stays well defined; callers zero those
    rows afterwards.
    """
    n = valid.shape[1]
    tril = np.tril(np.ones((n, n), dtype=bool))
    mask = tril[None, :, :] & valid[:, None, :]
    eye = np.eye(n, dtype=bool)[None, :, :]
    return np.where(valid[:, :, None], mask, eye)
