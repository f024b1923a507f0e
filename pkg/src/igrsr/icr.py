"""Intent consistency regularization: two randomly masked intent views must
yield agreeing user representations (in-batch InfoNCE)."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, apply_mask, cosine_similarity, log_softmax


def sample_masks(shape: tuple, p_mask: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two independent 0/1 masks; each entry is kept with probability ``1 - p_mask``."""
    if not 0.0 <= p_mask < 1.0:
        raise ValueError("p_mask must lie in [0, 1); p_mask = 1 would erase every intent")
    return rng.random(shape) >= p_mask, rng.random(shape) >= p_mask


def sample_views(t_d: Tensor, p_mask: float, seed) -> tuple[Tensor, Tensor]:
    """``(T_D * M1, T_D * M2)`` with no keep-rate rescaling.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    m1, m2 = sample_masks(t_d.shape, p_mask, rng)
    return apply_mask(t_d, m1), apply_mask(t_d, m2)


def view_representations(encode, items: np.ndarray, view1: Tensor, view2: Tensor) -> tuple[Tensor, Tensor]:
    """Run the reasoner (``encode(items, t_d)``, shared weights) on both views."""
    return encode(items, view1), encode(items, view2)


def infonce(h1: Tensor, h2: Tensor, temperature: float) -> Tensor:
    """-sum_u log softmax_v(sim(h1_u, h2_v) / tau)[u], cosine similarity, in-batch negatives."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    sims = cosine_similarity(h1, h2) * (1.0 / temperature)
    logp = log_softmax(sims, axis=-1)
    diag = np.arange(h1.shape[0])
    return -logp[diag, diag].sum()
