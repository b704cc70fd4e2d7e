"""Small numeric toolkit shared by the LSTM, training and inference code.

Everything works on float64 numpy arrays. Randomness goes through
``numpy.random.Generator`` seeded with PCG64 so that a given seed always
produces the same draw sequence.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

CE_EPS = 1e-12


def make_rng(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Seeded PCG64 generator."""
    return np.random.Generator(np.random.PCG64(seed))


def sigmoid(x):
    """Standard logistic 1 / (1 + exp(-x)), evaluated without overflow."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(a, axis: int = -1):
    a = np.asarray(a, dtype=np.float64)
    z = np.exp(a - a.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def cross_entropy(y, target_id: int) -> float:
    """Negative log-probability of the target class, clamped at ``CE_EPS``."""
    return float(-np.log(max(float(y[target_id]), CE_EPS)))


def cross_entropy_grad(y, target_id: int) -> np.ndarray:
    """Gradient of ``cross_entropy(softmax(a), t)`` with respect to the logits ``a``."""
    g = np.array(y, dtype=np.float64, copy=True)
    g[target_id] -= 1.0
    return g


def init_uniform(rng: np.random.Generator, rows: int, cols: int | None = None, scale: float = 0.1) -> np.ndarray:
    """I.i.d. uniform entries on [-scale, scale]. ``cols=None`` gives a vector."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    shape = (rows,) if cols is None else (rows, cols)
    return rng.uniform(-scale, scale, size=shape)


def dropout_mask(rng: np.random.Generator, shape, p_drop: float) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``p_drop``, else 1/(1-p_drop)."""
    if not 0.0 <= p_drop < 1.0:
        raise ValueError(f"p_drop must be in [0, 1), got {p_drop}")
    if p_drop == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p_drop
    return keep / (1.0 - p_drop)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Rescale all gradients jointly so their global L2 norm is at most ``max_norm``.

    Returns the (possibly) scaled gradients and the norm before clipping.
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    g = global_norm(grads)
    if g > max_norm:
        scale = max_norm / g
        return [x * scale for x in grads], g
    return list(grads), g
