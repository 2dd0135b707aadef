"""Stable scalar/vector numerics used across the fitting modules."""

from __future__ import annotations

import numpy as np


def sigmoid(z):
    """Logistic function, overflow-safe for |z| up to at least 500."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    if out.ndim == 0:
        return float(out)
    return out


def softplus(z):
    """log(1 + exp(z)) without overflow."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def bce_from_logits(z, y):
    """Per-element binary cross-entropy -[y log p + (1-y) log(1-p)] with p = sigmoid(z).

    Computed as softplus(z) - y*z, which stays finite for extreme logits.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return softplus(z) - y * z
