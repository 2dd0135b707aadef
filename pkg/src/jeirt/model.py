"""Joint-embedding correctness model: adapter, model table, and probability math.

A question is embedded by a two-layer adapter over its frozen encoder features,
E_Q = W2 @ relu(W1 @ x + b1) + b2, with hidden width twice the feature width.
Each known model owns a learnable vector E_M. Correctness probability is

    P = sigmoid( (E_Q . E_M) / ||E_Q||  -  ||E_Q|| )

so the question's direction carries what it is about and its norm carries how
hard it is. A question embedding with norm at or below the guard ``eps_norm``
has no direction and is rejected as degenerate rather than clamped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateQuestionError, IdLookupError, ShapeError
from .numerics import bce_from_logits, sigmoid

DEFAULT_EPS_NORM = 1e-8


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class AdapterParams:
    """Two-layer MLP weights mapping feature rows (dim p) to embeddings (dim d).

    Shapes: W1 (2p, p), b1 (2p,), W2 (d, 2p), b2 (d,). ReLU after layer 1.
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation != "relu":
            raise ShapeError(f"unsupported activation {self.activation!r}")
        h, p = self.W1.shape
        if h != 2 * p:
            raise ShapeError(f"W1 must be (2p, p), got {self.W1.shape}")
        if self.b1.shape != (h,):
            raise ShapeError(f"b1 must be ({h},), got {self.b1.shape}")
        d, h2 = self.W2.shape
        if h2 != h:
            raise ShapeError(f"W2 must be (d, {h}), got {self.W2.shape}")
        if self.b2.shape != (d,):
            raise ShapeError(f"b2 must be ({d},), got {self.b2.shape}")
        for name in ("W1", "b1", "W2", "b2"):
            _check_finite(name, getattr(self, name))

    @property
    def feature_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.W2.shape[0]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return self.W1, self.b1, self.W2, self.b2

    def astype(self, dtype) -> "AdapterParams":
        return AdapterParams(
            W1=self.W1.astype(dtype),
            b1=self.b1.astype(dtype),
            W2=self.W2.astype(dtype),
            b2=self.b2.astype(dtype),
        )


@dataclass(frozen=True)
class ModelTable:
    """Per-model embedding rows, addressed by model id."""

    model_ids: tuple[str, ...]
    vectors: np.ndarray  # (m, d)
    index: dict[str, int] = field(repr=False, default=None)

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.model_ids):
            raise ShapeError(
                f"table needs one row per model id, got {self.vectors.shape} "
                f"for {len(self.model_ids)} ids"
            )
        _check_finite("model table", self.vectors)
        if self.index is None:
            object.__setattr__(
                self, "index", {mid: i for i, mid in enumerate(self.model_ids)}
            )
        if len(self.index) != len(self.model_ids):
            raise ShapeError("duplicate model ids in table")

    @property
    def embed_dim(self) -> int:
        return self.vectors.shape[1]

    def __contains__(self, model_id: str) -> bool:
        return model_id in self.index

    def vector(self, model_id: str) -> np.ndarray:
        try:
            return self.vectors[self.index[model_id]]
        except KeyError:
            raise IdLookupError(f"unknown model id {model_id!r}") from None

    def astype(self, dtype) -> "ModelTable":
        return ModelTable(self.model_ids, self.vectors.astype(dtype))


def init_adapter(feature_dim: int, embed_dim: int, rng: np.random.Generator) -> AdapterParams:
    """Glorot-uniform weights, zero biases."""
    p, d, h = feature_dim, embed_dim, 2 * feature_dim
    lim1 = np.sqrt(6.0 / (p + h))
    lim2 = np.sqrt(6.0 / (h + d))
    return AdapterParams(
        W1=rng.uniform(-lim1, lim1, size=(h, p)),
        b1=np.zeros(h),
        W2=rng.uniform(-lim2, lim2, size=(d, h)),
        b2=np.zeros(d),
    )


def init_table(model_ids, embed_dim: int, rng: np.random.Generator) -> ModelTable:
    """Small-norm Gaussian rows (std 0.1) keep early logits near zero."""
    vecs = rng.normal(0.0, 0.1, size=(len(model_ids), embed_dim))
    return ModelTable(tuple(model_ids), vecs)


# -- forward passes ------------------------------------------------------

def adapter_forward(adapter: AdapterParams, X: np.ndarray):
    """Batch forward through the adapter; returns (pre-activations, hidden, embeddings)."""
    X = np.asarray(X, dtype=np.float64)
    A1 = X @ adapter.W1.T + adapter.b1
    H = np.maximum(A1, 0.0)
    EQ = H @ adapter.W2.T + adapter.b2
    return A1, H, EQ


def question_embedding(adapter: AdapterParams, feature_row: np.ndarray) -> np.ndarray:
    """Embed one feature row of length p into R^d."""
    x = np.asarray(feature_row, dtype=np.float64)
    if x.shape != (adapter.feature_dim,):
        raise ShapeError(
            f"feature row has shape {x.shape}, adapter expects ({adapter.feature_dim},)"
        )
    _check_finite("feature row", x)
    return adapter_forward(adapter, x[None, :])[2][0]


def ability(e_m: np.ndarray, e_q: np.ndarray, eps_norm: float = DEFAULT_EPS_NORM) -> float:
    """Projection of the model embedding onto the question direction."""
    e_m = np.asarray(e_m, dtype=np.float64)
    e_q = np.asarray(e_q, dtype=np.float64)
    if e_m.shape != e_q.shape or e_m.ndim != 1:
        raise ShapeError(f"vector shapes differ: {e_m.shape} vs {e_q.shape}")
    nq = float(np.linalg.norm(e_q))
    if nq <= eps_norm:
        raise DegenerateQuestionError(
            f"question embedding norm {nq:.3e} is at or below the guard {eps_norm:.1e}"
        )
    return float(e_q @ e_m) / nq


def predict_prob(e_m: np.ndarray, e_q: np.ndarray, eps_norm: float = DEFAULT_EPS_NORM) -> float:
    """sigmoid(ability - ||e_q||); strictly decreasing in the question norm."""
    nq = float(np.linalg.norm(np.asarray(e_q, dtype=np.float64)))
    return float(sigmoid(ability(e_m, e_q, eps_norm) - nq))


def logits_for_pairs(
    EQ: np.ndarray, EM: np.ndarray, eps_norm: float = DEFAULT_EPS_NORM
) -> np.ndarray:
    """Per-row logit for aligned (question embedding, model embedding) rows."""
    norms = np.linalg.norm(EQ, axis=1)
    bad = np.flatnonzero(norms <= eps_norm)
    if bad.size:
        raise DegenerateQuestionError(
            f"{bad.size} question embedding(s) at or below the norm guard "
            f"(first at row {int(bad[0])})"
        )
    U = EQ / norms[:, None]
    return np.einsum("ij,ij->i", U, EM) - norms


@dataclass
class Grads:
    """Gradients aligned with (W1, b1, W2, b2, table rows)."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    table: np.ndarray  # (m, d), dense


def loss_and_grads_arrays(
    adapter: AdapterParams,
    table_vectors: np.ndarray,
    X: np.ndarray,
    model_rows: np.ndarray,
    y: np.ndarray,
    eps_norm: float = DEFAULT_EPS_NORM,
) -> tuple[float, Grads]:
    """Mean BCE over the batch plus gradients for every trainable parameter.

    ``X`` holds one feature row per batch element, ``model_rows`` the table row
    index of each element. Gradients flow through the adapter and the model
    table, including both appearances of ||E_Q|| in the logit.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    B = X.shape[0]

    A1, H, EQ = adapter_forward(adapter, X)
    norms = np.linalg.norm(EQ, axis=1)
    bad = np.flatnonzero(norms <= eps_norm)
    if bad.size:
        raise DegenerateQuestionError(
            f"question embedding norm at or below guard in batch row {int(bad[0])}"
        )
    U = EQ / norms[:, None]
    EM = table_vectors[model_rows]
    theta = np.einsum("ij,ij->i", U, EM)
    z = theta - norms
    loss = float(np.mean(bce_from_logits(z, y)))

    dz = (sigmoid(z) - y) / B  # (B,)

    dtable = np.zeros_like(table_vectors)
    np.add.at(dtable, model_rows, dz[:, None] * U)

    # dz/dEQ = (EM - theta*U)/||EQ|| - U
    dEQ = dz[:, None] * ((EM - theta[:, None] * U) / norms[:, None] - U)
    dW2 = dEQ.T @ H
    db2 = dEQ.sum(axis=0)
    dH = dEQ @ adapter.W2
    dA1 = np.where(A1 > 0.0, dH, 0.0)
    dW1 = dA1.T @ X
    db1 = dA1.sum(axis=0)

    return loss, Grads(W1=dW1, b1=db1, W2=dW2, b2=db2, table=dtable)
