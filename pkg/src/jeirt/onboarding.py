"""Adding one new model to a trained embedding space.

With the adapter frozen, a new model's embedding only ever sees each question
through the pair (u_q, ||E_Q||), so fitting it is a convex logistic regression
in d parameters: minimize mean BCE of sigmoid(E_M . u_q - ||E_Q||) plus a
small L2 term. Question embeddings are computed once and cached; the
checkpoint passed in is never mutated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import FeatureMatrix, JeirtCheckpoint
from .errors import ConfigError, ConflictError, DataError
from .model import DEFAULT_EPS_NORM, ModelTable, adapter_forward
from .numerics import bce_from_logits, sigmoid
from .optim import Adam


@dataclass(frozen=True)
class OnboardConfig:
    fractions: tuple[float, ...] = (0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0)
    seed: int = 0
    learning_rate: float = 0.05
    max_epochs: int = 2000
    l2: float = 1e-4
    holdout_ratio: float = 0.2

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if not fr:
            raise ConfigError("fractions must be non-empty")
        if any(not (0.0 < f <= 1.0) for f in fr):
            raise ConfigError(f"fractions must lie in (0, 1], got {fr}")
        if list(fr) != sorted(fr):
            raise ConfigError("fractions must be sorted ascending")
        object.__setattr__(self, "fractions", fr)
        if not (0.0 < self.holdout_ratio < 1.0):
            raise ConfigError("holdout_ratio must lie in (0, 1)")


@dataclass(frozen=True)
class OnboardResult:
    model_id: str
    embedding: np.ndarray
    fraction: float
    n_train: int
    n_holdout: int
    holdout_accuracy: float
    holdout_logloss: float
    train_loss: float  # final regularized training objective


def _cached_geometry(ckpt: JeirtCheckpoint, feats: FeatureMatrix, question_ids):
    X = feats.rows(question_ids).astype(np.float64)
    _, _, EQ = adapter_forward(ckpt.adapter.astype(np.float64), X)
    norms = np.linalg.norm(EQ, axis=1)
    bad = np.flatnonzero(norms <= DEFAULT_EPS_NORM)
    if bad.size:
        raise DataError(
            f"question {question_ids[int(bad[0])]!r} embeds at or below the norm guard"
        )
    return EQ / norms[:, None], norms


def fit_embedding(
    U: np.ndarray,
    norms: np.ndarray,
    y: np.ndarray,
    learning_rate: float = 0.05,
    max_epochs: int = 2000,
    l2: float = 1e-4,
    init: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Full-batch Adam on the convex reduced objective; returns (E_M, final loss).

    The optimum is unique (strictly convex with l2 > 0), so the init only
    affects how fast we get there; it defaults to zero.
    """
    d = U.shape[1]
    em = np.zeros(d) if init is None else np.asarray(init, dtype=np.float64).copy()
    yf = y.astype(np.float64)
    opt = Adam([em], lr=learning_rate)
    loss = math.inf
    for _ in range(max_epochs):
        z = U @ em - norms
        loss = float(np.mean(bce_from_logits(z, yf)) + l2 * float(em @ em))
        grad = U.T @ ((sigmoid(z) - yf) / yf.size) + 2.0 * l2 * em
        if float(np.max(np.abs(grad))) < 1e-12:
            break
        opt.step([grad])
    z = U @ em - norms
    loss = float(np.mean(bce_from_logits(z, yf)) + l2 * float(em @ em))
    return em, loss


def _single_model_records(records) -> tuple[str, list]:
    records = list(records)
    if not records:
        raise ConfigError("no records supplied for the new model")
    model_id = records[0].model_id
    for rec in records:
        if rec.model_id != model_id:
            raise ConfigError(
                f"records span multiple models ({model_id!r}, {rec.model_id!r})"
            )
    return model_id, records


def onboard_model(
    ckpt: JeirtCheckpoint,
    new_records,
    feats: FeatureMatrix,
    fraction: float,
    seed: int,
    learning_rate: float = 0.05,
    max_epochs: int = 2000,
    l2: float = 1e-4,
    holdout_ratio: float = 0.2,
    init: np.ndarray | None = None,
) -> OnboardResult:
    """Fit one new model's embedding on a seeded fraction of its records.

    The seed fixes a shuffle; the first ``holdout_ratio`` share becomes the
    held-out evaluation set, and the requested fraction is taken as a prefix
    of the remaining pool (so larger fractions extend smaller ones). The
    adapter and every existing table row are untouched.
    """
    if not (0.0 < fraction <= 1.0):
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    model_id, records = _single_model_records(new_records)
    if model_id in ckpt.model_table:
        raise ConflictError(f"model {model_id!r} is already in the checkpoint")

    qids = [r.question_id for r in records]
    U, norms = _cached_geometry(ckpt, feats, qids)
    y = np.fromiter((r.correct for r in records), dtype=np.float64)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(records))
    n_holdout = int(round(holdout_ratio * len(records)))
    if n_holdout < 1 or n_holdout >= len(records):
        raise ConfigError(
            f"holdout of {n_holdout} records out of {len(records)} leaves no usable split"
        )
    holdout = perm[:n_holdout]
    pool = perm[n_holdout:]
    k = int(math.floor(fraction * pool.size + 1e-12))
    if k < 1:
        raise ConfigError(
            f"fraction {fraction} of {pool.size} pool records samples 0 records"
        )
    train = pool[:k]

    em, loss = fit_embedding(
        U[train], norms[train], y[train],
        learning_rate=learning_rate, max_epochs=max_epochs, l2=l2, init=init,
    )
    z_hold = U[holdout] @ em - norms[holdout]
    probs = sigmoid(z_hold)
    acc = float(np.mean((probs >= 0.5) == (y[holdout] == 1)))
    ll = float(np.mean(bce_from_logits(z_hold, y[holdout])))
    return OnboardResult(
        model_id=model_id,
        embedding=em,
        fraction=float(fraction),
        n_train=int(k),
        n_holdout=int(n_holdout),
        holdout_accuracy=acc,
        holdout_logloss=ll,
        train_loss=loss,
    )


def subsample_curve(
    ckpt: JeirtCheckpoint, new_records, feats: FeatureMatrix, cfg: OnboardConfig
) -> list[OnboardResult]:
    """One onboarding run per fraction against a fixed held-out set.

    All fractions share cfg.seed, so the shuffle (hence the holdout and the
    nesting of subsamples) is identical across rows.
    """
    return [
        onboard_model(
            ckpt,
            new_records,
            feats,
            fraction,
            cfg.seed,
            learning_rate=cfg.learning_rate,
            max_epochs=cfg.max_epochs,
            l2=cfg.l2,
            holdout_ratio=cfg.holdout_ratio,
        )
        for fraction in cfg.fractions
    ]


def append_model(ckpt: JeirtCheckpoint, model_id: str, embedding) -> JeirtCheckpoint:
    """New checkpoint with one extra table row; the input checkpoint is unchanged."""
    if model_id in ckpt.model_table:
        raise ConflictError(f"model {model_id!r} is already in the checkpoint")
    emb = np.asarray(embedding, dtype=np.float64)
    if emb.shape != (ckpt.embed_dim,):
        raise ConfigError(
            f"embedding must have shape ({ckpt.embed_dim},), got {emb.shape}"
        )
    table = ModelTable(
        ckpt.model_table.model_ids + (model_id,),
        np.vstack([ckpt.model_table.vectors.astype(np.float64), emb[None, :]]),
    )
    meta = dict(ckpt.train_meta)
    meta["onboarded"] = sorted(set(meta.get("onboarded", [])) | {model_id})
    return JeirtCheckpoint.build(ckpt.adapter, table, train_meta=meta)
