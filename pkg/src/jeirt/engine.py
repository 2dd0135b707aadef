"""Training and evaluation for the joint-embedding correctness model.

Training is deterministic given the seed: seeded init, seeded per-epoch
shuffle, fixed-order gradient reductions, and Adam. The returned checkpoint is
the float32 snapshot with the lowest validation loss seen (ties keep the
earlier epoch).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FeatureMatrix, JeirtCheckpoint, Split
from .errors import ConfigError, CoverageError, IdLookupError
from .model import (
    DEFAULT_EPS_NORM,
    AdapterParams,
    Grads,
    ModelTable,
    adapter_forward,
    init_adapter,
    init_table,
    logits_for_pairs,
    loss_and_grads_arrays,
)
from .numerics import bce_from_logits, sigmoid
from .optim import Adam


@dataclass(frozen=True)
class TrainConfig:
    embed_dim: int = 8
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 100
    seed: int = 0
    eps_norm: float = DEFAULT_EPS_NORM
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 10

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.eps_norm <= 0:
            raise ConfigError("eps_norm must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")


@dataclass(frozen=True)
class EvalReport:
    """Thresholded accuracy plus groupwise breakdowns and mean log-loss."""

    overall_accuracy: float
    per_model_accuracy: dict[str, float]
    per_benchmark_accuracy: dict[str, float]
    mean_logloss: float
    record_count: int
    per_model_count: dict[str, int] = field(default_factory=dict)
    per_benchmark_count: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "mean_logloss": self.mean_logloss,
            "record_count": self.record_count,
            "per_model_accuracy": self.per_model_accuracy,
            "per_benchmark_accuracy": self.per_benchmark_accuracy,
            "per_model_count": self.per_model_count,
            "per_benchmark_count": self.per_benchmark_count,
        }


def batch_loss_and_grads(
    adapter: AdapterParams,
    table: ModelTable,
    feats: FeatureMatrix,
    records,
    eps_norm: float = DEFAULT_EPS_NORM,
) -> tuple[float, Grads]:
    """Mean BCE and gradients over a batch of response records."""
    records = list(records)
    if not records:
        raise ConfigError("batch must be non-empty")
    for rec in records:
        if rec.model_id not in table:
            raise IdLookupError(f"unknown model id {rec.model_id!r}")
        if rec.question_id not in feats.index:
            raise IdLookupError(f"unknown question id {rec.question_id!r}")
    X = np.stack([feats.row(r.question_id) for r in records]).astype(np.float64)
    mi = np.fromiter((table.index[r.model_id] for r in records), dtype=np.int64)
    y = np.fromiter((r.correct for r in records), dtype=np.float64)
    vectors = table.vectors.astype(np.float64)
    return loss_and_grads_arrays(adapter, vectors, X, mi, y, eps_norm)


def _check_feature_coverage(ds: Dataset, feats: FeatureMatrix, indices) -> None:
    needed = {ds.records[i].question_id for i in np.concatenate(indices)}
    missing = sorted(q for q in needed if q not in feats.index)
    if missing:
        raise CoverageError(
            f"{len(missing)} question(s) lack feature rows: "
            + ", ".join(repr(q) for q in missing[:10])
        )


def _mean_logloss(
    adapter: AdapterParams,
    vectors: np.ndarray,
    X: np.ndarray,
    fi: np.ndarray,
    mi: np.ndarray,
    y: np.ndarray,
    eps_norm: float,
) -> float:
    """Full-set mean BCE; question embeddings computed once for unique rows."""
    _, _, EQ = adapter_forward(adapter, X)
    z = logits_for_pairs(EQ[fi], vectors[mi], eps_norm)
    return float(np.mean(bce_from_logits(z, y)))


def train(
    ds: Dataset, split: Split, feats: FeatureMatrix, cfg: TrainConfig
) -> JeirtCheckpoint:
    """Mini-batch Adam over BCE; returns the lowest-validation-loss snapshot."""
    _check_feature_coverage(ds, feats, [split.train, split.val])

    rng = np.random.default_rng(cfg.seed)
    adapter = init_adapter(feats.dim, cfg.embed_dim, rng)
    table = init_table(ds.model_ids, cfg.embed_dim, rng)
    vectors = table.vectors.astype(np.float64)
    W1, b1, W2, b2 = (a.copy() for a in adapter.arrays())

    mi_all, qi_all, y_all = ds.to_arrays()
    # feature row per dataset question; -1 for questions outside the feature
    # matrix (legal as long as they never appear in train/val, checked above)
    frow = np.fromiter(
        (feats.index.get(q, -1) for q in ds.question_index), dtype=np.int64
    )
    X_unique = feats.values.astype(np.float64)

    def current_adapter() -> AdapterParams:
        return AdapterParams(W1=W1, b1=b1, W2=W2, b2=b2)

    def val_loss() -> float:
        idx = split.val if split.val.size else split.train
        if idx.size == 0:
            raise ConfigError("both the train and val split parts are empty")
        return _mean_logloss(
            current_adapter(),
            vectors,
            X_unique,
            frow[qi_all[idx]],
            mi_all[idx],
            y_all[idx].astype(np.float64),
            cfg.eps_norm,
        )

    def snapshot(epoch: int, loss: float) -> JeirtCheckpoint:
        return JeirtCheckpoint.build(
            current_adapter(),
            ModelTable(table.model_ids, vectors),
            train_meta={"epoch": epoch, "seed": cfg.seed, "val_loss": loss},
        )

    best_loss = val_loss()
    best = snapshot(0, best_loss)
    if cfg.max_epochs == 0:
        return best

    opt = Adam(
        [W1, b1, W2, b2, vectors],
        lr=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.adam_eps,
    )
    train_idx = split.train
    n_train = train_idx.size
    if n_train == 0:
        raise ConfigError("training split is empty")
    Xrow_train = frow[qi_all[train_idx]]
    mi_train = mi_all[train_idx]
    y_train = y_all[train_idx].astype(np.float64)

    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            loss, g = loss_and_grads_arrays(
                current_adapter(),
                vectors,
                X_unique[Xrow_train[sel]],
                mi_train[sel],
                y_train[sel],
                cfg.eps_norm,
            )
            opt.step([g.W1, g.b1, g.W2, g.b2, g.table])
        loss = val_loss()
        if loss < best_loss:
            best_loss = loss
            best = snapshot(epoch, loss)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best


def predict_records(
    ckpt: JeirtCheckpoint,
    ds: Dataset,
    indices: np.ndarray,
    feats: FeatureMatrix,
    eps_norm: float = DEFAULT_EPS_NORM,
) -> np.ndarray:
    """Correctness probabilities for the given record indices."""
    recs = [ds.records[i] for i in np.asarray(indices, dtype=np.int64)]
    for rec in recs:
        if rec.model_id not in ckpt.model_table:
            raise IdLookupError(f"unknown model id {rec.model_id!r}")
    X = feats.rows([r.question_id for r in recs]).astype(np.float64)
    _, _, EQ = adapter_forward(ckpt.adapter.astype(np.float64), X)
    EM = np.stack(
        [ckpt.model_table.vector(r.model_id).astype(np.float64) for r in recs]
    )
    return sigmoid(logits_for_pairs(EQ, EM, eps_norm))


def evaluate(
    ckpt: JeirtCheckpoint,
    ds: Dataset,
    indices: np.ndarray,
    feats: FeatureMatrix,
    eps_norm: float = DEFAULT_EPS_NORM,
) -> EvalReport:
    """Threshold at 0.5 (ties count as correct) and break accuracy down by group."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise ConfigError("cannot evaluate an empty split part")
    recs = [ds.records[i] for i in indices]
    probs = predict_records(ckpt, ds, indices, feats, eps_norm)
    y = np.fromiter((r.correct for r in recs), dtype=np.float64)
    pred = (probs >= 0.5).astype(np.float64)
    hits = pred == y

    # loss from logits, not from the (possibly saturated) probabilities
    X = feats.rows([r.question_id for r in recs]).astype(np.float64)
    _, _, EQ = adapter_forward(ckpt.adapter.astype(np.float64), X)
    EM = np.stack(
        [ckpt.model_table.vector(r.model_id).astype(np.float64) for r in recs]
    )
    logits = logits_for_pairs(EQ, EM, eps_norm)
    logloss = float(np.mean(bce_from_logits(logits, y)))

    def group_means(keys) -> tuple[dict[str, float], dict[str, int]]:
        acc: dict[str, float] = {}
        cnt: dict[str, int] = {}
        order: dict[str, list[int]] = {}
        for i, k in enumerate(keys):
            order.setdefault(k, []).append(i)
        for k, rows in order.items():
            sel = np.asarray(rows)
            acc[k] = float(np.mean(hits[sel]))
            cnt[k] = int(sel.size)
        return acc, cnt

    model_acc, model_cnt = group_means([r.model_id for r in recs])
    bench_acc, bench_cnt = group_means([r.benchmark for r in recs])
    return EvalReport(
        overall_accuracy=float(np.mean(hits)),
        per_model_accuracy=model_acc,
        per_benchmark_accuracy=bench_acc,
        mean_logloss=logloss,
        record_count=int(indices.size),
        per_model_count=model_cnt,
        per_benchmark_count=bench_cnt,
    )
