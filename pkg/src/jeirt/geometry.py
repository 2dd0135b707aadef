"""Embedding-geometry diagnostics.

Everything here reads the learned question geometry: norms as difficulty
scores (quantile-binned accuracy, ROC), unit directions as semantics
(alignment between a benchmark and the rest, cosine-to-mean spreads), and the
spectral shape of embedding clouds (PCA variance, entropic effective rank,
cosine-kernel PCA projection). All operations are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, FeatureMatrix, JeirtCheckpoint
from .errors import (
    ConfigError,
    DegenerateDirectionError,
    DegenerateError,
    DegenerateQuestionError,
    UndefinedAucError,
)
from .model import DEFAULT_EPS_NORM, adapter_forward


@dataclass(frozen=True)
class QuestionGeometry:
    """One question's embedding split into direction and norm."""

    question_id: str
    embedding: np.ndarray
    unit: np.ndarray
    norm: float
    benchmark: str = ""


def geometry_from_embeddings(
    question_ids, embeddings, benchmarks=None, eps_norm: float = DEFAULT_EPS_NORM
) -> list[QuestionGeometry]:
    EQ = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(EQ, axis=1)
    bad = np.flatnonzero(norms <= eps_norm)
    if bad.size:
        raise DegenerateQuestionError(
            f"question {question_ids[int(bad[0])]!r} has norm {norms[int(bad[0])]:.3e}"
        )
    out = []
    for i, qid in enumerate(question_ids):
        tag = "" if benchmarks is None else benchmarks.get(qid, "")
        out.append(
            QuestionGeometry(
                question_id=qid,
                embedding=EQ[i],
                unit=EQ[i] / norms[i],
                norm=float(norms[i]),
                benchmark=tag,
            )
        )
    return out


def compute_question_geometry(
    ckpt: JeirtCheckpoint,
    feats: FeatureMatrix,
    question_ids=None,
    benchmarks=None,
    eps_norm: float = DEFAULT_EPS_NORM,
) -> list[QuestionGeometry]:
    """Run the checkpoint's adapter over feature rows and split the result."""
    qids = list(question_ids) if question_ids is not None else list(feats.question_ids)
    X = feats.rows(qids).astype(np.float64)
    _, _, EQ = adapter_forward(ckpt.adapter.astype(np.float64), X)
    return geometry_from_embeddings(qids, EQ, benchmarks, eps_norm)


# -- norm vs difficulty ------------------------------------------------------

def norm_quantile_accuracy(geom, ds: Dataset, bins: int = 20) -> list[dict]:
    """Mean record accuracy inside rank-quantile bins of the question norm.

    Bin k holds the questions whose stable norm rank falls in
    [floor(k n / bins), floor((k+1) n / bins)); equal norms keep their input
    order, so ties land deterministically. Records whose question is not in
    ``geom`` are ignored.
    """
    n = len(geom)
    if bins < 1:
        raise ConfigError("bins must be >= 1")
    if n < bins:
        raise ConfigError(f"need at least {bins} questions, got {n}")
    norms = np.array([g.norm for g in geom])
    order = np.argsort(norms, kind="stable")
    bin_of_qid: dict[str, int] = {}
    edges = []
    for k in range(bins):
        lo, hi = (n * k) // bins, (n * (k + 1)) // bins
        members = order[lo:hi]
        for idx in members:
            bin_of_qid[geom[idx].question_id] = k
        edges.append((float(norms[members].min()), float(norms[members].max()), hi - lo))

    hits = np.zeros(bins)
    counts = np.zeros(bins, dtype=np.int64)
    for rec in ds.records:
        k = bin_of_qid.get(rec.question_id)
        if k is None:
            continue
        hits[k] += rec.correct
        counts[k] += 1

    report = []
    for k in range(bins):
        lo, hi, qcount = edges[k]
        report.append(
            {
                "bin": k,
                "norm_lo": lo,
                "norm_hi": hi,
                "question_count": qcount,
                "record_count": int(counts[k]),
                "accuracy": float(hits[k] / counts[k]) if counts[k] else None,
            }
        )
    return report


@dataclass(frozen=True)
class RocCurve:
    """Step curve over all distinct thresholds plus the rank-statistic AUC."""

    points: np.ndarray  # (k, 2) of (fpr, tpr)
    auc: float

    def __post_init__(self):
        pts = self.points
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ConfigError(f"curve points must be (k, 2), got {pts.shape}")
        if not (np.all(np.diff(pts[:, 0]) >= 0) and np.all(np.diff(pts[:, 1]) >= 0)):
            raise DegenerateError("ROC points must be monotone in both coordinates")
        if not (
            np.allclose(pts[0], (0.0, 0.0), atol=0.0)
            and np.allclose(pts[-1], (1.0, 1.0), atol=0.0)
        ):
            raise DegenerateError("ROC must run from (0,0) to (1,1)")
        if not (0.0 <= self.auc <= 1.0):
            raise DegenerateError(f"AUC out of range: {self.auc}")

    def trapezoid_area(self) -> float:
        x, y = self.points[:, 0], self.points[:, 1]
        return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def _mid_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged."""
    _, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts + 1
    return ((starts + ends) / 2.0)[inv]


def roc_from_norms(geom, ds: Dataset) -> RocCurve:
    """Question norm as difficulty score; positive class = answered incorrectly.

    The curve is swept over every distinct score (predict incorrect when the
    norm exceeds the threshold); the AUC is the Mann–Whitney rank statistic
    with average ranks for ties, which the swept curve's trapezoid area equals
    exactly.
    """
    norm_of = {g.question_id: g.norm for g in geom}
    scores, positives = [], []
    for rec in ds.records:
        nq = norm_of.get(rec.question_id)
        if nq is None:
            continue
        scores.append(nq)
        positives.append(rec.correct == 0)
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = int(scores.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAucError(
            f"AUC undefined: {n_pos} positive and {n_neg} negative records"
        )

    ranks = _mid_ranks(scores)
    auc = (float(ranks[positives].sum()) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_pos = positives[order]
    boundary = np.flatnonzero(np.diff(sorted_scores) != 0.0)
    group_ends = np.concatenate([boundary, [scores.size - 1]])
    tp = np.cumsum(sorted_pos)[group_ends]
    fp = (group_ends + 1) - tp
    points = np.concatenate(
        [[[0.0, 0.0]], np.column_stack([fp / n_neg, tp / n_pos])]
    )
    return RocCurve(points=points, auc=float(auc))


# -- directions --------------------------------------------------------------

def _mean_direction(units: np.ndarray, what: str) -> np.ndarray:
    mu = units.mean(axis=0)
    if np.linalg.norm(mu) <= 1e-12:
        raise DegenerateDirectionError(f"mean direction of {what} vanished")
    return mu


def directional_alignment(geom, benchmark: str) -> float:
    """Cosine between a benchmark's mean question direction and the mean
    direction of everything else.

    Each mean is normalized by its own group size; any positive rescaling of
    either mean would leave the cosine unchanged, so only the directions of
    the two sums matter.
    """
    inside = np.array([g.unit for g in geom if g.benchmark == benchmark])
    outside = np.array([g.unit for g in geom if g.benchmark != benchmark])
    if inside.size == 0 or outside.size == 0:
        raise ConfigError(
            f"benchmark {benchmark!r} and its complement must both be non-empty"
        )
    mu_in = _mean_direction(inside, f"benchmark {benchmark!r}")
    mu_out = _mean_direction(outside, "the complement")
    return float(
        (mu_in @ mu_out) / (np.linalg.norm(mu_in) * np.linalg.norm(mu_out))
    )


def cosine_to_mean_stats(geom, grouping=None) -> dict:
    """Per-group and global (mean, std) of cos(u_q, group mean direction).

    ``grouping`` maps question_id to a group name; benchmark tags by default.
    """
    groups: dict[str, list[int]] = {}
    for i, g in enumerate(geom):
        key = grouping[g.question_id] if grouping is not None else g.benchmark
        groups.setdefault(key, []).append(i)
    units = np.stack([g.unit for g in geom])

    def stats(rows) -> dict:
        sub = units[rows]
        mu = _mean_direction(sub, "group")
        mu = mu / np.linalg.norm(mu)
        cos = sub @ mu
        return {
            "mean": float(np.mean(cos)),
            "std": float(np.std(cos)),
            "count": int(len(rows)),
        }

    return {
        "groups": {key: stats(np.asarray(rows)) for key, rows in sorted(groups.items())},
        "global": stats(np.arange(len(geom))),
    }


# -- spectra -----------------------------------------------------------------

def _as_matrix(vectors) -> np.ndarray:
    if len(vectors) and isinstance(vectors[0], QuestionGeometry):
        return np.stack([g.embedding for g in vectors]).astype(np.float64)
    return np.asarray(vectors, dtype=np.float64)


def _cov_eigvals(X: np.ndarray) -> np.ndarray:
    """Descending eigenvalues of the mean-centered covariance."""
    if X.shape[0] < 2:
        raise ConfigError("need at least 2 vectors")
    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / X.shape[0]
    vals = np.linalg.eigvalsh(cov)
    return np.clip(vals, 0.0, None)[::-1]


def pca_cumulative_variance(vectors) -> np.ndarray:
    """Cumulative explained-variance fractions, leading components first."""
    vals = _cov_eigvals(_as_matrix(vectors))
    total = vals.sum()
    if total <= 0.0:
        raise DegenerateError("all vectors identical: zero covariance")
    return np.cumsum(vals) / total


def effective_rank(vectors) -> float:
    """exp of the entropy of the normalized covariance spectrum (0 log 0 = 0)."""
    vals = _cov_eigvals(_as_matrix(vectors))
    total = vals.sum()
    if total <= 0.0:
        raise DegenerateError("zero covariance trace")
    lam = vals / total
    nz = lam[lam > 0.0]
    return float(np.exp(-np.sum(nz * np.log(nz))))


def kernel_pca_cosine_2d(vectors, cap: int = 20000) -> np.ndarray:
    """Two-dimensional cosine-kernel PCA coordinates.

    Vectors are unit-normalized, the cosine kernel matrix is double-centered
    and eigendecomposed, and each point gets its top-2 eigenvector entries
    scaled by sqrt(eigenvalue). Eigenvector signs are fixed by making the
    largest-magnitude coordinate positive.
    """
    X = _as_matrix(vectors)
    n = X.shape[0]
    if n > cap:
        raise ConfigError(f"kernel matrix would be {n}x{n}, cap is {cap}")
    if n < 2:
        raise ConfigError("need at least 2 vectors")
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms <= 1e-12):
        raise DegenerateDirectionError("cannot unit-normalize a zero vector")
    U = X / norms[:, None]
    K = U @ U.T
    row = K.mean(axis=1, keepdims=True)
    col = K.mean(axis=0, keepdims=True)
    Kc = K - row - col + K.mean()
    vals, vecs = np.linalg.eigh(Kc)
    coords = np.empty((n, 2))
    for c, idx in enumerate((n - 1, n - 2)):
        v = vecs[:, idx]
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            v = -v
        coords[:, c] = v * np.sqrt(max(float(vals[idx]), 0.0))
    return coords
