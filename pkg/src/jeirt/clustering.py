"""k-means over unit directions and partition-agreement metrics.

Clustering runs on unit-normalized question embeddings (Euclidean distance on
the sphere, monotone in cosine), seeded k-means++ initialization, Lloyd
iterations to an assignment fixpoint, and farthest-point reseeding for empty
clusters. The agreement metrics compare an assignment against human subject
labels through the contingency table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, CoverageError


@dataclass(frozen=True)
class ClusterAssignment:
    assignment: dict[str, int]
    k: int
    seed: int
    inertia: float
    iterations: int
    inertia_history: tuple[float, ...]

    def __post_init__(self):
        if any(not (0 <= c < self.k) for c in self.assignment.values()):
            raise ConfigError("cluster index out of range")
        if self.inertia < 0:
            raise ConfigError("inertia must be non-negative")


def _pairwise_sq(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(C * C, axis=1)[None, :]
        - 2.0 * (X @ C.T)
    )
    return np.maximum(d2, 0.0)


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    idx = int(rng.integers(n))
    centers[0] = X[idx]
    d2 = _pairwise_sq(X, centers[:1])[:, 0]
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with chosen centers
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = X[idx]
        d2 = np.minimum(d2, _pairwise_sq(X, centers[c : c + 1])[:, 0])
    return centers


def kmeans_unit(geom, k: int, seed: int, max_iters: int = 100) -> ClusterAssignment:
    """Lloyd's algorithm on unit-normalized embeddings, deterministic given seed."""
    n = len(geom)
    if not (1 <= k <= n):
        raise ConfigError(f"need n >= k >= 1, got n={n}, k={k}")
    X = np.stack([g.unit for g in geom]).astype(np.float64)
    qids = [g.question_id for g in geom]

    rng = np.random.default_rng(seed)
    centers = _kmeanspp(X, k, rng)
    labels = np.full(n, -1, dtype=np.int64)
    history = []
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        d2 = _pairwise_sq(X, centers)
        new_labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(n), new_labels].sum())
        history.append(inertia)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
        empties = [c for c in range(k) if not np.any(labels == c)]
        if empties:
            point_cost = _pairwise_sq(X, centers)[np.arange(n), labels]
            used: set[int] = set()
            for c in empties:
                cand = np.argsort(-point_cost, kind="stable")
                pick = next(int(i) for i in cand if int(i) not in used)
                used.add(pick)
                centers[c] = X[pick]
                point_cost[pick] = 0.0

    final_d2 = _pairwise_sq(X, centers)
    labels = np.argmin(final_d2, axis=1)
    inertia = float(final_d2[np.arange(n), labels].sum())
    return ClusterAssignment(
        assignment={qid: int(c) for qid, c in zip(qids, labels)},
        k=k,
        seed=seed,
        inertia=inertia,
        iterations=iterations,
        inertia_history=tuple(history),
    )


# -- agreement metrics --------------------------------------------------------

def _entropy(counts: np.ndarray) -> float:
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def agreement_metrics(
    assign: ClusterAssignment, labels: dict, nmi_normalization: str = "arithmetic"
) -> dict:
    """Purity, inverse purity, NMI, homogeneity, and completeness.

    NMI divides mutual information by the arithmetic mean of the two entropies
    (geometric available behind the flag). Degenerate references follow the
    0 log 0 = 0 convention: homogeneity/completeness are 1 when the reference
    entropy is 0, and NMI is 1 when both entropies are 0.
    """
    if nmi_normalization not in ("arithmetic", "geometric"):
        raise ConfigError(f"unknown NMI normalization {nmi_normalization!r}")
    missing = [q for q in assign.assignment if q not in labels]
    if missing:
        raise CoverageError(
            f"{len(missing)} assigned question(s) lack subject labels: "
            + ", ".join(repr(q) for q in missing[:10])
        )

    qids = list(assign.assignment)
    clusters = [assign.assignment[q] for q in qids]
    subject_ids = {s: i for i, s in enumerate(dict.fromkeys(labels[q] for q in qids))}
    subjects = [subject_ids[labels[q]] for q in qids]
    n = len(qids)
    table = np.zeros((assign.k, len(subject_ids)), dtype=np.int64)
    np.add.at(table, (clusters, subjects), 1)

    cluster_sizes = table.sum(axis=1)
    subject_sizes = table.sum(axis=0)
    purity = float(table.max(axis=1).sum() / n)
    inverse_purity = float(table.max(axis=0).sum() / n)

    h_c = _entropy(cluster_sizes)
    h_s = _entropy(subject_sizes)
    nz = table[table > 0]
    rows, cols = np.nonzero(table)
    p_cs = nz / n
    mi = float(
        np.sum(p_cs * np.log(n * nz / (cluster_sizes[rows] * subject_sizes[cols])))
    )

    homogeneity = 1.0 if h_s == 0.0 else mi / h_s
    completeness = 1.0 if h_c == 0.0 else mi / h_c
    if h_c == 0.0 and h_s == 0.0:
        nmi = 1.0
    elif nmi_normalization == "arithmetic":
        nmi = mi / ((h_c + h_s) / 2.0)
    else:
        denom = np.sqrt(h_c * h_s)
        nmi = 0.0 if denom == 0.0 else mi / denom

    clip = lambda v: float(min(1.0, max(0.0, v)))
    return {
        "purity": clip(purity),
        "inverse_purity": clip(inverse_purity),
        "nmi": clip(nmi),
        "homogeneity": clip(homogeneity),
        "completeness": clip(completeness),
    }
