"""Planted worlds and executable geometry checkers.

A planted world fixes ground-truth model and question embeddings, samples
Bernoulli responses from the correctness probability they induce, and records
the truth's own log-loss (the Bayes floor any trained model is judged
against). Synthetic feature rows are the true question embeddings shifted into
the positive orthant, so an affine map (exactly representable by the adapter
with every ReLU unit active) reproduces the planted embeddings and the world
is a fair recovery target.

The checkers turn the framework's guarantees into executable form: the
two-question witness construction for the no-global-ordering claim, the
probability-stability bound, and the ability-shift bound. Violations are
reported, never raised; they would mean an implementation bug.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, FeatureMatrix, JeirtCheckpoint, ResponseRecord, save_features, save_responses
from .errors import ConfigError, DataError
from .model import AdapterParams, ModelTable
from .numerics import bce_from_logits, sigmoid

NORM_FLOOR = 1e-6  # no planted question may be this close to the origin
_MAX_REDRAWS = 100


# -- difficulty / direction profiles --------------------------------------

@dataclass(frozen=True)
class LogNormalDifficulty:
    """Question norms exp(N(ln median, sigma_log^2)); the default difficulty spread."""

    median: float = 1.0
    sigma_log: float = 0.5


@dataclass(frozen=True)
class FixedDifficulty:
    value: float = 1.0


@dataclass(frozen=True)
class UniformDirections:
    """Directions uniform on the sphere; all questions tagged "synthetic"."""


@dataclass(frozen=True)
class ConeMixture:
    """Directions drawn in cones around the first ``count`` basis axes.

    Cone c gets every count-th question, tagged "cone<c>"; the polar angle is
    uniform in [0, half_angle_deg].
    """

    count: int = 2
    half_angle_deg: float = 25.0


def sample_responses(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli draws, one per probability."""
    probs = np.asarray(probs, dtype=np.float64)
    return (rng.random(probs.shape) < probs).astype(np.int64)


def _planted_logits(model_emb: np.ndarray, question_emb: np.ndarray) -> np.ndarray:
    """(m, n) logit matrix under the planted parameters."""
    norms = np.linalg.norm(question_emb, axis=1)
    if np.any(norms < NORM_FLOOR):
        raise DataError("planted question with norm below the floor")
    U = question_emb / norms[:, None]
    theta = model_emb @ U.T  # (m, n)
    return theta - norms[None, :]


@dataclass(frozen=True)
class PlantedWorld:
    dataset: Dataset
    features: FeatureMatrix
    model_ids: tuple[str, ...]
    question_ids: tuple[str, ...]
    model_embeddings: np.ndarray  # (m, d)
    question_embeddings: np.ndarray  # (n, d)
    question_tags: tuple[str, ...]
    feature_shift: float
    seed: int
    planted_logits: np.ndarray  # aligned with dataset.records
    planted_probs: np.ndarray
    bayes_logloss: float
    mean_prob: float

    @property
    def embed_dim(self) -> int:
        return self.model_embeddings.shape[1]

    def labels(self) -> np.ndarray:
        return np.fromiter((r.correct for r in self.dataset.records), dtype=np.float64)

    def planted_logloss(self, indices=None) -> float:
        """Mean BCE of the planted probabilities on (a subset of) the sampled
        responses, computed from the logits so extreme worlds stay finite."""
        z = self.planted_logits
        y = self.labels()
        if indices is not None:
            idx = np.asarray(indices, dtype=np.int64)
            z, y = z[idx], y[idx]
        return float(np.mean(bce_from_logits(z, y)))

    def planted_accuracy(self, indices=None) -> float:
        p = self.planted_probs
        y = self.labels()
        if indices is not None:
            idx = np.asarray(indices, dtype=np.int64)
            p, y = p[idx], y[idx]
        return float(np.mean((p >= 0.5) == (y == 1)))

    def save(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        save_responses(self.dataset, outdir / "responses.jsonl")
        save_features(
            self.features, outdir / "features.manifest.json", outdir / "features.f32"
        )
        truth = {
            "seed": self.seed,
            "m": len(self.model_ids),
            "n": len(self.question_ids),
            "d": self.embed_dim,
            "feature_shift": self.feature_shift,
            "bayes_logloss": self.bayes_logloss,
            "mean_prob": self.mean_prob,
            "model_ids": list(self.model_ids),
            "question_ids": list(self.question_ids),
            "question_tags": list(self.question_tags),
            "model_embeddings": self.model_embeddings.tolist(),
            "question_embeddings": self.question_embeddings.tolist(),
        }
        with open(outdir / "truth.json", "w", encoding="utf-8") as fh:
            json.dump(truth, fh)
            fh.write("\n")


def world_from_parameters(
    model_emb,
    question_emb,
    seed: int,
    question_tags=None,
    model_ids=None,
    question_ids=None,
) -> PlantedWorld:
    """Assemble a world from explicit truth: features, sampled responses, Bayes loss."""
    model_emb = np.asarray(model_emb, dtype=np.float64)
    question_emb = np.asarray(question_emb, dtype=np.float64)
    m, d = model_emb.shape
    n = question_emb.shape[0]
    if question_emb.shape[1] != d:
        raise ConfigError("model and question embeddings must share a dimension")
    if model_ids is None:
        model_ids = tuple(f"m{i:03d}" for i in range(m))
    if question_ids is None:
        question_ids = tuple(f"q{j:05d}" for j in range(n))
    if question_tags is None:
        question_tags = tuple("synthetic" for _ in range(n))

    logits = _planted_logits(model_emb, question_emb)  # (m, n)
    z_flat = logits.reshape(-1)
    flat = sigmoid(z_flat)
    rng = np.random.default_rng(seed)
    y = sample_responses(flat, rng)

    records = []
    k = 0
    for i in range(m):
        for j in range(n):
            records.append(
                ResponseRecord(
                    model_id=model_ids[i],
                    question_id=question_ids[j],
                    correct=int(y[k]),
                    benchmark=question_tags[j],
                    subject=question_tags[j],
                )
            )
            k += 1
    ds = Dataset.from_records(records)

    shift = float(np.ceil(np.max(np.abs(question_emb))) + 1.0)
    feats = FeatureMatrix(
        tuple(question_ids), (question_emb + shift).astype(np.float32)
    )

    bayes = float(np.mean(bce_from_logits(z_flat, y.astype(np.float64))))
    return PlantedWorld(
        dataset=ds,
        features=feats,
        model_ids=tuple(model_ids),
        question_ids=tuple(question_ids),
        model_embeddings=model_emb,
        question_embeddings=question_emb,
        question_tags=tuple(question_tags),
        feature_shift=shift,
        seed=seed,
        planted_logits=z_flat,
        planted_probs=flat,
        bayes_logloss=bayes,
        mean_prob=float(np.mean(flat)),
    )


def _unit_rows(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """Uniform unit vectors, redrawing near-zero Gaussian draws."""
    out = np.empty((count, dim))
    todo = np.arange(count)
    for _ in range(_MAX_REDRAWS):
        g = rng.standard_normal((todo.size, dim))
        norms = np.linalg.norm(g, axis=1)
        ok = norms > 1e-12
        out[todo[ok]] = g[ok] / norms[ok, None]
        todo = todo[~ok]
        if todo.size == 0:
            return out
    raise DataError(f"direction sampling failed after {_MAX_REDRAWS} redraws")


def _cone_directions(
    rng: np.random.Generator, n: int, d: int, profile: ConeMixture
) -> tuple[np.ndarray, list[str]]:
    if profile.count > d:
        raise ConfigError(
            f"cone mixture needs dim >= cone count, got d={d}, count={profile.count}"
        )
    alpha = np.deg2rad(profile.half_angle_deg)
    U = np.empty((n, d))
    tags = []
    for j in range(n):
        c = j % profile.count
        axis = np.zeros(d)
        axis[c] = 1.0
        for attempt in range(_MAX_REDRAWS + 1):
            g = rng.standard_normal(d)
            g -= (g @ axis) * axis
            gn = np.linalg.norm(g)
            if gn > 1e-12:
                break
            if attempt == _MAX_REDRAWS:
                raise DataError("cone sampling failed to find an orthogonal direction")
        w = g / gn
        phi = rng.uniform(0.0, alpha)
        U[j] = np.cos(phi) * axis + np.sin(phi) * w
        tags.append(f"cone{c}")
    return U, tags


def _bisect_increasing(f, target: float) -> float:
    """Smallest x with f(x) >= target, assuming f is non-decreasing from f(0)."""
    lo, hi = 0.0, 1.0
    for _ in range(40):
        if f(hi) >= target or hi > 2**20:
            break
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_planted(
    m: int,
    n: int,
    d: int,
    seed: int,
    difficulty_profile=LogNormalDifficulty(),
    direction_profile=UniformDirections(),
    target_mean_prob: float = 0.45,
    model_noise: float = 0.3,
) -> PlantedWorld:
    """Random world: directions and norms per profile, Gaussian models placed
    so the average planted probability lands near ``target_mean_prob``.

    When question directions are concentrated (any cone profile), models are
    drawn N(b e, model_noise^2 I) with e the mean question direction and the
    bias b bisected onto the target: shared competence lifts probabilities, so
    norms stay the dominant difficulty signal. On a uniform sphere no bias
    direction exists and the Gaussian's scale is bisected instead.
    """
    if m < 1 or n < 1 or d < 1:
        raise ConfigError(f"m, n, d must all be >= 1, got ({m}, {n}, {d})")
    rng = np.random.default_rng(seed)

    if isinstance(direction_profile, ConeMixture):
        U, tags = _cone_directions(rng, n, d, direction_profile)
    elif isinstance(direction_profile, UniformDirections):
        U = _unit_rows(rng, n, d)
        tags = ["synthetic"] * n
    else:
        raise ConfigError(f"unknown direction profile {direction_profile!r}")

    if isinstance(difficulty_profile, LogNormalDifficulty):
        norms = rng.lognormal(
            mean=np.log(difficulty_profile.median),
            sigma=difficulty_profile.sigma_log,
            size=n,
        )
    elif isinstance(difficulty_profile, FixedDifficulty):
        norms = np.full(n, float(difficulty_profile.value))
    else:
        raise ConfigError(f"unknown difficulty profile {difficulty_profile!r}")
    if np.any(norms < NORM_FLOOR):
        raise DataError("difficulty profile produced a norm below the floor")
    question_emb = U * norms[:, None]

    base = rng.standard_normal((m, d))
    mean_u = U.mean(axis=0)
    mu_norm = float(np.linalg.norm(mean_u))
    if mu_norm > 0.05:
        e_hat = mean_u / mu_norm
        noise = model_noise * base
        G = noise @ U.T  # (m, n)
        align = U @ e_hat  # (n,)
        bias = _bisect_increasing(
            lambda b: float(np.mean(sigmoid(b * align[None, :] + G - norms[None, :]))),
            target_mean_prob,
        )
        model_emb = bias * e_hat + noise
    else:
        G = base @ U.T
        scale = _bisect_increasing(
            lambda s: float(np.mean(sigmoid(s * G - norms[None, :]))),
            target_mean_prob,
        )
        model_emb = scale * base

    achieved = float(np.mean(sigmoid(_planted_logits(model_emb, question_emb))))
    if not (0.3 <= achieved <= 0.7):
        raise DataError(
            f"could not place models into the target probability band "
            f"(best mean probability {achieved:.3f})"
        )

    # response sampling consumes a fresh child stream so the bisection above
    # cannot shift it
    child_seed = int(np.random.SeedSequence(seed).generate_state(1, np.uint64)[0])
    return world_from_parameters(
        model_emb,
        question_emb,
        seed=child_seed,
        question_tags=tags,
    )


# -- oracle checkpoint -----------------------------------------------------

def oracle_checkpoint(world: PlantedWorld) -> JeirtCheckpoint:
    """Checkpoint whose adapter maps features back to the planted embeddings.

    With features x = E_Q + shift, the stack W1 = [I; -I], b1 = K (K above the
    largest feature magnitude) keeps every ReLU active, and W2 = [I/2, -I/2],
    b2 = -shift recovers E_Q = x - shift exactly up to float32 rounding.
    """
    d = world.embed_dim
    shift = world.feature_shift
    K = float(np.ceil(np.max(np.abs(world.features.values))) + 1.0)
    eye = np.eye(d, dtype=np.float64)
    adapter = AdapterParams(
        W1=np.vstack([eye, -eye]),
        b1=np.full(2 * d, K),
        W2=np.hstack([0.5 * eye, -0.5 * eye]),
        b2=np.full(d, -shift),
    )
    table = ModelTable(world.model_ids, world.model_embeddings)
    return JeirtCheckpoint.build(adapter, table, train_meta={"oracle": True, "seed": world.seed})


# -- constructions for the 2PL failure modes --------------------------------

def make_specialist_dataset(
    seed: int = 0,
    n_models: int = 400,
    block_items: int = 6,
    normal_items: int = 30,
    near_unanimous_items: int = 10,
    unanimous_items: int = 2,
) -> Dataset:
    """Dataset that defeats a single ability scale.

    Models get graded latent abilities. Normal items are Bernoulli draws from
    a rising curve in ability, the specialist block inverts the order
    (answered only by the weaker half), and each near-unanimous item is
    missed by one random model. A scalar-ability logistic fit must give the
    block negative discrimination, and it saturates the near-unanimous items
    into a predicted unanimity the data does not show: a lone miss inside a
    large ability bulk leaves the item's best fit at roughly n/(n+1) for
    everyone, which clears a 0.99 threshold only when the population is large
    enough, which is exactly the regime the effect appears in.
    """
    rng = np.random.default_rng(seed)
    theta = np.sort(rng.standard_normal(n_models))
    models = [f"m{i:03d}" for i in range(n_models)]
    records = []

    def add(qid, answered):
        for i, mid in enumerate(models):
            records.append(
                ResponseRecord(
                    model_id=mid,
                    question_id=qid,
                    correct=int(bool(answered[i])),
                    benchmark="specialist",
                )
            )

    weak_half = theta < np.median(theta)
    for j in range(block_items):
        add(f"block{j:03d}", weak_half)
    thresholds = np.quantile(theta, np.linspace(0.1, 0.9, normal_items))
    for j in range(normal_items):
        probs = sigmoid(2.0 * (theta - thresholds[j]))
        add(f"normal{j:03d}", rng.random(n_models) < probs)
    for j in range(near_unanimous_items):
        answered = np.ones(n_models, dtype=bool)
        answered[int(rng.integers(n_models))] = False
        add(f"near{j:03d}", answered)
    for j in range(unanimous_items):
        add(f"easy{j:03d}", np.ones(n_models, dtype=bool))
    return Dataset.from_records(records)


# -- proposition checkers ----------------------------------------------------

_CHECK_DIMS = (2, 3, 4, 8, 16)


def _split_counts(total: int, groups: int) -> list[int]:
    base = total // groups
    counts = [base] * groups
    for i in range(total - base * groups):
        counts[i] += 1
    return counts


def _prop1_margins(Q1: np.ndarray, Q2: np.ndarray):
    """Evaluate the rank-swap witnesses on question pairs (rows of Q1, Q2).

    E_M1 = Q1/||Q1||, E_M2 = Q2/||Q2||. Returns the two strict-inequality
    margins theta(M1,Q1) - theta(M2,Q1) and theta(M2,Q2) - theta(M1,Q2).
    """
    n1 = np.linalg.norm(Q1, axis=1)
    n2 = np.linalg.norm(Q2, axis=1)
    u1 = Q1 / n1[:, None]
    u2 = Q2 / n2[:, None]
    th_11 = np.einsum("ij,ij->i", Q1, u1) / n1
    th_21 = np.einsum("ij,ij->i", Q1, u2) / n1
    th_22 = np.einsum("ij,ij->i", Q2, u2) / n2
    th_12 = np.einsum("ij,ij->i", Q2, u1) / n2
    return th_11 - th_21, th_22 - th_12


def check_prop1(pairs: int = 1000, seed: int = 0) -> dict:
    """Witness construction: for any two non-parallel questions, the models
    E_M1 = Q1/||Q1||, E_M2 = Q2/||Q2|| swap ability ranks across them."""
    if pairs < 1:
        raise ConfigError("pairs must be >= 1")
    rng = np.random.default_rng(seed)
    skipped_parallel = 0
    violations = 0
    min_margin = np.inf

    # the orthogonal hand witness first
    m1, m2 = _prop1_margins(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    if not (m1[0] > 0 and m2[0] > 0):
        violations += 1
    min_margin = min(min_margin, float(m1[0]), float(m2[0]))
    checked = 1

    for dim, count in zip(_CHECK_DIMS, _split_counts(pairs, len(_CHECK_DIMS))):
        if count == 0:
            continue
        Q1 = _unit_rows(rng, count, dim) * rng.lognormal(0.0, 0.5, (count, 1))
        Q2 = _unit_rows(rng, count, dim) * rng.lognormal(0.0, 0.5, (count, 1))
        cos = np.einsum(
            "ij,ij->i",
            Q1 / np.linalg.norm(Q1, axis=1, keepdims=True),
            Q2 / np.linalg.norm(Q2, axis=1, keepdims=True),
        )
        parallel = cos >= 1.0 - 1e-12
        skipped_parallel += int(parallel.sum())
        if np.all(parallel):
            continue
        m1, m2 = _prop1_margins(Q1[~parallel], Q2[~parallel])
        violations += int(np.sum(~((m1 > 0) & (m2 > 0))))
        min_margin = min(min_margin, float(np.min(m1)), float(np.min(m2)))
        checked += int(m1.size)

    return {
        "pairs_checked": checked,
        "pairs_skipped_parallel": skipped_parallel,
        "violations": int(violations),
        "min_margin": float(min_margin),
    }


def _random_triples(rng: np.random.Generator, count: int, dim: int):
    """(E_M, E_Q1, E_Q2) with varied norms; half the Q2s hug Q1's direction."""
    em = rng.standard_normal((count, dim)) * rng.lognormal(0.0, 0.75, (count, 1))
    q1 = rng.standard_normal((count, dim))
    q1 /= np.linalg.norm(q1, axis=1, keepdims=True)
    q1 *= rng.lognormal(0.0, 0.5, (count, 1))
    q2 = rng.standard_normal((count, dim))
    near = rng.random(count) < 0.5
    delta = rng.lognormal(np.log(1e-2), 1.5, (count, 1))
    q2 = np.where(
        near[:, None],
        q1 + delta * rng.standard_normal((count, dim)),
        q2 * rng.lognormal(0.0, 0.5, (count, 1)),
    )
    norms2 = np.linalg.norm(q2, axis=1)
    keep = norms2 > 1e-9
    return em[keep], q1[keep], q2[keep]


def _stability_stats(em, q1, q2):
    n1 = np.linalg.norm(q1, axis=1)
    n2 = np.linalg.norm(q2, axis=1)
    u1 = q1 / n1[:, None]
    u2 = q2 / n2[:, None]
    cos = np.clip(np.einsum("ij,ij->i", u1, u2), -1.0, 1.0)
    eps = 1.0 - cos
    emn = np.linalg.norm(em, axis=1)
    th1 = np.einsum("ij,ij->i", u1, em)
    th2 = np.einsum("ij,ij->i", u2, em)
    return n1, n2, eps, emn, th1, th2


def check_prob_stability(trials: int, seed: int = 0) -> dict:
    """Bound check: |P(M,Q1)-P(M,Q2)| <= (sqrt(2 eps) ||E_M|| + |dnorm|) / 4."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    violations = 0
    corollary_violations = 0
    max_slack = -np.inf
    total = 0
    for dim, count in zip(_CHECK_DIMS, _split_counts(trials, len(_CHECK_DIMS))):
        if count == 0:
            continue
        em, q1, q2 = _random_triples(rng, count, dim)
        n1, n2, eps, emn, th1, th2 = _stability_stats(em, q1, q2)
        p1 = sigmoid(th1 - n1)
        p2 = sigmoid(th2 - n2)
        bound = 0.25 * (np.sqrt(2.0 * eps) * emn + np.abs(n1 - n2))
        slack = np.abs(p1 - p2) - bound
        violations += int(np.sum(slack > 1e-9))
        max_slack = max(max_slack, float(np.max(slack)))

        # equal-norm corollary: rescale Q2 onto Q1's norm
        p2eq = sigmoid(th2 - n1)
        slack_eq = np.abs(p1 - p2eq) - 0.25 * np.sqrt(2.0 * eps) * emn
        corollary_violations += int(np.sum(slack_eq > 1e-9))
        max_slack = max(max_slack, float(np.max(slack_eq)))
        total += int(eps.size)

    return {
        "trials": total,
        "violations": int(violations),
        "corollary_violations": int(corollary_violations),
        "max_slack": float(max_slack),
        "tolerance": 1e-9,
    }


def check_ability_shift(trials: int, seed: int = 0) -> dict:
    """Bound check: |Theta(M,Q1) - Theta(M,Q2)| <= sqrt(2 eps) ||E_M||."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    violations = 0
    max_slack = -np.inf
    total = 0
    for dim, count in zip(_CHECK_DIMS, _split_counts(trials, len(_CHECK_DIMS))):
        if count == 0:
            continue
        em, q1, q2 = _random_triples(rng, count, dim)
        _, _, eps, emn, th1, th2 = _stability_stats(em, q1, q2)
        slack = np.abs(th1 - th2) - np.sqrt(2.0 * eps) * emn
        violations += int(np.sum(slack > 1e-9))
        max_slack = max(max_slack, float(np.max(slack)))
        total += int(eps.size)
    return {
        "trials": total,
        "violations": int(violations),
        "max_slack": float(max_slack),
        "tolerance": 1e-9,
    }


# -- most-opposed question pair ---------------------------------------------

@dataclass(frozen=True)
class OpposedPair:
    question_a: str
    question_b: str
    cosine: float
    exact: bool


def most_opposed_pair(
    geom,
    within: str | None = None,
    exact_limit: int = 5000,
    sample_pairs: int = 10**6,
    seed: int = 0,
) -> OpposedPair:
    """Question pair with minimal direction cosine; exact below ``exact_limit``
    questions, seeded pair sampling (flagged) above it."""
    items = [g for g in geom if within is None or g.benchmark == within]
    if len(items) < 2:
        raise ConfigError("need at least two questions to compare directions")
    U = np.stack([g.unit for g in items])
    ids = [g.question_id for g in items]
    n = len(items)

    if n <= exact_limit:
        best = (np.inf, 0, 1)
        block = 256
        for start in range(0, n, block):
            rows = U[start : start + block] @ U.T  # (b, n)
            for bi in range(rows.shape[0]):
                i = start + bi
                if i + 1 >= n:
                    continue
                j_rel = int(np.argmin(rows[bi, i + 1 :]))
                val = float(rows[bi, i + 1 + j_rel])
                if val < best[0]:
                    best = (val, i, i + 1 + j_rel)
        return OpposedPair(ids[best[1]], ids[best[2]], best[0], exact=True)

    rng = np.random.default_rng(seed)
    ii = rng.integers(0, n, size=sample_pairs)
    jj = rng.integers(0, n, size=sample_pairs)
    keep = ii != jj
    ii, jj = ii[keep], jj[keep]
    cos = np.einsum("ij,ij->i", U[ii], U[jj])
    k = int(np.argmin(cos))
    return OpposedPair(ids[int(ii[k])], ids[int(jj[k])], float(cos[k]), exact=False)
