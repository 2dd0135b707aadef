"""Scalar-ability logistic baseline and its failure-mode diagnostics.

The classic two-parameter model P = sigmoid(a_j (theta_i - b_j)) assigns one
ability per model and a (discrimination, difficulty) pair per item. Fitting is
deliberately unconstrained in a_j: negative or near-zero discriminations are
the interesting outcome, not an error. The saturation report and the
correct-set inclusion matrix quantify the two ways a single ability scale
fails on model/question data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigError, CoverageError, DataError
from .numerics import bce_from_logits, sigmoid
from .optim import Adam


@dataclass(frozen=True)
class IrtParams:
    """theta per model, (a, b) per item; a is unconstrained in sign."""

    theta: dict[str, float]
    a: dict[str, float]
    b: dict[str, float]

    def __post_init__(self):
        for name, mapping in (("theta", self.theta), ("a", self.a), ("b", self.b)):
            for key, val in mapping.items():
                if not np.isfinite(val):
                    raise DataError(f"non-finite {name} for {key!r}")


@dataclass(frozen=True)
class Irt2plConfig:
    learning_rate: float = 0.05
    max_epochs: int = 2000
    seed: int = 0
    l2: float = 1e-4

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")


def icc(a: float, b: float, theta: float) -> float:
    """Item characteristic curve sigmoid(a (theta - b))."""
    for name, v in (("a", a), ("b", b), ("theta", theta)):
        if not np.isfinite(v):
            raise DataError(f"non-finite {name}")
    return float(sigmoid(a * (theta - b)))


def _standardize(theta, a, c):
    """Normalize theta to mean 0 / var 1, compensating the slope-intercept
    item parameters so the likelihood is untouched: z = a theta + c is
    invariant under theta -> (theta - mu)/sd, a -> a sd, c -> c + a mu."""
    mu = float(np.mean(theta))
    sd = float(np.std(theta))
    if sd > 1e-8:
        theta[:] = (theta - mu) / sd
        c[:] = c + a * mu
        a[:] = a * sd
    else:
        theta[:] = theta - mu
        c[:] = c + a * mu


def fit_2pl(ds: Dataset, cfg: Irt2plConfig = Irt2plConfig()) -> IrtParams:
    """Full-batch Adam on the L2-regularized Bernoulli likelihood.

    Items are optimized in slope-intercept form z = a theta + c (the same
    curve family; saturated near-flat items are then reachable without
    chasing b to infinity) and reported in the conventional (a, b) form with
    b = -c/a. Identifiability (the model is invariant under affine rescaling
    of theta) is pinned by standardizing theta after every epoch, with (a, c)
    compensated so the likelihood is untouched. The learning rate follows a
    cosine decay to zero across max_epochs. Deterministic given the seed.
    """
    mi, qi, y = ds.to_arrays()
    m = len(ds.model_index)
    n = len(ds.question_index)
    if m == 0 or n == 0:
        raise CoverageError("dataset has no records")
    if np.bincount(mi, minlength=m).min() == 0:
        raise CoverageError("a model has no records")
    if np.bincount(qi, minlength=n).min() == 0:
        raise CoverageError("an item has no records")

    rng = np.random.default_rng(cfg.seed)
    theta = rng.standard_normal(m)
    a = np.ones(n)
    c = np.zeros(n)
    _standardize(theta, a, c)

    N = float(y.size)
    yf = y.astype(np.float64)
    opt = Adam([theta, a, c], lr=cfg.learning_rate)
    for epoch in range(cfg.max_epochs):
        opt.lr = cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * epoch / cfg.max_epochs))
        resid = sigmoid(a[qi] * theta[mi] + c[qi]) - yf  # d(mean NLL)/dz per record
        g_theta = np.bincount(mi, weights=resid * a[qi], minlength=m) / N
        g_a = (np.bincount(qi, weights=resid * theta[mi], minlength=n) + 2.0 * cfg.l2 * a) / N
        g_c = (np.bincount(qi, weights=resid, minlength=n) + 2.0 * cfg.l2 * c) / N
        opt.step([g_theta, g_a, g_c])
        _standardize(theta, a, c)

    # convert intercepts to difficulties; near-flat items get their slope
    # floored at 1e-9 so the reported pair keeps a*b = -c (the curve itself
    # moves by at most ~3e-9 in the logit) instead of b overflowing
    a_safe = np.where(np.abs(a) < 1e-9, np.copysign(1e-9, a), a)
    b = -c / a_safe

    model_ids = list(ds.model_index)
    question_ids = list(ds.question_index)
    return IrtParams(
        theta={mid: float(theta[i]) for i, mid in enumerate(model_ids)},
        a={qid: float(a_safe[j]) for j, qid in enumerate(question_ids)},
        b={qid: float(b[j]) for j, qid in enumerate(question_ids)},
    )


def fit_logloss(params: IrtParams, ds: Dataset) -> float:
    """Mean BCE of the fitted curves on the dataset."""
    mi, qi, y = ds.to_arrays()
    theta = np.array([params.theta[mid] for mid in ds.model_index])
    a = np.array([params.a[qid] for qid in ds.question_index])
    b = np.array([params.b[qid] for qid in ds.question_index])
    z = a[qi] * (theta[mi] - b[qi])
    return float(np.mean(bce_from_logits(z, y.astype(np.float64))))


def saturation_report(
    params: IrtParams, ds: Dataset, p_hi: float = 0.99, p_lo: float = 0.01
) -> dict:
    """Fraction of items the fit predicts unanimous vs. actually unanimous.

    An item is predicted-unanimous when every recorded model's fitted
    probability is above p_hi or every one is below p_lo; actually unanimous
    when the observed responses all agree.
    """
    if not (0.0 < p_lo < p_hi < 1.0):
        raise ConfigError(f"need 0 < p_lo < p_hi < 1, got ({p_lo}, {p_hi})")
    missing = [q for q in ds.question_index if q not in params.a]
    missing += [mid for mid in ds.model_index if mid not in params.theta]
    if missing:
        raise CoverageError(f"params do not cover: {missing[:10]}")

    mi, qi, y = ds.to_arrays()
    theta = np.array([params.theta[mid] for mid in ds.model_index])
    a = np.array([params.a[qid] for qid in ds.question_index])
    b = np.array([params.b[qid] for qid in ds.question_index])
    probs = sigmoid(a[qi] * (theta[mi] - b[qi]))

    n = len(ds.question_index)
    qids = list(ds.question_index)
    pred_hi = np.ones(n, dtype=bool)
    pred_lo = np.ones(n, dtype=bool)
    act_all1 = np.ones(n, dtype=bool)
    act_all0 = np.ones(n, dtype=bool)
    np.logical_and.at(pred_hi, qi, probs > p_hi)
    np.logical_and.at(pred_lo, qi, probs < p_lo)
    np.logical_and.at(act_all1, qi, y == 1)
    np.logical_and.at(act_all0, qi, y == 0)

    predicted = pred_hi | pred_lo
    actual = act_all1 | act_all0
    return {
        "p_hi": p_hi,
        "p_lo": p_lo,
        "item_count": n,
        "predicted_unanimous_fraction": float(np.mean(predicted)),
        "actual_unanimous_fraction": float(np.mean(actual)),
        "predicted_unanimous_items": [qids[j] for j in np.flatnonzero(predicted)],
        "actual_unanimous_items": [qids[j] for j in np.flatnonzero(actual)],
    }


@dataclass(frozen=True)
class InclusionReport:
    """R(M_i, M_j) = |Q(M_i) \\ Q(M_j)| / |Q(M_i)| over accuracy-ordered pairs.

    Models are sorted by overall accuracy ascending (ties broken by id).
    matrix[i][j] is set for i != j whenever accuracy[j] >= accuracy[i] and
    model i answered at least one question correctly; NaN otherwise. Any
    positive defined entry refutes a strict global ordering.
    """

    model_order: tuple[str, ...]
    accuracy: np.ndarray
    matrix: np.ndarray
    undefined_models: tuple[str, ...]  # models with empty correct sets

    def to_json(self) -> dict:
        cells = [
            [None if np.isnan(v) else float(v) for v in row] for row in self.matrix
        ]
        return {
            "model_order": list(self.model_order),
            "accuracy": [float(x) for x in self.accuracy],
            "matrix": cells,
            "undefined_models": list(self.undefined_models),
        }


def correct_set_inclusion(ds: Dataset) -> InclusionReport:
    correct: dict[str, set[str]] = {mid: set() for mid in ds.model_index}
    totals: dict[str, int] = {mid: 0 for mid in ds.model_index}
    for rec in ds.records:
        totals[rec.model_id] += 1
        if rec.correct == 1:
            correct[rec.model_id].add(rec.question_id)

    order = sorted(
        ds.model_index, key=lambda mid: (correct_rate(correct, totals, mid), mid)
    )
    acc = np.array([correct_rate(correct, totals, mid) for mid in order])
    m = len(order)
    R = np.full((m, m), np.nan)
    undefined = []
    for i, mi_id in enumerate(order):
        qi_set = correct[mi_id]
        if not qi_set:
            undefined.append(mi_id)
            continue
        for j, mj_id in enumerate(order):
            if i == j or acc[j] < acc[i]:
                continue
            R[i, j] = len(qi_set - correct[mj_id]) / len(qi_set)
    return InclusionReport(
        model_order=tuple(order),
        accuracy=acc,
        matrix=R,
        undefined_models=tuple(undefined),
    )


def correct_rate(correct: dict[str, set], totals: dict[str, int], mid: str) -> float:
    return len(correct[mid]) / totals[mid] if totals[mid] else 0.0
