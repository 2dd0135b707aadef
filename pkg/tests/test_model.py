import math

import numpy as np
import pytest

from helpers import fd_max_relative_error, random_fd_config, straight_line_forward, straight_line_prob
from jeirt.data import FeatureMatrix, ResponseRecord
from jeirt.engine import batch_loss_and_grads
from jeirt.errors import ConfigError, DegenerateQuestionError, IdLookupError, ShapeError
from jeirt.model import (
    AdapterParams,
    ModelTable,
    ability,
    predict_prob,
    question_embedding,
)


def _zero_adapter(p, d):
    return AdapterParams(
        W1=np.zeros((2 * p, p)), b1=np.zeros(2 * p), W2=np.zeros((d, 2 * p)), b2=np.zeros(d)
    )


class TestQuestionEmbedding:
    def test_zero_adapter_maps_to_zero(self, rng):
        adapter = _zero_adapter(4, 3)
        out = question_embedding(adapter, rng.standard_normal(4))
        assert np.array_equal(out, np.zeros(3))

    def test_constant_map(self, rng):
        c = np.array([1.5, -2.0, 0.25])
        adapter = AdapterParams(
            W1=np.zeros((8, 4)), b1=np.zeros(8), W2=np.zeros((3, 8)), b2=c
        )
        for _ in range(5):
            assert np.array_equal(question_embedding(adapter, rng.standard_normal(4)), c)

    def test_matches_straight_line_reimplementation(self, rng):
        for _ in range(20):
            p, d = int(rng.integers(2, 7)), int(rng.integers(1, 5))
            adapter = AdapterParams(
                W1=rng.standard_normal((2 * p, p)),
                b1=rng.standard_normal(2 * p),
                W2=rng.standard_normal((d, 2 * p)),
                b2=rng.standard_normal(d),
            )
            x = rng.standard_normal(p)
            expected = straight_line_forward(adapter.W1, adapter.b1, adapter.W2, adapter.b2, x)
            assert np.allclose(question_embedding(adapter, x), expected, atol=1e-6)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            question_embedding(_zero_adapter(4, 3), np.zeros(5))


class TestAbility:
    def test_unit_self_projection(self, rng):
        e_q = rng.standard_normal(6)
        e_m = e_q / np.linalg.norm(e_q)
        assert ability(e_m, e_q) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_is_zero(self):
        assert ability(np.array([0.0, 2.0]), np.array([3.0, 0.0])) == 0.0

    def test_hand_arithmetic(self):
        assert ability(np.array([3.0, 4.0]), np.array([3.0, 4.0])) == pytest.approx(5.0)

    def test_degenerate_question(self):
        with pytest.raises(DegenerateQuestionError):
            ability(np.ones(3), np.zeros(3))

    def test_direction_invariance(self, rng):
        for _ in range(50):
            e_m = rng.standard_normal(5)
            e_q = rng.standard_normal(5)
            c = float(rng.uniform(1e-3, 1e3))
            assert ability(e_m, c * e_q) == pytest.approx(ability(e_m, e_q), rel=1e-9)


class TestPredictProb:
    def test_cancellation_gives_half(self):
        e_q = np.array([3.0, 4.0])
        assert predict_prob(e_q, e_q) == pytest.approx(0.5, abs=1e-15)

    def test_logistic_table_value(self):
        e_q = np.array([1.0, 0.0])
        e_m = 2.0 * e_q
        assert predict_prob(e_m, e_q) == pytest.approx(0.731059, abs=1e-6)

    def test_matches_formula_oracle(self, rng):
        for _ in range(200):
            d = int(rng.integers(1, 8))
            e_m = rng.standard_normal(d) * rng.uniform(0.1, 3)
            e_q = rng.standard_normal(d)
            if np.linalg.norm(e_q) < 1e-6:
                continue
            assert predict_prob(e_m, e_q) == pytest.approx(
                straight_line_prob(e_m, e_q), abs=1e-12
            )

    def test_strictly_decreasing_in_norm(self, rng):
        for _ in range(20):
            d = int(rng.integers(2, 6))
            u = rng.standard_normal(d)
            u /= np.linalg.norm(u)
            e_m = rng.standard_normal(d)
            probs = [predict_prob(e_m, t * u) for t in np.linspace(0.1, 10.0, 40)]
            assert np.all(np.diff(probs) < 0)

    def test_stable_at_extreme_logits(self):
        u = np.array([1.0, 0.0])
        p = predict_prob(480.0 * u, u)  # logit 479
        assert p == pytest.approx(1.0)
        p = predict_prob(-480.0 * u, u)  # logit -481
        assert p == pytest.approx(0.0)
        assert math.isfinite(p)


def _tiny_setup():
    # cancellation construction: every probability is exactly 0.5
    c = np.array([3.0, 4.0])
    adapter = AdapterParams(
        W1=np.zeros((4, 2)), b1=np.zeros(4), W2=np.zeros((2, 4)), b2=c
    )
    table = ModelTable(("m1",), c[None, :].copy())
    feats = FeatureMatrix(("q1", "q2"), np.ones((2, 2), dtype=np.float32))
    return adapter, table, feats


class TestBatchLoss:
    def test_half_probability_unit_label_gives_ln2(self):
        adapter, table, feats = _tiny_setup()
        recs = [ResponseRecord("m1", "q1", 1, "b")]
        loss, _ = batch_loss_and_grads(adapter, table, feats, recs)
        assert loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_duplicated_batch_is_invariant(self, rng):
        adapter, table, feats, recs = random_fd_config(rng)
        loss1, g1 = batch_loss_and_grads(adapter, table, feats, recs)
        loss2, g2 = batch_loss_and_grads(adapter, table, feats, recs + recs)
        assert loss2 == pytest.approx(loss1, rel=1e-12)
        for name in ("W1", "b1", "W2", "b2", "table"):
            assert np.allclose(getattr(g2, name), getattr(g1, name), rtol=1e-12, atol=1e-15)

    def test_unresolvable_ids(self):
        adapter, table, feats = _tiny_setup()
        with pytest.raises(IdLookupError, match="model"):
            batch_loss_and_grads(adapter, table, feats, [ResponseRecord("nope", "q1", 1, "b")])
        with pytest.raises(IdLookupError, match="question"):
            batch_loss_and_grads(adapter, table, feats, [ResponseRecord("m1", "nope", 1, "b")])

    def test_empty_batch(self):
        adapter, table, feats = _tiny_setup()
        with pytest.raises(ConfigError):
            batch_loss_and_grads(adapter, table, feats, [])

    def test_gradients_match_finite_differences(self, rng):
        for _ in range(8):
            adapter, table, feats, recs = random_fd_config(rng)
            assert fd_max_relative_error(adapter, table, feats, recs) < 1e-3


class TestProbabilityStabilityBound:
    def test_bound_holds_on_random_triples(self, rng):
        for _ in range(2000):
            d = int(rng.integers(2, 6))
            e_m = rng.standard_normal(d) * rng.uniform(0.2, 4)
            q1 = rng.standard_normal(d)
            q2 = rng.standard_normal(d) if rng.random() < 0.5 else q1 + 1e-3 * rng.standard_normal(d)
            n1, n2 = np.linalg.norm(q1), np.linalg.norm(q2)
            if min(n1, n2) < 1e-6:
                continue
            eps = 1.0 - float(np.clip((q1 @ q2) / (n1 * n2), -1.0, 1.0))
            dp = abs(predict_prob(e_m, q1) - predict_prob(e_m, q2))
            bound = 0.25 * (np.sqrt(2.0 * eps) * np.linalg.norm(e_m) + abs(n1 - n2))
            assert dp <= bound + 1e-9
