import numpy as np
import pytest

from jeirt.data import Dataset, FeatureMatrix, JeirtCheckpoint, ResponseRecord, make_split
from jeirt.engine import TrainConfig, evaluate, predict_records, train
from jeirt.errors import ConfigError, CoverageError
from jeirt.model import AdapterParams, ModelTable, init_adapter, init_table
from jeirt.numerics import sigmoid
from jeirt.synth import generate_planted, oracle_checkpoint


def _ckpt_bytes(ckpt):
    return (
        ckpt.adapter.W1.tobytes()
        + ckpt.adapter.b1.tobytes()
        + ckpt.adapter.W2.tobytes()
        + ckpt.adapter.b2.tobytes()
        + ckpt.model_table.vectors.tobytes()
    )


@pytest.fixture(scope="module")
def small_world():
    return generate_planted(m=6, n=120, d=4, seed=13)


@pytest.fixture(scope="module")
def small_split(small_world):
    return make_split(small_world.dataset, (0.8, 0.1, 0.1), seed=2)


class TestTrain:
    def test_same_seed_bit_identical(self, small_world, small_split):
        cfg = TrainConfig(embed_dim=4, max_epochs=4, seed=42, batch_size=64)
        a = train(small_world.dataset, small_split, small_world.features, cfg)
        b = train(small_world.dataset, small_split, small_world.features, cfg)
        assert _ckpt_bytes(a) == _ckpt_bytes(b)
        assert a.train_meta == b.train_meta

    def test_zero_epochs_returns_init(self, small_world, small_split):
        cfg = TrainConfig(embed_dim=4, max_epochs=0, seed=9)
        ckpt = train(small_world.dataset, small_split, small_world.features, cfg)
        assert ckpt.train_meta["epoch"] == 0
        rng = np.random.default_rng(9)
        adapter0 = init_adapter(small_world.features.dim, 4, rng)
        table0 = init_table(small_world.dataset.model_ids, 4, rng)
        expect = JeirtCheckpoint.build(adapter0, table0)
        assert ckpt.adapter.W1.tobytes() == expect.adapter.W1.tobytes()
        assert ckpt.model_table.vectors.tobytes() == expect.model_table.vectors.tobytes()

    def test_val_loss_never_worse_than_init(self, small_world, small_split):
        cfg0 = TrainConfig(embed_dim=4, max_epochs=0, seed=5)
        cfgN = TrainConfig(embed_dim=4, max_epochs=6, seed=5, batch_size=64)
        init_loss = train(small_world.dataset, small_split, small_world.features, cfg0)
        trained = train(small_world.dataset, small_split, small_world.features, cfgN)
        assert trained.train_meta["val_loss"] <= init_loss.train_meta["val_loss"]

    def test_missing_feature_rows(self, small_world, small_split):
        partial = FeatureMatrix(
            small_world.features.question_ids[:-5], small_world.features.values[:-5]
        )
        cfg = TrainConfig(embed_dim=4, max_epochs=1, seed=0)
        with pytest.raises(CoverageError, match="q"):
            train(small_world.dataset, small_split, partial, cfg)

    def test_test_only_questions_may_lack_features(self, small_world):
        # the coverage precondition applies to train and val records only
        ds = small_world.dataset
        split = make_split(ds, (0.8, 0.1, 0.1), seed=2, mode="question")
        test_only = {
            ds.records[i].question_id for i in split.test
        } - {ds.records[i].question_id for i in np.concatenate([split.train, split.val])}
        assert test_only
        keep = [q for q in small_world.features.question_ids if q not in test_only]
        partial = FeatureMatrix(tuple(keep), small_world.features.rows(keep))
        cfg = TrainConfig(embed_dim=4, max_epochs=1, seed=0, batch_size=64)
        ckpt = train(ds, split, partial, cfg)
        assert ckpt.train_meta["epoch"] >= 0


def _half_prob_checkpoint(model_ids, feats):
    """Adapter collapses every question to c and each model row equals c, so
    ability cancels the norm and every probability is exactly 0.5."""
    p = feats.dim
    c = np.array([3.0, 4.0], dtype=np.float64)
    adapter = AdapterParams(
        W1=np.zeros((2 * p, p)), b1=np.zeros(2 * p), W2=np.zeros((2, 2 * p)), b2=c
    )
    table = ModelTable(tuple(model_ids), np.tile(c, (len(model_ids), 1)))
    return JeirtCheckpoint.build(adapter, table)


class TestEvaluate:
    def test_tie_break_predicts_correct(self):
        records = [
            ResponseRecord("m1", f"q{j}", j % 2, "b") for j in range(10)
        ]
        ds = Dataset.from_records(records)
        feats = FeatureMatrix(ds.question_ids, np.ones((10, 3), dtype=np.float32))
        ckpt = _half_prob_checkpoint(ds.model_ids, feats)
        probs = predict_records(ckpt, ds, np.arange(10), feats)
        assert np.all(probs == 0.5)
        report = evaluate(ckpt, ds, np.arange(10), feats)
        # exactly-0.5 counts as predicted correct, so accuracy = share of 1s
        assert report.overall_accuracy == pytest.approx(0.5)

    def test_hand_built_per_model_map(self):
        records = [
            ResponseRecord("m1", "q1", 1, "x"),
            ResponseRecord("m1", "q2", 1, "y"),
            ResponseRecord("m2", "q1", 0, "x"),
            ResponseRecord("m2", "q2", 1, "y"),
        ]
        ds = Dataset.from_records(records)
        feats = FeatureMatrix(ds.question_ids, np.ones((2, 3), dtype=np.float32))
        ckpt = _half_prob_checkpoint(ds.model_ids, feats)
        report = evaluate(ckpt, ds, np.arange(4), feats)
        # all predictions are "correct": m1 hits 2/2, m2 hits 1/2
        assert report.per_model_accuracy == {"m1": 1.0, "m2": 0.5}
        assert report.per_benchmark_accuracy == {"x": 0.5, "y": 1.0}
        assert report.overall_accuracy == pytest.approx(0.75)

    def test_oracle_checkpoint_matches_brute_force(self, small_world):
        ckpt = oracle_checkpoint(small_world)
        idx = np.arange(len(small_world.dataset.records))
        report = evaluate(ckpt, small_world.dataset, idx, small_world.features)

        # independent pass: longhand forward per record off the checkpoint
        hits = 0
        ad = ckpt.adapter
        for rec in small_world.dataset.records:
            x = small_world.features.row(rec.question_id).astype(np.float64)
            eq = ad.W2.astype(np.float64) @ np.maximum(
                ad.W1.astype(np.float64) @ x + ad.b1.astype(np.float64), 0.0
            ) + ad.b2.astype(np.float64)
            em = ckpt.model_table.vector(rec.model_id).astype(np.float64)
            nq = np.linalg.norm(eq)
            prob = 1.0 / (1.0 + np.exp(-((eq @ em) / nq - nq)))
            hits += int((prob >= 0.5) == (rec.correct == 1))
        assert report.overall_accuracy == pytest.approx(hits / idx.size, abs=0)

    def test_overall_is_record_weighted_model_mean(self, small_world):
        ckpt = oracle_checkpoint(small_world)
        idx = np.arange(0, len(small_world.dataset.records), 3)
        report = evaluate(ckpt, small_world.dataset, idx, small_world.features)
        weighted = sum(
            report.per_model_accuracy[m] * report.per_model_count[m]
            for m in report.per_model_accuracy
        ) / sum(report.per_model_count.values())
        assert report.overall_accuracy == pytest.approx(weighted, abs=1e-9)

    def test_logloss_matches_planted_for_oracle(self, small_world):
        ckpt = oracle_checkpoint(small_world)
        idx = np.arange(len(small_world.dataset.records))
        report = evaluate(ckpt, small_world.dataset, idx, small_world.features)
        assert report.mean_logloss == pytest.approx(small_world.bayes_logloss, abs=1e-4)

    def test_empty_part_rejected(self, small_world):
        ckpt = oracle_checkpoint(small_world)
        with pytest.raises(ConfigError):
            evaluate(ckpt, small_world.dataset, np.array([], dtype=np.int64), small_world.features)

    def test_groups_absent_from_part_are_omitted(self):
        records = [
            ResponseRecord("m1", "q1", 1, "x"),
            ResponseRecord("m1", "q2", 1, "y"),
            ResponseRecord("m2", "q1", 1, "x"),
        ]
        ds = Dataset.from_records(records)
        feats = FeatureMatrix(ds.question_ids, np.ones((2, 3), dtype=np.float32))
        ckpt = _half_prob_checkpoint(ds.model_ids, feats)
        report = evaluate(ckpt, ds, np.array([0, 2]), feats)  # only benchmark "x"
        assert set(report.per_benchmark_accuracy) == {"x"}
        assert set(report.per_model_accuracy) == {"m1", "m2"}

    def test_probabilities_validate_against_sigmoid(self, small_world):
        ckpt = oracle_checkpoint(small_world)
        probs = predict_records(ckpt, small_world.dataset, np.arange(50), small_world.features)
        assert np.all((probs > 0) & (probs < 1))
        assert np.allclose(probs, sigmoid(np.log(probs / (1 - probs))), atol=1e-12)
