import numpy as np
import pytest
from sklearn.metrics import (
    homogeneity_completeness_v_measure,
    normalized_mutual_info_score,
)

from helpers import contingency_metrics
from jeirt.clustering import ClusterAssignment, agreement_metrics, kmeans_unit
from jeirt.errors import ConfigError, CoverageError
from jeirt.geometry import geometry_from_embeddings


def _geom(vectors, tags=None):
    qids = [f"q{j:04d}" for j in range(len(vectors))]
    benchmarks = None if tags is None else dict(zip(qids, tags))
    return geometry_from_embeddings(qids, np.asarray(vectors, dtype=np.float64), benchmarks)


def _cone(rng, n, d, axis_idx, half_angle_deg=10.0):
    axis = np.zeros(d)
    axis[axis_idx] = 1.0
    out = np.empty((n, d))
    for i in range(n):
        g = rng.standard_normal(d)
        g -= (g @ axis) * axis
        g /= np.linalg.norm(g)
        phi = rng.uniform(0, np.deg2rad(half_angle_deg))
        out[i] = np.cos(phi) * axis + np.sin(phi) * g
    return out


class TestKmeans:
    def test_single_cluster_inertia(self, rng):
        vecs = rng.standard_normal((15, 4))
        geom = _geom(vecs)
        assign = kmeans_unit(geom, k=1, seed=0)
        assert set(assign.assignment.values()) == {0}
        U = np.stack([g.unit for g in geom])
        centroid = U.mean(axis=0)
        expected = float(np.sum((U - centroid) ** 2))
        assert assign.inertia == pytest.approx(expected, abs=1e-9)

    def test_two_separated_cones_recovered(self, rng):
        a = _cone(rng, 30, 5, 0) * rng.lognormal(0, 0.4, (30, 1))
        b = _cone(rng, 30, 5, 1) * rng.lognormal(0, 0.4, (30, 1))
        geom = _geom(np.vstack([a, b]))
        assign = kmeans_unit(geom, k=2, seed=3)
        labels = np.array([assign.assignment[g.question_id] for g in geom])
        assert len(set(labels[:30])) == 1 and len(set(labels[30:])) == 1
        assert labels[0] != labels[-1]

    def test_k_equals_n(self, rng):
        vecs = rng.standard_normal((8, 3))
        geom = _geom(vecs)
        assign = kmeans_unit(geom, k=8, seed=1)
        assert assign.inertia == pytest.approx(0.0, abs=1e-12)
        assert len(set(assign.assignment.values())) == 8

    def test_k_larger_than_n(self, rng):
        geom = _geom(rng.standard_normal((3, 2)))
        with pytest.raises(ConfigError):
            kmeans_unit(geom, k=4, seed=0)

    def test_lloyd_monotone(self, rng):
        geom = _geom(rng.standard_normal((120, 6)))
        assign = kmeans_unit(geom, k=7, seed=5)
        hist = np.array(assign.inertia_history)
        assert np.all(np.diff(hist) <= 1e-9)

    def test_deterministic(self, rng):
        geom = _geom(rng.standard_normal((40, 4)))
        a = kmeans_unit(geom, k=5, seed=11)
        b = kmeans_unit(geom, k=5, seed=11)
        assert a.assignment == b.assignment and a.inertia == b.inertia


class TestAgreementMetrics:
    @staticmethod
    def _assignment(clusters):
        qids = [f"q{i}" for i in range(len(clusters))]
        return (
            ClusterAssignment(
                assignment=dict(zip(qids, clusters)),
                k=max(clusters) + 1,
                seed=0,
                inertia=0.0,
                iterations=1,
                inertia_history=(0.0,),
            ),
            qids,
        )

    def test_perfect_agreement_all_ones(self):
        assign, qids = self._assignment([0, 0, 1, 1, 2, 2])
        labels = {q: f"s{c}" for q, c in assign.assignment.items()}
        metrics = agreement_metrics(assign, labels)
        assert all(v == pytest.approx(1.0) for v in metrics.values())

    def test_single_cluster_two_balanced_subjects(self):
        assign, qids = self._assignment([0, 0, 0, 0])
        labels = {qids[0]: "a", qids[1]: "a", qids[2]: "b", qids[3]: "b"}
        metrics = agreement_metrics(assign, labels)
        assert metrics["purity"] == pytest.approx(0.5)
        assert metrics["homogeneity"] == pytest.approx(0.0)
        assert metrics["completeness"] == pytest.approx(1.0)

    def test_matches_contingency_oracle(self, rng):
        for trial in range(20):
            n = 200
            clusters = rng.integers(0, int(rng.integers(2, 9)), n)
            subjects = [f"s{v}" for v in rng.integers(0, int(rng.integers(2, 7)), n)]
            assign, qids = self._assignment(list(clusters))
            labels = dict(zip(qids, subjects))
            metrics = agreement_metrics(assign, labels)
            expected = contingency_metrics(list(clusters), subjects)
            for key, val in expected.items():
                assert metrics[key] == pytest.approx(val, abs=1e-9), key

    def test_matches_sklearn_on_random_data(self, rng):
        n = 300
        clusters = list(rng.integers(0, 6, n))
        subjects = list(rng.integers(0, 4, n))
        assign, qids = self._assignment(clusters)
        labels = {q: f"s{v}" for q, v in zip(qids, subjects)}
        metrics = agreement_metrics(assign, labels)
        assert metrics["nmi"] == pytest.approx(
            normalized_mutual_info_score(subjects, clusters, average_method="arithmetic"),
            abs=1e-9,
        )
        hom, com, _ = homogeneity_completeness_v_measure(subjects, clusters)
        assert metrics["homogeneity"] == pytest.approx(hom, abs=1e-9)
        assert metrics["completeness"] == pytest.approx(com, abs=1e-9)

    def test_cluster_relabeling_invariance(self, rng):
        n = 120
        clusters = rng.integers(0, 5, n)
        subjects = [f"s{v}" for v in rng.integers(0, 3, n)]
        assign, qids = self._assignment(list(clusters))
        labels = dict(zip(qids, subjects))
        base = agreement_metrics(assign, labels)
        perm = rng.permutation(5)
        assign2, _ = self._assignment([int(perm[c]) for c in clusters])
        relabeled = agreement_metrics(assign2, labels)
        for key in base:
            assert relabeled[key] == pytest.approx(base[key], abs=1e-12)

    def test_ranges(self, rng):
        for _ in range(10):
            n = 50
            clusters = list(rng.integers(0, 4, n))
            subjects = [f"s{v}" for v in rng.integers(0, 4, n)]
            assign, qids = self._assignment(clusters)
            metrics = agreement_metrics(assign, dict(zip(qids, subjects)))
            assert all(0.0 <= v <= 1.0 for v in metrics.values())

    def test_missing_label(self):
        assign, qids = self._assignment([0, 1])
        with pytest.raises(CoverageError):
            agreement_metrics(assign, {qids[0]: "s"})

    def test_fragmented_subjects_homogeneity_exceeds_completeness(self):
        # pure clusters, each subject split across two of them
        clusters = [0, 0, 1, 1, 2, 2, 3, 3]
        subjects = ["a", "a", "a", "a", "b", "b", "b", "b"]
        assign, qids = self._assignment(clusters)
        metrics = agreement_metrics(assign, dict(zip(qids, subjects)))
        assert metrics["homogeneity"] == pytest.approx(1.0)
        assert metrics["completeness"] < 1.0
        assert metrics["homogeneity"] > metrics["completeness"]

    def test_geometric_nmi_variant(self, rng):
        n = 80
        clusters = list(rng.integers(0, 3, n))
        subjects = [f"s{v}" for v in rng.integers(0, 3, n)]
        assign, qids = self._assignment(clusters)
        labels = dict(zip(qids, subjects))
        geo = agreement_metrics(assign, labels, nmi_normalization="geometric")["nmi"]
        assert geo == pytest.approx(
            normalized_mutual_info_score(
                [labels[q] for q in qids], clusters, average_method="geometric"
            ),
            abs=1e-9,
        )
