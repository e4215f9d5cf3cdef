import numpy as np
import pytest
import scipy.sparse
from _oracles import clustering_agreement, fit_ab_gauss_newton, two_blob_matrix

from cohortsplit.clustering import ClusterParams, kmeans_replicated
from cohortsplit.embedding import (
    EmbedParams,
    _symmetrize,
    build_knn_graph,
    embed,
    fit_similarity_curve,
    fuzzify,
    optimize_embedding,
    pca_project,
)
from cohortsplit.ingest import FeatureMatrix
from cohortsplit.util import CohortSplitError


def fm(values, ids=None):
    values = np.asarray(values, dtype=np.float64)
    ids = ids or [f"p{i:03d}" for i in range(values.shape[0])]
    return FeatureMatrix(values=values, patient_ids=ids)


class TestKnnGraph:
    def test_three_points_k1(self):
        graph = build_knn_graph(fm([[0.0], [1.0], [10.0]]), 1)
        assert graph.neighbor_indices[:, 0].tolist() == [1, 0, 1]

    def test_k_equal_n_is_error(self):
        with pytest.raises(CohortSplitError, match="k must satisfy"):
            build_knn_graph(fm(np.eye(4)), 4)

    def test_duplicate_points_mutual_at_distance_zero(self):
        graph = build_knn_graph(fm([[1.0, 1.0], [1.0, 1.0], [5.0, 5.0]]), 1)
        assert graph.neighbor_indices[0, 0] == 1
        assert graph.neighbor_indices[1, 0] == 0
        assert graph.neighbor_distances[0, 0] == 0.0

    def test_ties_break_to_lower_index(self):
        graph = build_knn_graph(fm([[0.0], [1.0], [2.0]]), 2)
        # point 1 is equidistant from 0 and 2; lower index first
        assert graph.neighbor_indices[1].tolist() == [0, 2]

    def test_no_self_loops(self):
        rng = np.random.default_rng(0)
        graph = build_knn_graph(fm(rng.normal(size=(20, 3))), 5)
        rows = np.arange(20)[:, None]
        assert not np.any(graph.neighbor_indices == rows)


class TestFuzzify:
    def test_equidistant_neighbors_weight_one(self):
        # unit square: both neighbors of every corner sit at its rho
        square = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
        graph = fuzzify(build_knn_graph(fm(square), 2), EmbedParams())
        assert graph.directed_weight_sums == pytest.approx([2.0] * 4)
        assert np.all(graph.membership_weights.data == 1.0)

    def test_symmetrize_formula(self):
        a = scipy.sparse.csr_matrix(np.array([[0.0, 0.5], [0.5, 0.0]]))
        sym = _symmetrize(a)
        assert sym[0, 1] == pytest.approx(0.75)
        assert sym[1, 0] == pytest.approx(0.75)

    def test_weights_within_unit_interval_random_graphs(self):
        for seed in range(12):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(8, 40))
            graph = fuzzify(
                build_knn_graph(fm(rng.normal(size=(n, 4))), min(6, n - 1)),
                EmbedParams(),
            )
            w = graph.membership_weights
            assert w.data.min() >= 0.0 and w.data.max() <= 1.0
            assert abs(w - w.T).max() < 1e-12
            assert w.diagonal().max() == 0.0

    def test_sigma_search_hits_target(self):
        rng = np.random.default_rng(7)
        k = 10
        graph = fuzzify(build_knn_graph(fm(rng.normal(size=(60, 5))), k), EmbedParams())
        target = np.log2(k)
        off_target = np.abs(graph.directed_weight_sums - target) > 1e-4
        assert not np.any(off_target & ~graph.sigma_floored)


class TestSimilarityCurve:
    def test_reference_values_min_dist_01(self):
        a, b = fit_similarity_curve(0.1)
        oa, ob = fit_ab_gauss_newton(0.1)
        assert a == pytest.approx(oa, abs=1e-3)
        assert b == pytest.approx(ob, abs=1e-3)

    @pytest.mark.parametrize("min_dist", [0.05, 0.25, 0.5])
    def test_matches_independent_fit(self, min_dist):
        a, b = fit_similarity_curve(min_dist)
        oa, ob = fit_ab_gauss_newton(min_dist)
        assert a == pytest.approx(oa, abs=1e-3)
        assert b == pytest.approx(ob, abs=1e-3)


class TestOptimizeEmbedding:
    def test_requires_weights(self):
        graph = build_knn_graph(fm(np.random.default_rng(0).normal(size=(10, 3))), 3)
        with pytest.raises(CohortSplitError, match="fuzzify"):
            optimize_embedding(graph, EmbedParams())

    def test_deterministic_bit_identical(self):
        x, _ = two_blob_matrix(15, 4, 6.0, seed=3)
        matrix = fm(x)
        e1 = embed(matrix, EmbedParams(seed=9))
        e2 = embed(matrix, EmbedParams(seed=9))
        assert e1.coords.tobytes() == e2.coords.tobytes()

    def test_two_blobs_recovered_exactly(self):
        x, labels = two_blob_matrix(20, 5, 10.0, seed=1)
        e = embed(fm(x), EmbedParams(seed=2))
        model = kmeans_replicated(e.coords, ClusterParams(k=2, seed=4))
        assert clustering_agreement(labels, model.assignments.tolist()) == 1.0

    def test_coords_finite(self):
        rng = np.random.default_rng(2)
        e = embed(fm(rng.normal(size=(40, 6))), EmbedParams(seed=0))
        assert np.all(np.isfinite(e.coords))

    def test_row_order_invariance(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(30, 4))
        ids = [f"p{i:03d}" for i in range(30)]
        base = embed(fm(x, ids), EmbedParams(seed=5))
        perm = rng.permutation(30)
        shuffled = embed(
            fm(x[perm].copy(), [ids[i] for i in perm]), EmbedParams(seed=5)
        )
        restored = np.empty_like(base.coords)
        restored[perm] = shuffled.coords
        assert np.array_equal(restored, base.coords)

    def test_neighbor_clamp_logged_small_cohort(self):
        rng = np.random.default_rng(4)
        e = embed(fm(rng.normal(size=(8, 3))), EmbedParams(n_neighbors=15, seed=1))
        assert e.params.n_neighbors == 7


class TestPcaProject:
    def test_2d_input_preserves_distances(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(25, 2))
        e = pca_project(fm(x))
        from scipy.spatial.distance import pdist

        assert np.allclose(pdist(x), pdist(e.coords), atol=1e-9)

    def test_rank_one_second_component_zero(self):
        t = np.linspace(-2, 2, 17)
        x = np.outer(t, [1.0, 2.0, -0.5])
        e = pca_project(fm(x))
        assert np.all(np.abs(e.coords[:, 1]) < 1e-9)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(30, 5))
        assert pca_project(fm(x)).coords.tobytes() == pca_project(fm(x)).coords.tobytes()

    def test_sign_convention(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(30, 4))
        e1 = pca_project(fm(x))
        e2 = pca_project(fm(-x))
        # flipping the data cannot flip the component orientation convention
        assert np.allclose(np.abs(e1.coords), np.abs(e2.coords), atol=1e-9)

    def test_oracle_equivalence_on_blobs(self):
        x, _ = two_blob_matrix(20, 5, 8.0, seed=12)
        matrix = fm(x)
        nonlinear = embed(matrix, EmbedParams(seed=3))
        linear = pca_project(matrix)
        k_nl = kmeans_replicated(nonlinear.coords, ClusterParams(k=2, seed=1))
        k_pc = kmeans_replicated(linear.coords, ClusterParams(k=2, seed=1))
        agreement = clustering_agreement(
            k_nl.assignments.tolist(), k_pc.assignments.tolist()
        )
        assert agreement >= 0.9
