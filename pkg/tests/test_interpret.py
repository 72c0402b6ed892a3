import numpy as np
import pytest

import carevec.interpret as interpret
from carevec.encodings import Vocabulary
from carevec.errors import DataError
from carevec.interpret import (
    group_coherence,
    influential_coordinates,
    patient_similarity,
    project_2d,
    reset_zero_vector_warnings,
    top_codes_per_coordinate,
)
from carevec.synthgen import GroundTruth

from helpers import tiny_params


VOCAB5 = Vocabulary(["A", "B", "C", "D", "E"])


class TestTopCodes:
    def test_one_hot_row_puts_code_first(self):
        W = np.zeros((3, 5))
        W[1, 3] = 1.0
        assert top_codes_per_coordinate(W, VOCAB5, 1)[0] == "D"

    def test_top_n_beyond_vocab_returns_all_sorted(self):
        rng = np.random.default_rng(0)
        W = rng.normal(size=(2, 5))
        out = top_codes_per_coordinate(W, VOCAB5, 0, top_n=99)
        assert len(out) == 5
        values = [W[0, VOCAB5.code_to_id[c]] for c in out]
        assert values == sorted(values, reverse=True)

    def test_matches_full_sort_oracle(self):
        rng = np.random.default_rng(1)
        W = rng.normal(size=(4, 5))
        i = 2
        oracle = [c for _, c in sorted(((-W[i, VOCAB5.code_to_id[c]], c) for c in VOCAB5.id_to_code))]
        assert top_codes_per_coordinate(W, VOCAB5, i, top_n=5) == oracle

    def test_ties_break_by_code_string(self):
        W = np.zeros((1, 5))
        assert top_codes_per_coordinate(W, VOCAB5, 0, top_n=3) == ["A", "B", "C"]

    def test_out_of_range(self):
        with pytest.raises(DataError):
            top_codes_per_coordinate(np.zeros((2, 5)), VOCAB5, 2)


class TestInfluence:
    def test_zero_regression_weights(self):
        params = tiny_params()
        ranked = influential_coordinates(params, np.zeros(3), top_m=4)
        assert all(score == 0.0 for _, score in ranked)

    def test_single_feeding_coordinate_ranks_first(self):
        # hand construction: only coordinate 0 feeds a positive regression weight
        params = tiny_params()
        params.W_p[:] = 0.0
        params.W_p[0, 0] = 1.0  # regressor unit 0 reads embedding coordinate 0
        params.W_c[:] = 0.0
        params.W_c[0, 2] = 2.0
        params.b_c[:] = 0.0
        ranked = influential_coordinates(params, np.array([1.0, 0.0, 0.0]), top_m=2)
        assert ranked[0][0] == 0
        assert ranked[0][1] == pytest.approx(2.0)

    def test_positive_scaling_preserves_ranking(self):
        params = tiny_params(seed=5)
        w = np.array([0.5, -1.0, 2.0])
        base = influential_coordinates(params, w, top_m=4)
        scaled = influential_coordinates(params, 3.0 * w, top_m=4)
        assert [c for c, _ in base] == [c for c, _ in scaled]
        for (_, a), (_, b) in zip(base, scaled):
            assert b == pytest.approx(3.0 * a, rel=1e-12)

    def test_oversized_regressor_rejected(self):
        params = tiny_params()
        with pytest.raises(DataError):
            influential_coordinates(params, np.ones(10))


class TestSimilarity:
    def test_identical_vectors(self):
        v = np.array([1.0, 2.0, 3.0])
        assert patient_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_vectors(self):
        assert patient_similarity(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == 0.0

    def test_symmetry_property(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            a, b = rng.normal(size=4), rng.normal(size=4)
            assert patient_similarity(a, b) == pytest.approx(patient_similarity(b, a), abs=1e-15)

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=5), rng.normal(size=5)
        assert patient_similarity(3.7 * a, b) == pytest.approx(patient_similarity(a, 0.2 * b), abs=1e-12)

    def test_zero_vector_counts_warning(self):
        reset_zero_vector_warnings()
        assert patient_similarity(np.zeros(3), np.ones(3)) == 0.0
        assert interpret.ZERO_VECTOR_WARNINGS == 1
        assert reset_zero_vector_warnings() == 1


def block_truth(n_groups, per_group):
    truth = GroundTruth()
    for g in range(n_groups):
        for i in range(per_group):
            truth.code_group[f"G{g}C{i}"] = g
    return truth


class TestCoherence:
    def test_perfect_blocks(self):
        truth = block_truth(3, 4)
        vectors = {}
        for code, g in truth.code_group.items():
            v = np.zeros(3)
            v[g] = 1.0
            vectors[code] = v
        intra, inter, purity = group_coherence(vectors, truth)
        assert intra == pytest.approx(1.0)
        assert inter == pytest.approx(0.0, abs=1e-12)
        assert purity == 1.0

    def test_random_vectors_near_chance(self):
        # oracle: simulate; with G equal groups purity concentrates near 1/G
        truth = block_truth(5, 12)
        rng = np.random.default_rng(7)
        vectors = {code: rng.normal(size=16) for code in truth.code_group}
        _, _, purity = group_coherence(vectors, truth)
        assert abs(purity - 0.2) < 0.15

    def test_single_code_groups_error(self):
        truth = block_truth(4, 1)
        vectors = {code: np.ones(2) for code in truth.code_group}
        with pytest.raises(DataError):
            group_coherence(vectors, truth)

    def test_bounds(self):
        truth = block_truth(2, 5)
        rng = np.random.default_rng(9)
        vectors = {code: rng.normal(size=6) for code in truth.code_group}
        intra, inter, purity = group_coherence(vectors, truth)
        assert -1.0 <= intra <= 1.0 and -1.0 <= inter <= 1.0 and 0.0 <= purity <= 1.0


class TestProjection:
    def test_2d_centered_data_is_rotation(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(40, 2))
        X -= X.mean(axis=0)
        coords = project_2d(X)
        # distances preserved under rotation
        d_orig = np.linalg.norm(X[:10, None] - X[None, :10], axis=2)
        d_proj = np.linalg.norm(coords[:10, None] - coords[None, :10], axis=2)
        np.testing.assert_allclose(d_orig, d_proj, atol=1e-9)

    def test_rank_one_second_component_vanishes(self):
        rng = np.random.default_rng(5)
        direction = rng.normal(size=6)
        X = np.outer(rng.normal(size=30), direction)
        coords = project_2d(X)
        assert coords[:, 1].std() < 1e-9

    def test_matches_eigendecomposition_oracle(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(10, 5))
        Xc = X - X.mean(axis=0)
        evals, evecs = np.linalg.eigh(Xc.T @ Xc)
        top = evecs[:, np.argsort(evals)[::-1][:2]].T
        for i in range(2):  # apply the same sign convention as the implementation
            if top[i][np.argmax(np.abs(top[i]))] < 0:
                top[i] = -top[i]
        np.testing.assert_allclose(project_2d(X), Xc @ top.T, atol=1e-9)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(12, 4))
        np.testing.assert_array_equal(project_2d(X), project_2d(X))
