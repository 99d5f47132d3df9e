"""Normalization chain: power law, rotation fitting, truncation, similarity."""

import numpy as np
import pytest

from mkagg.democratic import DemocraticConfig, aggregate_democratic, aggregate_sum, sinkhorn_weights
from mkagg.kernel import gram
from mkagg.normalize import (
    NormalizeConfig,
    apply_chain,
    l2_normalize,
    power_law,
    rn_fit,
    similarity,
)
from mkagg.types import AggregateVector, EmbeddedSet, ZeroVectorError


class TestPowerLaw:
    def test_signed_square_root(self):
        np.testing.assert_allclose(power_law(np.array([-4.0, 0.25]), 0.5), [-2.0, 0.5], atol=1e-12)

    def test_exponent_one_is_identity(self):
        v = np.array([-3.0, 0.0, 2.5])
        np.testing.assert_array_equal(power_law(v, 1.0), v)

    def test_exponent_zero_binarizes(self):
        np.testing.assert_array_equal(power_law(np.array([-3.0, 0.0, 2.0]), 0.0), [-1.0, 0.0, 1.0])

    def test_zero_maps_to_zero_for_all_exponents(self):
        for a in (0.0, 0.3, 0.5, 1.0):
            assert power_law(np.array([0.0]), a)[0] == 0.0


class TestL2Normalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8], atol=1e-12)

    def test_idempotent_on_unit(self):
        v = np.array([0.6, 0.8])
        np.testing.assert_allclose(l2_normalize(v), v, atol=1e-12)

    def test_norm_and_direction(self):
        rng = np.random.default_rng(40)
        for _ in range(20):
            v = rng.normal(size=10)
            out = l2_normalize(v)
            assert abs(np.linalg.norm(out) - 1.0) <= 1e-12
            np.testing.assert_allclose(out * np.linalg.norm(v), v, atol=1e-9)

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVectorError):
            l2_normalize(np.zeros(4))


def _vecs(rows):
    return [AggregateVector(np.asarray(r, dtype=np.float64)) for r in rows]


class TestRnFit:
    def test_rank_one_axis(self):
        """Vectors along e3: first row is +e3 under the sign rule."""
        rows = [[0.0, 0.0, t] for t in (-2.0, 1.0, 3.0, 0.5)]
        rot = rn_fit(_vecs(rows), max_eigvecs=1)
        np.testing.assert_allclose(rot[0], [0.0, 0.0, 1.0], atol=1e-12)

    def test_output_orthonormal(self):
        rng = np.random.default_rng(41)
        rows = rng.normal(size=(30, 12))
        rot = rn_fit(_vecs(rows), max_eigvecs=5)
        assert np.max(np.abs(rot.T @ rot - np.eye(12))) <= 1e-9
        assert np.max(np.abs(rot @ rot.T - np.eye(12))) <= 1e-9

    def test_leading_rows_match_eigensolver(self):
        """Cross-check against an eigendecomposition of the covariance."""
        rng = np.random.default_rng(42)
        rows = rng.normal(size=(100, 16)) @ np.diag(np.linspace(3.0, 0.3, 16))
        rot = rn_fit(_vecs(rows), max_eigvecs=4)

        data = rows - rows.mean(axis=0)
        cov = data.T @ data / data.shape[0]
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1]
        for i in range(4):
            expected = eigvecs[:, order[i]]
            if expected[np.argmax(np.abs(expected))] < 0:
                expected = -expected
            assert np.max(np.abs(rot[i] - expected)) <= 1e-8

    def test_rotation_preserves_norms(self):
        rng = np.random.default_rng(43)
        rows = rng.normal(size=(20, 8))
        rot = rn_fit(_vecs(rows), max_eigvecs=3)
        for _ in range(10):
            v = rng.normal(size=8)
            assert abs(np.linalg.norm(rot @ v) - np.linalg.norm(v)) <= 1e-9

    def test_deterministic(self):
        rng = np.random.default_rng(44)
        rows = rng.normal(size=(15, 6))
        a = rn_fit(_vecs(rows), max_eigvecs=2)
        b = rn_fit(_vecs(rows), max_eigvecs=2)
        np.testing.assert_array_equal(a, b)

    def test_too_few_vectors(self):
        with pytest.raises(ValueError, match="at least 2"):
            rn_fit(_vecs([[1.0, 0.0]]), max_eigvecs=1)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="dimensionality"):
            rn_fit([AggregateVector(np.zeros(2) + 1), AggregateVector(np.zeros(3) + 1)], 1)


class TestApplyChain:
    def test_reduces_to_l2(self):
        out = apply_chain(AggregateVector(np.array([3.0, 4.0])), NormalizeConfig(alpha_exponent=1.0))
        np.testing.assert_allclose(out.xi, [0.6, 0.8], atol=1e-12)
        assert out.state == ("raw", "power(1)", "l2")

    def test_identity_rotation_single_axis(self):
        cfg = NormalizeConfig(alpha_exponent=0.5, rotation=np.eye(2))
        out = apply_chain(AggregateVector(np.array([4.0, 0.0])), cfg)
        np.testing.assert_allclose(out.xi, [1.0, 0.0], atol=1e-12)
        assert out.state == ("raw", "rotated", "power(0.5)", "l2")

    def test_full_chain_against_step_oracle(self):
        rng = np.random.default_rng(45)
        v = rng.normal(size=8)
        rows = rng.normal(size=(30, 8))
        rot = rn_fit(_vecs(rows), max_eigvecs=8)
        cfg = NormalizeConfig(alpha_exponent=0.5, rotation=rot, truncate_to=4)
        out = apply_chain(AggregateVector(v), cfg)

        step = rot @ v
        step = np.sign(step) * np.abs(step) ** 0.5
        step = step[:4]
        step = step / np.linalg.norm(step)
        np.testing.assert_allclose(out.xi, step, atol=1e-12)
        assert out.state == ("raw", "rotated", "power(0.5)", "truncated(4)", "l2")

    def test_output_norm_is_one(self):
        rng = np.random.default_rng(46)
        for _ in range(10):
            out = apply_chain(AggregateVector(rng.normal(size=6)), NormalizeConfig())
            assert abs(np.linalg.norm(out.xi) - 1.0) <= 1e-6

    def test_truncate_then_l2_regression(self):
        """The chain truncates before normalizing, not after."""
        v = np.array([3.0, 0.0, 4.0])
        cfg = NormalizeConfig(alpha_exponent=1.0, truncate_to=2)
        out = apply_chain(AggregateVector(v), cfg)
        np.testing.assert_allclose(out.xi, [1.0, 0.0], atol=1e-12)

    def test_zero_after_truncation_fails(self):
        cfg = NormalizeConfig(alpha_exponent=1.0, truncate_to=1)
        with pytest.raises(ZeroVectorError):
            apply_chain(AggregateVector(np.array([0.0, 5.0])), cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError, match="orthonormal"):
            NormalizeConfig(rotation=np.array([[1.0, 1.0], [0.0, 1.0]]))
        with pytest.raises(ValueError, match="exponent"):
            NormalizeConfig(alpha_exponent=1.5)


class TestSimilarity:
    def test_self_similarity_is_one(self):
        v = apply_chain(AggregateVector(np.array([1.0, 2.0, 3.0])), NormalizeConfig(alpha_exponent=1.0))
        assert abs(similarity(v, v) - 1.0) <= 1e-12

    def test_orthogonal_is_zero(self):
        a = AggregateVector(np.array([1.0, 0.0]), ("raw", "l2"))
        b = AggregateVector(np.array([0.0, 1.0]), ("raw", "l2"))
        assert similarity(a, b) == 0.0

    def test_matches_cosine_oracle(self):
        rng = np.random.default_rng(47)
        for _ in range(10):
            x, y = rng.normal(size=6), rng.normal(size=6)
            a = AggregateVector(x / np.linalg.norm(x), ("raw", "l2"))
            b = AggregateVector(y / np.linalg.norm(y), ("raw", "l2"))
            oracle = float(x @ y) / (np.linalg.norm(x) * np.linalg.norm(y))
            assert abs(similarity(a, b) - oracle) <= 1e-12

    def test_unnormalized_rejected(self):
        a = AggregateVector(np.array([1.0, 0.0]), ("raw", "l2"))
        b = AggregateVector(np.array([2.0, 0.0]), ("raw",))
        with pytest.raises(ValueError, match="normalized"):
            similarity(a, b)


class TestCountSqrtEquivalence:
    def test_power_half_of_sum_equals_democratic(self):
        """sqrt + l2 of a BOW sum equals the democratic aggregate + l2."""
        rng = np.random.default_rng(48)
        for _ in range(10):
            c = int(rng.integers(2, 10))
            n = int(rng.integers(1, 50))
            assignment = rng.integers(0, c, size=n)
            phi = np.zeros((c, n))
            phi[assignment, np.arange(n)] = 1.0
            layout = tuple((k, k + 1) for k in range(c))
            emb = EmbeddedSet(phi=phi, assignment=assignment, block_layout=layout, unit_columns=True)

            summed = aggregate_sum(emb)
            via_power = apply_chain(summed, NormalizeConfig(alpha_exponent=0.5))

            w = sinkhorn_weights(gram(emb), DemocraticConfig(gamma=0.5))
            dem = aggregate_democratic(emb, w)
            via_democratic = apply_chain(dem, NormalizeConfig(alpha_exponent=1.0))

            assert np.max(np.abs(via_power.xi - via_democratic.xi)) <= 1e-6
