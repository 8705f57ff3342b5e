"""Target-construction tests: similarity, row rescaling, ablation targets."""

import numpy as np
import pytest

from dcmq.errors import ParameterError, ShapeError
from dcmq.targets import (compute_similarity, npc, target_identity,
                          target_multihot)


def npc_row_oracle(row, diag_pos):
    """Straight transcription of the per-row rescale, element by element."""
    s_max, s_min = max(row), min(row)
    if s_max == s_min:
        out = [0.0] * len(row)
    else:
        a = 2.0 / (s_max - s_min)
        b = -(s_max + s_min) / (s_max - s_min)
        out = [a * s + b for s in row]
    out[diag_pos] = 1.0
    return np.array(out)


def assert_normalized_invariants(values):
    """Diagonal exactly 1, everything within [-1, 1] (1e-6 slack)."""
    assert np.array_equal(np.diag(values), np.ones(values.shape[0]))
    assert values.min() >= -1.0 - 1e-6
    assert values.max() <= 1.0 + 1e-6


class TestComputeSimilarity:
    def test_identity_rows(self):
        t = compute_similarity(np.eye(2), np.eye(2))
        assert not t.normalized
        np.testing.assert_allclose(t.values, np.eye(2))

    def test_orthogonal(self):
        t = compute_similarity([[1.0, 0.0]], [[0.0, 1.0]])
        np.testing.assert_allclose(t.values, [[0.0]])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(42)
        vi = rng.normal(size=(8, 16))
        vt = rng.normal(size=(8, 16))
        expected = np.zeros((8, 8))
        for i in range(8):
            for j in range(8):
                expected[i, j] = vi[i] @ vt[j] / (
                    np.linalg.norm(vi[i]) * np.linalg.norm(vt[j]))
        np.testing.assert_allclose(compute_similarity(vi, vt).values,
                                   expected, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            compute_similarity(np.ones((3, 4)), np.ones((2, 4)))
        with pytest.raises(ShapeError):
            compute_similarity(np.ones((3, 4)), np.ones((3, 5)))


class TestNpc:
    def test_endpoints_and_midpoint(self):
        """Row [0.05, 0.12, 0.19] maps to [-1, 0, 1] before the override."""
        values = np.array([
            [0.9, 0.1, 0.1],
            [0.1, 0.9, 0.1],
            [0.05, 0.12, 0.19],
        ])
        out = npc(values).values
        np.testing.assert_allclose(out[2], [-1.0, 0.0, 1.0], atol=1e-12)
        # ... and with the diagonal override at the midpoint position:
        values2 = np.array([
            [0.9, 0.1, 0.1],
            [0.1, 0.9, 0.1],
            [0.05, 0.12, 0.19],
        ])
        # move the interesting row to index 1 so its diagonal sits on 0.12
        values2[1] = [0.05, 0.12, 0.19]
        out2 = npc(values2).values
        np.testing.assert_allclose(out2[1], [-1.0, 1.0, 1.0], atol=1e-12)

    def test_degenerate_row_goes_neutral(self):
        values = np.array([
            [0.5, 0.1, 0.2],
            [0.3, 0.3, 0.3],
            [0.1, 0.2, 0.5],
        ])
        out = npc(values).values
        np.testing.assert_array_equal(out[1], [0.0, 1.0, 0.0])

    def test_row_extremes_map_to_pm_one(self):
        """Pre-override, each non-degenerate row spans exactly [-1, 1]."""
        rng = np.random.default_rng(0)
        values = rng.uniform(size=(64, 64))
        out = npc(values).values
        assert_normalized_invariants(out)
        for i in range(64):
            expected = npc_row_oracle(values[i].tolist(), i)
            np.testing.assert_allclose(out[i], expected, atol=1e-9)

    def test_affine_invariance(self):
        """Rescaling the input row-wise by a positive affine map is a no-op.

        This is the property that lets the transform undo a teacher whose
        scores bunch up in a narrow band.
        """
        rng = np.random.default_rng(1)
        values = rng.normal(size=(16, 16))
        squeezed = 0.07 * values + 0.12
        np.testing.assert_allclose(npc(values).values, npc(squeezed).values,
                                   atol=1e-9)

    def test_idempotent_when_diagonal_not_row_min(self):
        """Applying twice changes nothing, provided the override did not
        delete the row minimum (the map is then the identity)."""
        rng = np.random.default_rng(2)
        values = rng.normal(size=(32, 32))
        np.fill_diagonal(values, values.max() + 1.0)  # paired entry is max
        once = npc(values).values
        twice = npc(once).values
        np.testing.assert_allclose(once, twice, atol=1e-6)

    def test_argmax_argmin_preserved_off_diagonal(self):
        rng = np.random.default_rng(3)
        values = rng.normal(size=(20, 20))
        out = npc(values).values
        for i in range(20):
            if np.argmax(values[i]) != i and np.argmin(values[i]) != i:
                assert np.argmax(out[i]) in (np.argmax(values[i]), i)
                assert np.argmin(out[i]) == np.argmin(values[i])

    def test_non_square_rejected(self):
        with pytest.raises(ShapeError):
            npc(np.ones((3, 4)))


class TestTargetIdentity:
    def test_n_one(self):
        np.testing.assert_array_equal(target_identity(1).values, [[1.0]])

    def test_n_three(self):
        t = target_identity(3)
        assert t.normalized
        np.testing.assert_array_equal(t.values, np.eye(3))
        assert_normalized_invariants(t.values)

    def test_zero_rejected(self):
        with pytest.raises(ParameterError):
            target_identity(0)


class TestTargetMultihot:
    def test_identical_labels(self):
        t = target_multihot([[1, 0], [1, 0]])
        np.testing.assert_array_equal(t.values, [[1.0, 1.0], [1.0, 1.0]])

    def test_disjoint_labels(self):
        t = target_multihot([[1, 0], [0, 1]])
        np.testing.assert_array_equal(t.values, [[1.0, -1.0], [-1.0, 1.0]])

    def test_pairwise_intersection_oracle(self):
        labels = np.array([[1, 1, 0], [0, 1, 0], [0, 0, 1]])
        expected = np.ones((3, 3)) * -1.0
        for i in range(3):
            for j in range(3):
                if i == j or np.any(labels[i] & labels[j]):
                    expected[i, j] = 1.0
        out = target_multihot(labels)
        np.testing.assert_array_equal(out.values, expected)
        assert_normalized_invariants(out.values)

    def test_unlabeled_row_still_self_relevant(self):
        t = target_multihot([[0, 0], [1, 0]])
        np.testing.assert_array_equal(t.values, [[1.0, -1.0], [-1.0, 1.0]])

    def test_all_constructors_satisfy_invariants(self):
        rng = np.random.default_rng(4)
        sim = compute_similarity(rng.normal(size=(10, 8)),
                                 rng.normal(size=(10, 8)))
        assert_normalized_invariants(npc(sim).values)
        assert_normalized_invariants(target_identity(10).values)
        assert_normalized_invariants(
            target_multihot(rng.integers(0, 2, size=(10, 5))).values)
