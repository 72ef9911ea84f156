"""
Tests for the mixing operators and the Remix label-factor rule
"""

import unittest
import sys
import os
from types import SimpleNamespace

import numpy as np

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from utils.data import LabeledSample, make_two_moons
from utils.mixing import (
    ClassCounts, CutMask, MixFactor, MixMethod, SoftLabel, apply_cut_mask, form_pairs, image_dims,
    is_kappa_majority, make_mixed_batch, mix_features, mix_labels, mix_pairs, remix_label_factor,
    remix_label_factors, sample_cut_mask, sample_lambda, soft_targets,
)
from utils.validators import ClassIndexError, DimensionError, ParameterError


def _plan(alpha=1.0, tau=0.5, kappa=3.0, per_pair_lambda=False):
    return SimpleNamespace(alpha=alpha, tau=tau, kappa=kappa, per_pair_lambda=per_pair_lambda)


def _brute_force_factor(lam, n_i, n_j, tau, kappa):
    """Piecewise label factor written with integer count comparisons"""
    out = lam.copy()
    first = (n_i >= kappa * n_j) & (lam < tau)
    second = ~first & (n_j >= kappa * n_i) & ((1.0 - lam) < tau)
    out[first] = 0.0
    out[second] = 1.0
    return out


class TestLambdaSampling(unittest.TestCase):
    """Beta(alpha, alpha) draws"""

    def test_uniform_mean(self):
        """alpha=1 draws average 0.5"""
        draws = sample_lambda(1.0, np.random.default_rng(0), size=100000)
        self.assertAlmostEqual(float(draws.mean()), 0.5, delta=0.01)

    def test_symmetric_mean_small_alpha(self):
        """alpha=0.4 draws average 0.5 and stay in [0, 1]"""
        draws = sample_lambda(0.4, np.random.default_rng(1), size=100000)
        self.assertAlmostEqual(float(draws.mean()), 0.5, delta=0.01)
        self.assertTrue(np.all((draws >= 0.0) & (draws <= 1.0)))

    def test_seeded_draws_repeat(self):
        """Same seed, same draws"""
        a = sample_lambda(0.5, np.random.default_rng(42), size=50)
        b = sample_lambda(0.5, np.random.default_rng(42), size=50)
        np.testing.assert_array_equal(a, b)

    def test_nonpositive_alpha_rejected(self):
        """alpha must be positive"""
        with self.assertRaises(ParameterError):
            sample_lambda(0.0, np.random.default_rng(0))


class TestFeatureAndLabelMixing(unittest.TestCase):
    """Convex combinations of features and one-hot labels"""

    def setUp(self):
        rng = np.random.default_rng(7)
        self.x_i = rng.normal(size=(4, 3))
        self.x_j = rng.normal(size=(4, 3))

    def test_endpoints(self):
        """lambda 1 and 0 return the first and second input"""
        np.testing.assert_array_equal(mix_features(self.x_i, self.x_j, 1.0), self.x_i)
        np.testing.assert_array_equal(mix_features(self.x_i, self.x_j, 0.0), self.x_j)

    def test_midpoint(self):
        """lambda 0.5 averages the inputs"""
        mixed = mix_features(np.array([2.0, 0.0]), np.array([0.0, 2.0]), 0.5)
        np.testing.assert_allclose(mixed, [1.0, 1.0])

    def test_per_row_lambda(self):
        """One lambda per leading row mixes each row separately"""
        lam = np.array([1.0, 0.0, 0.5, 0.25])
        mixed = mix_features(self.x_i, self.x_j, lam)
        np.testing.assert_array_equal(mixed[0], self.x_i[0])
        np.testing.assert_array_equal(mixed[1], self.x_j[1])
        np.testing.assert_allclose(mixed[3], 0.25 * self.x_i[3] + 0.75 * self.x_j[3])

    def test_identical_inputs_unchanged(self):
        """Mixing a point with itself returns it exactly"""
        mixed = mix_features(self.x_i, self.x_i.copy(), 0.37)
        np.testing.assert_array_equal(mixed, self.x_i)

    def test_shape_mismatch(self):
        """Inputs of different shapes are rejected"""
        with self.assertRaises(DimensionError):
            mix_features(self.x_i, self.x_j[:, :2], 0.5)

    def test_label_endpoint(self):
        """lambda_y 1 gives the one-hot of the first label"""
        label = mix_labels(0, 1, 0.0, 2)
        np.testing.assert_array_equal(label.probs, [0.0, 1.0])

    def test_label_substitution(self):
        """Mixed labels split the mass by lambda_y"""
        label = mix_labels(0, 1, 0.7, 3)
        np.testing.assert_allclose(label.probs, [0.7, 0.3, 0.0])
        self.assertEqual(label.num_classes, 3)

    def test_same_class_collapses(self):
        """Same-class pairs stay one-hot"""
        for lam in (0.0, 0.3, 1.0):
            np.testing.assert_array_equal(mix_labels(2, 2, lam, 3).probs, [0.0, 0.0, 1.0])

    def test_label_index_out_of_range(self):
        """Class indices outside [0, C) are rejected"""
        with self.assertRaises(ClassIndexError):
            mix_labels(0, 3, 0.5, 3)

    def test_soft_targets_rows_sum_to_one(self):
        """Every batch target row is a probability vector"""
        rng = np.random.default_rng(3)
        y_i = rng.integers(0, 5, size=200)
        y_j = rng.integers(0, 5, size=200)
        targets = soft_targets(y_i, y_j, rng.random(200), 5)
        np.testing.assert_allclose(targets.sum(axis=1), 1.0, atol=1e-12)
        self.assertTrue(np.all(targets >= 0.0))

    def test_soft_label_validation(self):
        """Negative or unnormalized vectors are not SoftLabels"""
        with self.assertRaises(ParameterError):
            SoftLabel(np.array([0.6, 0.6]))
        with self.assertRaises(ParameterError):
            SoftLabel(np.array([1.5, -0.5]))


class TestRemixLabelFactor(unittest.TestCase):
    """kappa-majority test and the piecewise label factor"""

    def test_kappa_majority_boundary(self):
        """n_i = kappa * n_j counts as kappa-majority"""
        self.assertTrue(is_kappa_majority(300, 100, 3))
        self.assertFalse(is_kappa_majority(299, 100, 3))
        self.assertFalse(is_kappa_majority(100, 100, 3))

    def test_branches(self):
        """Minority-favoring branches and the pass-through case"""
        self.assertEqual(remix_label_factor(0.3, 5000, 50, 0.5, 3), 0.0)
        self.assertEqual(remix_label_factor(0.8, 50, 5000, 0.5, 3), 1.0)
        self.assertEqual(remix_label_factor(0.6, 5000, 50, 0.5, 3), 0.6)

    def test_tau_zero_returns_lambda(self):
        """tau=0 always returns lambda_x"""
        rng = np.random.default_rng(11)
        for lam in rng.random(100):
            self.assertEqual(remix_label_factor(float(lam), 5000, 1, 0.0, 3), float(lam))
            self.assertEqual(remix_label_factor(float(lam), 1, 5000, 0.0, 3), float(lam))

    def test_zero_counts_rejected(self):
        """Class counts must be at least 1"""
        with self.assertRaises(ParameterError):
            remix_label_factor(0.5, 0, 10, 0.5, 3)

    def test_swap_symmetry(self):
        """Swapping the pair and replacing lambda with 1 - lambda keeps features and labels"""
        rng = np.random.default_rng(77)
        x_i, x_j = rng.normal(size=(2, 5))
        # dyadic lambdas and taus keep 1 - (1 - lambda) exact
        lams = np.arange(1025) / 1024.0
        for tau in (0.25, 0.5, 0.75, 1.0):
            for kappa in (1.5, 3.0, 10.0):
                n_i = rng.integers(1, 1001, size=lams.size)
                n_j = np.where(rng.random(lams.size) < 0.2, n_i, rng.integers(1, 1001, size=lams.size))
                forward = remix_label_factors(lams, n_i, n_j, tau, kappa)
                swapped = remix_label_factors(1.0 - lams, n_j, n_i, tau, kappa)
                np.testing.assert_array_equal(
                    soft_targets(np.zeros(lams.size), np.ones(lams.size), forward, 2),
                    soft_targets(np.ones(lams.size), np.zeros(lams.size), swapped, 2),
                )
        for lam in (0.125, 0.5, 0.875):
            np.testing.assert_allclose(mix_features(x_i, x_j, lam), mix_features(x_j, x_i, 1.0 - lam))

    def test_kappa_one_equal_counts_takes_first_branch(self):
        """With kappa=1 and equal counts both branches qualify; the first one is taken"""
        self.assertEqual(remix_label_factor(0.25, 992, 992, 1.0, 1.0), 0.0)
        self.assertEqual(remix_label_factor(0.75, 992, 992, 1.0, 1.0), 0.0)

    def test_matches_brute_force(self):
        """Scalar and vector rules agree with a direct piecewise evaluation"""
        rng = np.random.default_rng(2024)
        grid = [(tau, kappa) for tau in (0.0, 0.25, 0.5, 1.0) for kappa in (1.0, 3.0, 10.0)]
        per_cell = 1000000 // len(grid) + 1
        mismatches = 0
        for tau, kappa in grid:
            lam = rng.random(per_cell)
            n_i = rng.integers(1, 1001, size=per_cell)
            n_j = rng.integers(1, 1001, size=per_cell)
            expected = _brute_force_factor(lam, n_i, n_j, tau, kappa)
            mismatches += int(np.sum(remix_label_factors(lam, n_i, n_j, tau, kappa) != expected))
            for k in range(200):
                scalar = remix_label_factor(float(lam[k]), int(n_i[k]), int(n_j[k]), tau, kappa)
                mismatches += int(scalar != expected[k])
        self.assertEqual(mismatches, 0)


class TestCutMask(unittest.TestCase):
    """Rectangular patch sampling and pasting"""

    def test_lambda_one_is_empty(self):
        """lambda 1 gives an empty patch"""
        mask = sample_cut_mask(32, 32, 1.0, np.random.default_rng(0))
        self.assertEqual(mask.area_fraction, 0.0)
        self.assertEqual(mask.effective_lambda, 1.0)

    def test_lambda_zero_covers_image(self):
        """lambda 0 covers the whole image"""
        mask = sample_cut_mask(32, 32, 0.0, np.random.default_rng(0))
        self.assertEqual((mask.x0, mask.y0, mask.width, mask.height), (0, 0, 32, 32))
        self.assertEqual(mask.effective_lambda, 0.0)

    def test_area_law(self):
        """Mean patch area tracks 1 - lambda before clipping"""
        rng = np.random.default_rng(5)
        unclipped = 0
        for _ in range(10000):
            mask = sample_cut_mask(32, 32, 0.75, rng)
            kept = mask.as_array()
            self.assertEqual(mask.effective_lambda, float(kept.sum()) / 1024.0)
            if not mask.clipped:
                unclipped += 1
                self.assertEqual(mask.area_fraction, 0.25)
        self.assertGreater(unclipped, 0)

    def test_apply_endpoints(self):
        """Empty and full masks return the first and second image"""
        rng = np.random.default_rng(1)
        a = rng.normal(size=(3, 4, 4))
        b = rng.normal(size=(3, 4, 4))
        empty = CutMask(1, 1, 0, 0, 4, 4)
        full = CutMask(0, 0, 4, 4, 4, 4)
        np.testing.assert_array_equal(apply_cut_mask(a, b, empty), a)
        np.testing.assert_array_equal(apply_cut_mask(a, b, full), b)

    def test_left_column(self):
        """A left-column mask takes column 0 from the second image"""
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[10.0, 20.0], [30.0, 40.0]])
        out = apply_cut_mask(a, b, CutMask(0, 0, 1, 2, 2, 2))
        np.testing.assert_array_equal(out, [[10.0, 2.0], [30.0, 4.0]])

    def test_mask_shape_mismatch(self):
        """Images must match the mask size"""
        with self.assertRaises(DimensionError):
            apply_cut_mask(np.zeros((3, 3)), np.zeros((3, 3)), CutMask(0, 0, 1, 1, 2, 2))

    def test_vector_is_single_row_image(self):
        """A length-d vector is treated as a 1 x d image"""
        self.assertEqual(image_dims((2,)), (1, 2))
        self.assertEqual(image_dims((3, 32, 32)), (32, 32))


class TestMakeMixedBatch(unittest.TestCase):
    """Batch-level mixing for every method"""

    def setUp(self):
        rng = np.random.default_rng(9)
        self.x_i = rng.normal(size=(16, 2))
        self.x_j = rng.normal(size=(16, 2))
        self.y_i = np.array([0] * 8 + [1] * 8)
        self.y_j = np.array([1] * 8 + [0] * 8)
        self.counts = ClassCounts((500, 50))

    def test_mixup_couples_factors(self):
        """Mixup labels with lambda_y equal to lambda_x"""
        batch = make_mixed_batch(self.x_i, self.y_i, self.x_j, self.y_j, MixMethod.MIXUP, self.counts,
                                 _plan(), np.random.default_rng(0))
        np.testing.assert_array_equal(batch.lambda_x, batch.lambda_y)
        self.assertEqual(len(batch), 16)
        self.assertFalse(batch.is_manifold)

    def test_remix_tau_zero_matches_mixup(self):
        """Remix with tau=0 gives the mixup batch for the same seed"""
        mixup = make_mixed_batch(self.x_i, self.y_i, self.x_j, self.y_j, 'mixup', self.counts,
                                 _plan(tau=0.0), np.random.default_rng(3))
        remix = make_mixed_batch(self.x_i, self.y_i, self.x_j, self.y_j, 'remix', self.counts,
                                 _plan(tau=0.0), np.random.default_rng(3))
        np.testing.assert_array_equal(mixup.inputs, remix.inputs)
        np.testing.assert_array_equal(mixup.targets, remix.targets)

    def test_remix_labels_minority(self):
        """A small lambda toward the majority labels the minority class"""
        # find a seed whose single draw lands below tau
        for seed in range(100):
            rng = np.random.default_rng(seed)
            if np.random.default_rng(seed).beta(1.0, 1.0) < 0.5:
                break
        counts = ClassCounts((5000, 50))
        batch = make_mixed_batch(self.x_i[:1], np.array([0]), self.x_j[:1], np.array([1]), 'remix', counts,
                                 _plan(), rng)
        self.assertLess(batch.lambda_x[0], 0.5)
        np.testing.assert_array_equal(batch.targets[0], [0.0, 1.0])

    def test_per_pair_lambda(self):
        """Per-pair mode draws several lambdas per batch"""
        batch = make_mixed_batch(self.x_i, self.y_i, self.x_j, self.y_j, 'mixup', self.counts,
                                 _plan(per_pair_lambda=True), np.random.default_rng(0))
        self.assertGreater(len(set(batch.lambda_x.tolist())), 1)

    def test_cutmix_uses_effective_lambda(self):
        """CutMix labels use the clipped patch area"""
        rng = np.random.default_rng(2)
        images_i = rng.normal(size=(4, 3, 8, 8))
        images_j = rng.normal(size=(4, 3, 8, 8))
        batch = make_mixed_batch(images_i, np.array([0, 1, 0, 1]), images_j, np.array([1, 0, 1, 0]),
                                 'cutmix', self.counts, _plan(), rng)
        self.assertEqual(len(batch.masks), 1)
        np.testing.assert_array_equal(batch.lambda_x, batch.masks[0].effective_lambda)
        np.testing.assert_array_equal(batch.lambda_y, batch.lambda_x)
        self.assertEqual(batch.inputs.shape, images_i.shape)

    def test_manifold_returns_pairs_and_layer(self):
        """Manifold methods return the unmixed pairs and a layer"""
        batch = make_mixed_batch(self.x_i, self.y_i, self.x_j, self.y_j, 'remix_manifold', self.counts,
                                 _plan(), np.random.default_rng(0), eligible_layers=3)
        self.assertTrue(batch.is_manifold)
        self.assertIn(batch.layer, (0, 1, 2))
        np.testing.assert_array_equal(batch.inputs, self.x_i)
        np.testing.assert_array_equal(batch.partner_inputs, self.x_j)

    def test_erm_and_empty_batches_rejected(self):
        """ERM and empty batches are rejected"""
        with self.assertRaises(ParameterError):
            make_mixed_batch(self.x_i, self.y_i, self.x_j, self.y_j, 'erm', self.counts, _plan(),
                             np.random.default_rng(0))
        with self.assertRaises(ParameterError):
            make_mixed_batch(np.zeros((0, 2)), np.zeros(0, dtype=int), np.zeros((0, 2)), np.zeros(0, dtype=int),
                             'mixup', self.counts, _plan(), np.random.default_rng(0))

    def test_factors_and_soft_labels(self):
        """Each row yields a valid MixFactor and SoftLabel; an out-of-range factor is rejected"""
        batch = make_mixed_batch(self.x_i, self.y_i, self.x_j, self.y_j, 'remix', self.counts,
                                 _plan(), np.random.default_rng(4))
        factors = batch.factors()
        self.assertEqual(len(factors), 16)
        self.assertTrue(all(isinstance(f, MixFactor) for f in factors))
        for label, row in zip(batch.soft_labels(), batch.targets):
            np.testing.assert_array_equal(label.probs, row)
        batch.lambda_y = batch.lambda_y + 2.0
        with self.assertRaises(ParameterError):
            batch.factors()

    def test_labeled_sample_pairs(self):
        """Pairs of LabeledSample mix exactly like the aligned arrays"""
        samples = list(make_two_moons(8, 0.1, np.random.default_rng(6)))
        self.assertIsInstance(samples[0], LabeledSample)
        pairs = list(zip(samples[:8], samples[8:]))
        from_pairs = mix_pairs(pairs, 'remix', self.counts, _plan(), np.random.default_rng(5))
        x_i = np.stack([a.features for a, _ in pairs])
        x_j = np.stack([b.features for _, b in pairs])
        from_arrays = make_mixed_batch(x_i, np.zeros(8, dtype=int), x_j, np.ones(8, dtype=int), 'remix',
                                       self.counts, _plan(), np.random.default_rng(5))
        np.testing.assert_array_equal(from_pairs.inputs, from_arrays.inputs)
        np.testing.assert_array_equal(from_pairs.targets, from_arrays.targets)
        with self.assertRaises(ParameterError):
            mix_pairs([], 'mixup', self.counts, _plan(), np.random.default_rng(0))

    def test_pairs_are_a_permutation(self):
        """Partners form a permutation of the batch"""
        partner = form_pairs(32, np.random.default_rng(0))
        self.assertEqual(sorted(partner.tolist()), list(range(32)))

    def test_minority_classes(self):
        """Minority classes are those at the smallest count"""
        self.assertEqual(ClassCounts((500, 50, 50)).minority_classes(), [1, 2])
        self.assertEqual(ClassCounts((10, 10)).minority_classes(), [])
        with self.assertRaises(ParameterError):
            ClassCounts((10, 0))


if __name__ == '__main__':
    unittest.main()
