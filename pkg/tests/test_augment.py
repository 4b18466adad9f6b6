"""Weak/strong augmentation behavior and the strong-dominance property."""

import numpy as np
import pytest

from fixclr import AugmentationPolicy, ConfigurationError, strong_augment, weak_augment


def policies(**kw):
    weak = AugmentationPolicy("weak", **kw)
    return weak, weak.as_kind("strong")


class TestWeakAugment:
    def test_zero_noise_is_identity(self):
        weak, _ = policies(noise_std_weak=0.0, noise_std_strong=0.5)
        x = np.random.default_rng(0).standard_normal(8)
        np.testing.assert_array_equal(weak_augment(x, weak, np.random.default_rng(1)), x)

    def test_fixed_seed_reproduces_output(self):
        weak, _ = policies()
        x = np.random.default_rng(0).standard_normal((4, 8))
        a = weak_augment(x, weak, np.random.default_rng(42))
        b = weak_augment(x, weak, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_noise_std_matches_monte_carlo(self):
        # Empirical std over 1e4 draws must be within 5% of the policy value.
        weak, _ = policies(noise_std_weak=0.1)
        x = np.zeros((10_000, 8))
        out = weak_augment(x, weak, np.random.default_rng(3))
        assert np.std(out - x) == pytest.approx(0.1, rel=0.05)

    def test_shape_preserved(self):
        weak, _ = policies()
        for shape in [(8,), (5, 8), (2, 3, 8)]:
            x = np.zeros(shape)
            assert weak_augment(x, weak, np.random.default_rng(0)).shape == shape

    def test_wrong_kind_rejected(self):
        _, strong = policies()
        with pytest.raises(ConfigurationError):
            weak_augment(np.zeros(8), strong, np.random.default_rng(0))


class TestStrongAugment:
    def test_mask_zeroes_exact_coordinate_count(self):
        # 0.25 of 8 coordinates -> exactly 2 zeroed
        _, strong = policies(noise_std_weak=0.0, noise_std_strong=0.0,
                             mask_fraction_strong=0.25)
        x = np.ones((100, 8))
        out = strong_augment(x, strong, np.random.default_rng(0))
        zeroed = (out == 0).sum(axis=1)
        assert np.all(zeroed == 2)

    def test_no_noise_no_mask_is_identity(self):
        _, strong = policies(noise_std_weak=0.0, noise_std_strong=0.0,
                             mask_fraction_strong=0.0)
        x = np.random.default_rng(0).standard_normal((4, 8))
        np.testing.assert_array_equal(strong_augment(x, strong, np.random.default_rng(1)), x)

    def test_noise_std_matches_monte_carlo(self):
        _, strong = policies(noise_std_weak=0.1, noise_std_strong=0.4,
                             mask_fraction_strong=0.0)
        x = np.zeros((10_000, 8))
        out = strong_augment(x, strong, np.random.default_rng(5))
        assert np.std(out - x) == pytest.approx(0.4, rel=0.05)

    def test_strong_dominates_weak_in_expected_squared_perturbation(self):
        weak, strong = policies(noise_std_weak=0.1, noise_std_strong=0.3,
                                mask_fraction_strong=0.25)
        x = np.random.default_rng(0).standard_normal((2_000, 8))
        rng = np.random.default_rng(1)
        weak_mse = np.mean((weak_augment(x, weak, rng) - x) ** 2)
        strong_mse = np.mean((strong_augment(x, strong, rng) - x) ** 2)
        assert strong_mse >= weak_mse

    def test_policy_invariants_enforced(self):
        with pytest.raises(ConfigurationError):
            AugmentationPolicy("weak", noise_std_weak=0.5, noise_std_strong=0.1)
        with pytest.raises(ConfigurationError):
            AugmentationPolicy("strong", mask_fraction_strong=1.0)
        with pytest.raises(ConfigurationError):
            AugmentationPolicy("medium")
