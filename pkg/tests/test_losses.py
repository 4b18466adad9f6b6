"""Contrastive regularizer: hand-computed values, oracle equivalence,
invariances, bounds, and gradient behavior."""

import math

import numpy as np
import pytest
import torch

from conftest import random_representation_batch
from fixclr import (ConfigurationError, FixCLRConfig, NumericError,
                    RepresentationBatch, cosine_similarity, fixclr_loss,
                    fixclr_loss_with_positives, fixclr_oracle, group_centroids,
                    loss_for_variant)
from fixclr.losses import repel_loss_from_similarities

REPEL = FixCLRConfig(temperature=0.5)
POSITIVES = FixCLRConfig(temperature=0.5, variant="with_positives")


def unit_batch(vectors, domains, classes, eligibility=None):
    return RepresentationBatch(np.asarray(vectors, dtype=np.float64),
                               domains, classes, eligibility)


class TestCosineSimilarity:
    def test_identical_orthogonal_antipodal(self):
        assert cosine_similarity([1, 0], [1, 0]) == 1.0
        assert cosine_similarity([1, 0], [0, 1]) == 0.0
        assert cosine_similarity([1, 0], [-1, 0]) == -1.0

    def test_scale_invariant(self):
        assert cosine_similarity([2, 0], [5, 0]) == 1.0

    def test_clamped_against_rounding(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            v = rng.standard_normal(4)
            assert -1.0 <= cosine_similarity(v, 3.7 * v) <= 1.0

    def test_zero_vector_rejected(self):
        with pytest.raises(ConfigurationError):
            cosine_similarity([0, 0], [1, 0])


class TestGroupCentroids:
    def test_duplicate_vectors_give_that_vector(self):
        batch = unit_batch([[1, 0], [1, 0]], [0, 0], [0, 0])
        groups = group_centroids(batch)
        np.testing.assert_allclose(groups.cls_centroids[0].numpy(), [1, 0])

    def test_complement_group_is_other_class(self):
        batch = unit_batch([[1, 0], [0, 1]], [0, 0], [0, 1])
        groups = group_centroids(batch)
        np.testing.assert_allclose(groups.dom_minus[(0, 0)].numpy(), [0, 1])
        np.testing.assert_allclose(groups.dom_minus[(0, 1)].numpy(), [1, 0])

    def test_antipodal_pair_is_degenerate_group(self):
        batch = unit_batch([[1, 0], [-1, 0], [0, 1]], [0, 0, 0], [0, 0, 1])
        groups = group_centroids(batch)
        # class-0 mean is exactly zero -> absent, not a zero vector
        assert 0 not in groups.cls_centroids
        assert (0, 1) not in groups.dom_minus  # complement of class 1 = class 0

    def test_ineligible_rows_excluded(self):
        batch = unit_batch([[1, 0], [0, 1], [0, 1]], [0, 0, 0], [0, 0, 1],
                           [True, False, True])
        groups = group_centroids(batch)
        np.testing.assert_allclose(groups.cls_centroids[0].numpy(), [1, 0])

    def test_centroids_are_unit_norm(self):
        rng = np.random.default_rng(1)
        batch = random_representation_batch(rng)
        groups = group_centroids(batch)
        for vec in list(groups.cls_centroids.values()) + list(groups.dom_minus.values()):
            assert float(torch.linalg.vector_norm(vec)) == pytest.approx(1.0, abs=1e-12)


class TestRepelOnlyHandValues:
    def test_identical_centroids_give_log2(self):
        batch = unit_batch([[1, 0], [1, 0]], [0, 0], [0, 1])
        result = fixclr_loss(batch, REPEL)
        assert result.item() == pytest.approx(math.log(2), abs=1e-12)
        assert not result.skipped

    def test_orthogonal_centroids_give_log2_minus_2(self):
        batch = unit_batch([[1, 0], [0, 1]], [0, 0], [0, 1])
        assert fixclr_loss(batch, REPEL).item() == pytest.approx(math.log(2) - 2,
                                                                 abs=1e-12)

    def test_antipodal_centroids_hit_lower_bound(self):
        # log c - 2/tau with c=2, tau=0.5
        batch = unit_batch([[1, 0], [-1, 0]], [0, 0], [0, 1])
        assert fixclr_loss(batch, REPEL).item() == pytest.approx(math.log(2) - 4,
                                                                 abs=1e-12)

    def test_terms_add_over_domains(self):
        one = unit_batch([[1, 0], [0, 1]], [0, 0], [0, 1])
        two = unit_batch([[1, 0], [0, 1], [1, 0], [0, 1]],
                         [0, 0, 1, 1], [0, 1, 0, 1])
        assert fixclr_loss(two, REPEL).item() == pytest.approx(
            2 * fixclr_loss(one, REPEL).item(), abs=1e-12)


class TestWithPositivesHandValues:
    def test_perfect_invariance_value(self):
        batch = unit_batch([[1, 0], [-1, 0]], [0, 0], [0, 1])
        expected = -math.log(math.exp(2) / (math.exp(2) + 2 * math.exp(-2)))
        assert fixclr_loss_with_positives(batch, POSITIVES).item() == \
            pytest.approx(expected, abs=1e-12)

    def test_common_similarity_cancels_to_log_1_plus_c(self):
        # p equal to every negative sim -> term = log(1 + c) whatever the value
        for common in (-0.7, 0.0, 0.9):
            p = torch.tensor(common, dtype=torch.float64)
            negs = torch.full((3,), common, dtype=torch.float64)
            from fixclr.losses import attract_repel_loss_from_similarities
            term = attract_repel_loss_from_similarities(p, negs, 0.5)
            assert float(term) == pytest.approx(math.log(4), abs=1e-12)

    def test_gradient_wrt_positive_similarity_is_negative(self):
        # attraction: increasing p must decrease the loss
        p = torch.tensor(0.2, dtype=torch.float64, requires_grad=True)
        negs = torch.tensor([0.1, -0.3], dtype=torch.float64)
        from fixclr.losses import attract_repel_loss_from_similarities
        attract_repel_loss_from_similarities(p, negs, 0.5).backward()
        assert float(p.grad) < 0
        # and matches finite differences
        with torch.no_grad():
            h = 1e-6
            up = attract_repel_loss_from_similarities(p + h, negs, 0.5)
            down = attract_repel_loss_from_similarities(p - h, negs, 0.5)
        fd = float((up - down) / (2 * h))
        assert float(p.grad) == pytest.approx(fd, rel=1e-6)


class TestSkippedAndErrors:
    def test_single_class_is_skipped_zero(self):
        batch = unit_batch([[1, 0], [0, 1]], [0, 1], [0, 0])
        for fn, cfg in ((fixclr_loss, REPEL),
                        (fixclr_loss_with_positives, POSITIVES)):
            result = fn(batch, cfg)
            assert result.item() == 0.0
            assert result.skipped

    def test_empty_eligibility_is_skipped_zero(self):
        batch = unit_batch([[1, 0], [0, 1]], [0, 0], [0, 1], [False, False])
        result = fixclr_loss(batch, REPEL)
        assert result.item() == 0.0 and result.skipped
        value, skipped = fixclr_oracle(batch, REPEL)
        assert value == 0.0 and skipped

    def test_fully_degenerate_batch_is_skipped(self):
        # both classes have antipodal members in every group
        batch = unit_batch([[1, 0], [-1, 0], [0, 1], [0, -1]],
                           [0, 0, 0, 0], [0, 0, 1, 1])
        result = fixclr_loss(batch, REPEL)
        assert result.item() == 0.0 and result.skipped

    def test_nan_vectors_rejected(self):
        vecs = np.array([[1.0, 0.0], [np.nan, 0.0]])
        with pytest.raises((NumericError, ConfigurationError)):
            batch = RepresentationBatch(vecs, [0, 0], [0, 1])
            fixclr_loss(batch, REPEL)

    def test_variant_mismatch_rejected(self):
        batch = unit_batch([[1, 0], [0, 1]], [0, 0], [0, 1])
        with pytest.raises(ConfigurationError):
            fixclr_loss(batch, POSITIVES)
        with pytest.raises(ConfigurationError):
            fixclr_loss_with_positives(batch, REPEL)

    def test_non_unit_vectors_rejected(self):
        with pytest.raises(ConfigurationError):
            RepresentationBatch(np.array([[2.0, 0.0], [0.0, 1.0]]), [0, 0], [0, 1])


class TestOracleEquivalence:
    @pytest.mark.parametrize("variant", ["repel_only", "with_positives"])
    @pytest.mark.parametrize("mode", ["centroid", "mean_pairwise"])
    def test_matches_oracle_on_random_batches(self, variant, mode):
        cfg = FixCLRConfig(temperature=0.5, variant=variant, similarity_mode=mode)
        rng = np.random.default_rng(hash((variant, mode)) % 2**32)
        for _ in range(100):
            batch = random_representation_batch(rng)
            result = loss_for_variant(batch, cfg)
            expected, skipped = fixclr_oracle(batch, cfg)
            assert result.skipped == skipped
            assert result.item() == pytest.approx(expected,
                                                  rel=1e-9, abs=1e-9)

    def test_oracle_reproduces_hand_values(self):
        batch = unit_batch([[1, 0], [0, 1]], [0, 0], [0, 1])
        value, skipped = fixclr_oracle(batch, REPEL)
        assert value == pytest.approx(math.log(2) - 2, abs=1e-12)
        assert not skipped

    def test_oracle_rejects_oversized_batches(self):
        vecs = np.ones((513, 2)) / math.sqrt(2)
        batch = RepresentationBatch(vecs, np.zeros(513, dtype=int),
                                    np.zeros(513, dtype=int))
        with pytest.raises(ConfigurationError):
            fixclr_oracle(batch, REPEL)


class TestInvariances:
    @pytest.mark.parametrize("variant", ["repel_only", "with_positives"])
    def test_sample_order_invariance(self, variant):
        cfg = FixCLRConfig(temperature=0.5, variant=variant)
        rng = np.random.default_rng(11)
        for _ in range(25):
            batch = random_representation_batch(rng)
            perm = rng.permutation(len(batch))
            shuffled = RepresentationBatch(batch.vectors[perm],
                                           batch.domain_ids[perm],
                                           batch.class_ids[perm],
                                           batch.eligibility[perm])
            a = loss_for_variant(batch, cfg)
            b = loss_for_variant(shuffled, cfg)
            assert a.item() == pytest.approx(b.item(), abs=1e-12)
            assert a.skipped == b.skipped

    @pytest.mark.parametrize("variant", ["repel_only", "with_positives"])
    def test_domain_relabel_invariance(self, variant):
        cfg = FixCLRConfig(temperature=0.5, variant=variant)
        rng = np.random.default_rng(12)
        for _ in range(25):
            batch = random_representation_batch(rng)
            d = batch.domain_ids.max() + 1
            relabel = rng.permutation(d)
            renamed = RepresentationBatch(batch.vectors,
                                          relabel[batch.domain_ids],
                                          batch.class_ids, batch.eligibility)
            assert loss_for_variant(batch, cfg).item() == pytest.approx(
                loss_for_variant(renamed, cfg).item(), abs=1e-12)

    @pytest.mark.parametrize("variant", ["repel_only", "with_positives"])
    def test_global_rotation_invariance(self, variant):
        cfg = FixCLRConfig(temperature=0.5, variant=variant)
        rng = np.random.default_rng(13)
        for _ in range(25):
            batch = random_representation_batch(rng)
            p = batch.vectors.shape[1]
            q, _ = np.linalg.qr(rng.standard_normal((p, p)))
            rotated = RepresentationBatch(batch.vectors.numpy() @ q.T,
                                          batch.domain_ids, batch.class_ids,
                                          batch.eligibility)
            assert loss_for_variant(batch, cfg).item() == pytest.approx(
                loss_for_variant(rotated, cfg).item(), abs=1e-9)


class TestBounds:
    def test_per_domain_term_within_log_c_bounds(self):
        # each domain term lies in [log c_i - 2/tau, log c_i]
        rng = np.random.default_rng(14)
        tau = 0.5
        for _ in range(200):
            batch = random_representation_batch(rng)
            from fixclr.losses import _group_similarities
            if batch.num_eligible_classes < 2:
                continue
            neg_sims, _ = _group_similarities(batch, REPEL)
            for sims in neg_sims.values():
                c_i = len(sims)
                term = float(torch.logsumexp(sims / tau, 0) - 1.0 / tau)
                assert math.log(c_i) - 2 / tau - 1e-12 <= term <= math.log(c_i) + 1e-12


class TestGradients:
    @pytest.mark.parametrize("variant", ["repel_only", "with_positives"])
    def test_loss_gradient_matches_finite_differences(self, variant):
        cfg = FixCLRConfig(temperature=0.5, variant=variant)
        rng = np.random.default_rng(15)
        checked = 0
        while checked < 5:
            base = random_representation_batch(rng, n_max=12, p=4)
            vectors = base.vectors.clone().requires_grad_(True)
            batch = RepresentationBatch(vectors, base.domain_ids,
                                        base.class_ids, base.eligibility)
            result = loss_for_variant(batch, cfg)
            if result.skipped:
                continue
            result.value.backward()
            grad = vectors.grad.numpy()

            # loss is restricted to unit inputs: project the FD direction
            # onto the tangent space by re-normalizing perturbed vectors
            h = 1e-6
            raw = base.vectors.numpy()
            for s in range(min(4, len(base))):
                for k in range(raw.shape[1]):
                    up, down = raw.copy(), raw.copy()
                    up[s, k] += h
                    down[s, k] -= h
                    up /= np.linalg.norm(up, axis=1, keepdims=True)
                    down /= np.linalg.norm(down, axis=1, keepdims=True)
                    f_up = loss_for_variant(
                        RepresentationBatch(up, base.domain_ids, base.class_ids,
                                            base.eligibility), cfg).item()
                    f_down = loss_for_variant(
                        RepresentationBatch(down, base.domain_ids, base.class_ids,
                                            base.eligibility), cfg).item()
                    fd = (f_up - f_down) / (2 * h)
                    # compare against the analytic gradient of the same
                    # normalize-then-loss composition
                    v = raw[s]
                    tangent = np.eye(raw.shape[1])[k] - v[k] * v
                    analytic = float(grad[s] @ tangent)
                    assert analytic == pytest.approx(fd, rel=1e-4, abs=1e-7)
            checked += 1

    def test_monotone_repulsion_gradient_sign(self):
        # decreasing one similarity strictly decreases the repel-only loss:
        # the gradient w.r.t. every similarity entry is strictly positive
        rng = np.random.default_rng(16)
        for _ in range(20):
            sims = {0: torch.tensor(rng.uniform(-1, 1, rng.integers(1, 6)),
                                    requires_grad=True)}
            loss = repel_loss_from_similarities(sims, 0.5)
            loss.backward()
            assert (sims[0].grad > 0).all()

    def test_gradients_reach_input_vectors(self):
        rng = np.random.default_rng(17)
        base = random_representation_batch(rng, n_max=16, p=4,
                                           eligibility_rate=1.0)
        vectors = base.vectors.clone().requires_grad_(True)
        batch = RepresentationBatch(vectors, base.domain_ids, base.class_ids)
        result = fixclr_loss(batch, REPEL)
        assert not result.skipped
        result.value.backward()
        assert vectors.grad is not None
        assert torch.isfinite(vectors.grad).all()


class TestLossWeightAndModes:
    def test_mean_pairwise_differs_from_centroid_in_general(self):
        rng = np.random.default_rng(18)
        diffs = []
        for _ in range(20):
            batch = random_representation_batch(rng)
            a = loss_for_variant(batch, REPEL)
            b = loss_for_variant(batch, FixCLRConfig(
                temperature=0.5, similarity_mode="mean_pairwise"))
            if not a.skipped:
                diffs.append(abs(a.item() - b.item()))
        assert max(diffs) > 1e-6

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            FixCLRConfig(temperature=0.0)
        with pytest.raises(ConfigurationError):
            FixCLRConfig(loss_weight=-1.0)
        with pytest.raises(ConfigurationError):
            FixCLRConfig(variant="nope")
        with pytest.raises(ConfigurationError):
            FixCLRConfig(similarity_mode="nope")
