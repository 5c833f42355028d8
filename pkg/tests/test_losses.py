"""Loss identities, periodicity, stability, and the gradient penalty."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fieldgan import losses as L
from fieldgan import tensor as T
from fieldgan.discriminator import Discriminator, DiscriminatorConfig


class TestLogSigmoid:
    def test_value_at_zero(self):
        assert L.f_log_sigmoid(np.array(0.0)).item() == pytest.approx(-np.log(2.0), abs=1e-12)

    def test_limit_and_monotonicity(self):
        us = np.linspace(-20, 20, 41)
        vals = L.f_log_sigmoid(us).data
        assert np.all(np.diff(vals) > 0)
        assert vals[-1] == pytest.approx(0.0, abs=1e-8)

    def test_no_overflow_far_out(self):
        val = L.f_log_sigmoid(np.array(50.0)).item()
        assert np.isfinite(val) and abs(val) < 1e-20
        assert np.isfinite(L.f_log_sigmoid(np.array(-1e6)).item())


class TestDiversityLoss:
    def test_identical_images(self, rng):
        img = rng.uniform(0, 1, (2, 8, 8, 3))
        assert L.diversity_loss(img, img).item() == 0.0

    def test_ones_vs_zeros(self):
        assert L.diversity_loss(np.ones((4, 4, 3)), np.zeros((4, 4, 3))).item() == 1.0

    def test_symmetric(self, rng):
        a, b = rng.uniform(0, 1, (5, 5, 3)), rng.uniform(0, 1, (5, 5, 3))
        assert L.diversity_loss(a, b).item() == pytest.approx(L.diversity_loss(b, a).item())

    def test_nonnegative(self, rng):
        a, b = rng.uniform(0, 1, (5, 5, 3)), rng.uniform(0, 1, (5, 5, 3))
        assert L.diversity_loss(a, b).item() >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            L.diversity_loss(np.zeros((4, 4, 3)), np.zeros((5, 5, 3)))


class TestPosePenalty:
    def test_equal_predictions(self):
        p = np.array([[1.0, 2.0]])
        assert L.pose_penalty_generator(p, p).item() == 0.0

    def test_pi_offset_both_components(self):
        p1 = np.array([[0.5, 1.0]])
        p2 = p1 + np.pi
        assert L.pose_penalty_generator(p1, p2).item() == pytest.approx(2.0, abs=1e-12)

    def test_two_pi_offset_is_free(self):
        p1 = np.array([[0.3, 2.1]])
        p2 = p1 + 2 * np.pi
        assert L.pose_penalty_generator(p1, p2).item() == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(-3, 3), st.integers(-3, 3),
           st.floats(-np.pi, np.pi), st.floats(0, np.pi))
    def test_two_pi_multiples_invariance(self, m1, m2, a, b):
        p1 = np.array([[a, b]])
        p2 = np.array([[a + 0.4, b - 0.2]])
        shifted = p2 + 2 * np.pi * np.array([[m1, m2]])
        base = L.pose_penalty_generator(p1, p2).item()
        moved = L.pose_penalty_generator(p1, shifted).item()
        assert moved == pytest.approx(base, abs=1e-9)


class TestPoseReconstruction:
    def test_exact_prediction(self):
        gt = np.array([[0.4, 1.5]])
        assert L.pose_reconstruction_discriminator(gt, gt).item() == 0.0

    def test_two_pi_residual_is_free(self):
        gt = np.array([[0.4, 1.5]])
        assert L.pose_reconstruction_discriminator(gt + 2 * np.pi, gt).item() == \
            pytest.approx(0.0, abs=1e-12)

    def test_gradient_through_sigmoid_head_matches_finite_differences(self, rng):
        raw = T.parameter(rng.normal(size=(3, 2)))
        gt = rng.uniform(0, np.pi, (3, 2))
        bounds = T.constant(np.array([2 * np.pi, np.pi]))

        def f():
            pred = T.mul(T.sigmoid(raw), bounds)
            return L.pose_reconstruction_discriminator(pred, gt)

        assert T.grad_check(f, [raw]) < 1e-5


class TestMatchingGradientPenalty:
    def test_constant_discriminator_gives_zero(self, rng):
        const = lambda img, e: T.broadcast_to(T.constant(np.array([[2.5]])), (img.shape[0], 1))
        pen = L.matching_gradient_penalty(const, rng.uniform(0, 1, (2, 4, 4, 3)),
                                          rng.normal(size=(2, 6)), k=2.0, p=6.0)
        assert pen.item() == pytest.approx(0.0, abs=1e-12)

    def test_sum_discriminator_closed_form(self, rng):
        h = w = 4
        d_sum = lambda img, e: T.reshape(T.tensor_sum(img, axis=(1, 2, 3)), (img.shape[0], 1))
        k, p = 2.0, 6.0
        pen = L.matching_gradient_penalty(d_sum, rng.uniform(0, 1, (3, h, w, 3)),
                                          rng.normal(size=(3, 5)), k=k, p=p)
        expected = k * np.sqrt(3.0 * h * w) ** p
        assert pen.item() == pytest.approx(expected, rel=1e-9)

    def test_nonnegative_for_a_real_discriminator(self, rng):
        cfg = DiscriminatorConfig(resolution=8, matching_dim=6, base_channels=4,
                                  max_channels=8, head_hidden=8)
        d = Discriminator(cfg, rng)
        d_fn = lambda img, e: d.match_logit(d.extract_features(img), e)
        pen = L.matching_gradient_penalty(d_fn, rng.uniform(0, 1, (2, 8, 8, 3)),
                                          rng.normal(size=(2, 6)), k=2.0, p=6.0)
        assert pen.item() >= 0.0

    def test_penalty_gradients_reach_discriminator_weights(self, rng):
        cfg = DiscriminatorConfig(resolution=8, matching_dim=6, base_channels=4,
                                  max_channels=8, head_hidden=8)
        d = Discriminator(cfg, rng)
        d_fn = lambda img, e: d.match_logit(d.extract_features(img), e)
        img = rng.uniform(0, 1, (2, 8, 8, 3))
        e = rng.normal(size=(2, 6))
        params = list(d.params.values())
        T.zero_grad(params)
        T.backward(L.matching_gradient_penalty(d_fn, img, e, k=2.0, p=6.0))
        grads = [p.grad for p in params if p.grad is not None]
        assert grads and any(np.abs(g).max() > 0 for g in grads)


class TestAdversarialLosses:
    def test_zero_logits_closed_form(self):
        zeros = np.zeros((4, 1))
        loss = L.adversarial_loss_discriminator(zeros, zeros, zeros, 0.0)
        assert loss.item() == pytest.approx(2.0 * np.log(2.0), abs=1e-9)

    def test_saturation_leaves_only_penalty(self):
        big = np.full((2, 1), 1e3)
        loss = L.adversarial_loss_discriminator(big, -big, -big, 7.5)
        assert loss.item() == pytest.approx(7.5, abs=1e-9)

    def test_generator_zero_logit(self):
        assert L.adversarial_loss_generator(np.zeros((3, 1))).item() == \
            pytest.approx(np.log(2.0), abs=1e-12)

    def test_generator_saturation(self):
        assert L.adversarial_loss_generator(np.full((1, 1), 1e3)).item() == \
            pytest.approx(0.0, abs=1e-12)

    def test_generator_strictly_decreasing(self):
        logits = np.linspace(-5, 5, 21)[:, None]
        vals = [L.adversarial_loss_generator(l[None]).item() for l in logits]
        assert np.all(np.diff(vals) < 0)

    def test_finite_over_extreme_logits(self):
        for v in (-1e6, -10.0, 0.0, 10.0, 1e6):
            arr = np.full((2, 1), v)
            assert np.isfinite(L.adversarial_loss_discriminator(arr, arr, arr, 0.0).item())
            assert np.isfinite(L.adversarial_loss_generator(arr).item())


class TestTotalGeneratorLoss:
    def test_degenerate_weights(self):
        w = L.LossWeights(lambda_div=0.0, lambda_pose=0.0)
        total = L.total_generator_loss(np.array(0.7), np.array(0.3), np.array(0.2), w)
        assert total.item() == pytest.approx(0.7)

    def test_diversity_decreases_total(self):
        w = L.LossWeights(lambda_div=1.0, lambda_pose=1.0)
        lo = L.total_generator_loss(np.array(0.5), np.array(0.1), np.array(0.0), w).item()
        hi = L.total_generator_loss(np.array(0.5), np.array(0.4), np.array(0.0), w).item()
        assert hi < lo

    def test_arithmetic(self):
        w = L.LossWeights(lambda_div=1.0, lambda_pose=1.0)
        total = L.total_generator_loss(np.array(0.7), np.array(0.2), np.array(0.1), w)
        assert total.item() == pytest.approx(0.6, abs=1e-12)

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            L.LossWeights(lambda_div=-0.1)
        with pytest.raises(ValueError):
            L.LossWeights(penalty_p=0.5)
