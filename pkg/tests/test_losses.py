import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from drnet.errors import ConfigurationError
from drnet.losses import (LossWeights, clamp_probability, discriminator_loss,
                          pose_adversarial_loss, reconstruction_loss,
                          similarity_loss, total_model_loss)

probs = st.floats(min_value=1e-6, max_value=1.0 - 1e-6)


class TestReconstructionLoss:
    def test_identity_is_zero(self):
        x = torch.rand(2, 3, 8, 8)
        assert float(reconstruction_loss(x, x)) == 0.0

    def test_constant_half_difference(self):
        a = torch.full((2, 3, 8, 8), 0.75)
        b = torch.full((2, 3, 8, 8), 0.25)
        assert float(reconstruction_loss(a, b)) == pytest.approx(0.25, abs=1e-9)

    def test_matches_bruteforce_on_2x2(self):
        rng = np.random.default_rng(0)
        a = rng.random((1, 1, 2, 2)).astype(np.float64)
        b = rng.random((1, 1, 2, 2)).astype(np.float64)
        expected = 0.0
        for i in range(2):
            for j in range(2):
                expected += (a[0, 0, i, j] - b[0, 0, i, j]) ** 2
        expected /= 4.0
        got = float(reconstruction_loss(torch.from_numpy(a), torch.from_numpy(b)))
        assert got == pytest.approx(expected, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            reconstruction_loss(torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 9))


class TestSimilarityLoss:
    def test_identical_is_zero(self):
        u = torch.randn(4, 8)
        assert float(similarity_loss(u, u)) == 0.0

    def test_antipodal_unit_vectors(self):
        u = torch.randn(3, 8, dtype=torch.float64)
        u = u / u.norm(dim=1, keepdim=True)
        assert float(similarity_loss(u, -u)) == pytest.approx(4.0, rel=1e-12)

    def test_unit_pair_identity(self):
        rng = np.random.default_rng(1)
        u = rng.standard_normal(16)
        v = rng.standard_normal(16)
        u /= np.linalg.norm(u)
        v /= np.linalg.norm(v)
        expected = 2.0 - 2.0 * float(np.dot(u, v))
        got = float(similarity_loss(torch.from_numpy(u[None]), torch.from_numpy(v[None])))
        assert got == pytest.approx(expected, rel=1e-10)

    def test_dim_mismatch(self):
        with pytest.raises(ConfigurationError):
            similarity_loss(torch.randn(2, 4), torch.randn(2, 5))


class TestDiscriminatorLoss:
    def test_uninformative_is_two_log_two(self):
        p = torch.tensor([0.5], dtype=torch.float64)
        assert float(discriminator_loss(p, p)) == pytest.approx(2.0 * math.log(2.0),
                                                                abs=1e-9)

    def test_perfect_classification_tends_to_zero(self):
        p_same = torch.tensor([1.0 - 1e-7])
        p_diff = torch.tensor([1e-7])
        assert float(discriminator_loss(p_same, p_diff)) < 1e-6

    def test_hand_computed_value(self):
        got = float(discriminator_loss(torch.tensor([0.9]), torch.tensor([0.2])))
        assert got == pytest.approx(-(math.log(0.9) + math.log(0.8)), abs=1e-6)

    @given(p=probs, q=probs, delta=st.floats(min_value=1e-4, max_value=0.5))
    @settings(max_examples=60, deadline=None)
    def test_monotone(self, p, q, delta):
        base = float(discriminator_loss(torch.tensor([p]), torch.tensor([q])))
        if p + delta < 1.0 - 1e-6:
            higher_same = float(discriminator_loss(torch.tensor([p + delta]),
                                                   torch.tensor([q])))
            assert higher_same < base
        if q + delta < 1.0 - 1e-6:
            higher_diff = float(discriminator_loss(torch.tensor([p]),
                                                   torch.tensor([q + delta])))
            assert higher_diff > base


class TestPoseAdversarialLoss:
    def test_half_attains_log_two(self):
        got = float(pose_adversarial_loss(torch.tensor([0.5], dtype=torch.float64)))
        assert got == pytest.approx(math.log(2.0), abs=1e-9)

    def test_hand_computed_value(self):
        got = float(pose_adversarial_loss(torch.tensor([0.9], dtype=torch.float64)))
        expected = -(0.5 * math.log(0.9) + 0.5 * math.log(0.1))
        assert got == pytest.approx(expected, abs=1e-9)

    @given(p=probs)
    @settings(max_examples=80, deadline=None)
    def test_symmetry_and_minimum(self, p):
        t = torch.tensor([p], dtype=torch.float64)
        loss_p = float(pose_adversarial_loss(t))
        loss_q = float(pose_adversarial_loss(1.0 - t))
        assert loss_p == pytest.approx(loss_q, rel=1e-9, abs=1e-12)
        assert loss_p >= math.log(2.0) - 1e-12
        if abs(p - 0.5) > 1e-4:
            assert loss_p > math.log(2.0)


class TestTotalLoss:
    def test_arithmetic(self):
        got = total_model_loss(1.0, 2.0, 3.0, LossWeights(alpha=1.0, beta=0.1))
        assert float(got) == pytest.approx(3.3, rel=1e-12)

    def test_beta_zero_removes_term(self):
        w = LossWeights(alpha=1.0, beta=0.0)
        assert float(total_model_loss(1.0, 2.0, 123.0, w)) == pytest.approx(3.0)

    def test_all_zero_weights(self):
        w = LossWeights(alpha=0.0, beta=0.0)
        assert float(total_model_loss(1.5, 9.0, 9.0, w)) == pytest.approx(1.5)

    def test_nonfinite_rejected(self):
        with pytest.raises(ConfigurationError):
            total_model_loss(float("nan"), 0.0, 0.0, LossWeights())
        with pytest.raises(ConfigurationError):
            total_model_loss(torch.tensor(float("inf")), 0.0, 0.0, LossWeights())

    def test_negative_weights_rejected(self):
        with pytest.raises(ConfigurationError):
            LossWeights(alpha=-1.0)


class TestNonNegativity:
    @given(p=probs, q=probs)
    @settings(max_examples=60, deadline=None)
    def test_all_terms_nonnegative(self, p, q):
        ps = torch.tensor([p])
        qs = torch.tensor([q])
        assert float(discriminator_loss(ps, qs)) >= 0.0
        assert float(pose_adversarial_loss(ps)) >= 0.0
        a = torch.rand(2, 3, 4, 4)
        b = torch.rand(2, 3, 4, 4)
        assert float(reconstruction_loss(a, b)) >= 0.0
        assert float(similarity_loss(a.flatten(1), b.flatten(1))) >= 0.0


class TestGradients:
    def test_losses_match_finite_differences(self):
        # direct-input gradients, central differences in float64
        torch.manual_seed(0)
        h = 1e-6

        def check(fn, *tensors, rtol=1e-4):
            leaves = [t.clone().requires_grad_(True) for t in tensors]
            fn(*leaves).backward()
            for leaf in leaves:
                flat = leaf.detach().view(-1)
                grad = leaf.grad.view(-1)
                for i in range(flat.numel()):
                    orig = flat[i].item()
                    flat[i] = orig + h
                    up = float(fn(*[l.detach() for l in leaves]))
                    flat[i] = orig - h
                    down = float(fn(*[l.detach() for l in leaves]))
                    flat[i] = orig
                    fd = (up - down) / (2 * h)
                    denom = max(abs(fd), abs(float(grad[i])), 1e-8)
                    assert abs(fd - float(grad[i])) / denom <= rtol

        check(reconstruction_loss,
              torch.rand(1, 2, 3, 3, dtype=torch.float64),
              torch.rand(1, 2, 3, 3, dtype=torch.float64))
        check(similarity_loss,
              torch.rand(2, 4, dtype=torch.float64),
              torch.rand(2, 4, dtype=torch.float64))
        check(discriminator_loss,
              torch.rand(3, dtype=torch.float64) * 0.8 + 0.1,
              torch.rand(3, dtype=torch.float64) * 0.8 + 0.1)
        check(pose_adversarial_loss,
              torch.rand(3, dtype=torch.float64) * 0.8 + 0.1)


def test_clamp_probability_range():
    p = torch.tensor([0.0, 0.5, 1.0])
    clamped = clamp_probability(p)
    assert clamped.min() > 0.0
    assert clamped.max() < 1.0
    assert float(clamped[1]) == 0.5
