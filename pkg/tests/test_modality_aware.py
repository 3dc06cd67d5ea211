"""
Tests for Modality-Aware fusion.
"""

import math

import numpy as np
from django.test import SimpleTestCase

from apps.core import functional as F
from apps.core.exceptions import SamplingError, ShapeError
from apps.core.rng import Rng
from apps.core.tensor import Tensor
from apps.modality_aware.models import DecisionMask, MaskPredictor, ModalityAwareFusion, PairAttention
from apps.modality_aware.services import (
    modality_aware_forward,
    pair_attention,
    predict_mask,
    prune,
    substitute_masked,
)
from apps.volumes.models import Modality


def direct_pair_attention(a, b, state):
    """Softmax(Q K^T / sqrt(d)) V and the feed-forward, one position at a time."""
    d = a.shape[-1]
    outputs = []
    for token_a, token_b in zip(a, b):
        z = np.stack([token_a, token_b])
        q, k, v = z @ state.query.data, z @ state.key.data, z @ state.value.data
        scores = q @ k.T / math.sqrt(d)
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights /= weights.sum(axis=1, keepdims=True)
        hidden = np.maximum(0.0, (weights @ v) @ state.ffn_in.weight.data + state.ffn_in.bias.data)
        outputs.append(hidden @ state.ffn_out.weight.data + state.ffn_out.bias.data)
    outputs = np.array(outputs)
    return outputs[:, 0], outputs[:, 1]


class PredictMaskTestCase(SimpleTestCase):
    """Token keep/prune prediction."""

    def setUp(self):
        self.predictor = MaskPredictor(6, Rng(0))

    def test_identical_tokens_get_identical_probabilities(self):
        feat = Tensor(np.tile(Rng(1).normal(6), (5, 1)))
        pi, mask = predict_mask(feat, self.predictor)
        np.testing.assert_allclose(pi.data, np.tile(pi.data[0], (5, 1)))
        self.assertTrue(mask.is_binary())

    def test_probabilities_are_normalized(self):
        pi, _ = predict_mask(Tensor(Rng(2).normal((7, 6))), self.predictor)
        self.assertEqual(pi.shape, (7, 2))
        np.testing.assert_allclose(pi.data.sum(axis=-1), np.ones(7), atol=1e-6)

    def test_global_feature_is_token_mean(self):
        feat = Tensor(Rng(3).normal((4, 6)))
        local = self.predictor.local_features(feat)
        pooled = self.predictor.global_features(local)
        np.testing.assert_allclose(pooled.data[0], local.data.mean(axis=0))

    def test_inference_mask_is_argmax(self):
        pi, mask = predict_mask(Tensor(Rng(4).normal((9, 6))), self.predictor)
        np.testing.assert_array_equal(mask.keep, pi.data[:, 0] >= pi.data[:, 1])

    def test_training_needs_rng(self):
        with self.assertRaises(SamplingError):
            predict_mask(Tensor(np.zeros((3, 6))), self.predictor, training=True)

    def test_no_tokens(self):
        with self.assertRaises(ShapeError):
            predict_mask(Tensor(np.zeros((0, 6))), self.predictor)

    def test_odd_width_rejected(self):
        with self.assertRaises(ShapeError):
            MaskPredictor(5, Rng(0))


class PruneAndSubstituteTestCase(SimpleTestCase):
    """Masking and partner substitution."""

    def setUp(self):
        rng = Rng(5)
        self.hA = Tensor(rng.normal((4, 3)))
        self.hB = Tensor(rng.normal((4, 3)))

    def test_prune(self):
        np.testing.assert_array_equal(prune(self.hA, DecisionMask.from_bits([1, 1, 1, 1])).data, self.hA.data)
        np.testing.assert_array_equal(prune(self.hA, DecisionMask.from_bits([0, 0, 0, 0])).data, np.zeros((4, 3)))
        with self.assertRaises(ShapeError):
            prune(self.hA, DecisionMask.from_bits([1, 0]))

    def test_all_kept_is_identity(self):
        keep = DecisionMask.from_bits([1, 1, 1, 1])
        fusedA, fusedB = substitute_masked(self.hA, self.hB, keep, keep)
        np.testing.assert_array_equal(fusedA.data, self.hA.data)
        np.testing.assert_array_equal(fusedB.data, self.hB.data)

    def test_pruned_tokens_take_partner(self):
        fusedA, fusedB = substitute_masked(
            self.hA, self.hB, DecisionMask.from_bits([0, 0, 0, 0]), DecisionMask.from_bits([1, 1, 1, 1])
        )
        np.testing.assert_array_equal(fusedA.data, self.hB.data)
        np.testing.assert_array_equal(fusedB.data, self.hB.data)

    def test_mixed_masks(self):
        maskA = DecisionMask.from_bits([1, 0, 0, 1])
        maskB = DecisionMask.from_bits([0, 1, 0, 1])
        fusedA, fusedB = substitute_masked(self.hA, self.hB, maskA, maskB)
        np.testing.assert_array_equal(fusedA.data[1], self.hB.data[1])
        np.testing.assert_array_equal(fusedA.data[2], self.hA.data[2])
        np.testing.assert_array_equal(fusedB.data[0], self.hA.data[0])
        np.testing.assert_array_equal(fusedB.data[3], self.hB.data[3])

    def test_random_masks_follow_case_analysis(self):
        rng = Rng(12)
        hA, hB = Tensor(rng.normal((40, 3))), Tensor(rng.normal((40, 3)))
        bitsA = rng.integers(0, 2, 40)
        bitsB = rng.integers(0, 2, 40)
        fusedA, fusedB = substitute_masked(hA, hB, DecisionMask.from_bits(bitsA), DecisionMask.from_bits(bitsB))
        for k in range(40):
            if bitsA[k] == 0 and bitsB[k] == 1:
                expected = hB.data[k], hB.data[k]
            elif bitsA[k] == 1 and bitsB[k] == 0:
                expected = hA.data[k], hA.data[k]
            else:
                expected = hA.data[k], hB.data[k]
            np.testing.assert_array_equal(fusedA.data[k], expected[0])
            np.testing.assert_array_equal(fusedB.data[k], expected[1])

    def test_length_mismatch(self):
        with self.assertRaises(ShapeError):
            substitute_masked(self.hA, self.hB, DecisionMask.from_bits([1, 1]), DecisionMask.from_bits([1, 1]))


class PairAttentionTestCase(SimpleTestCase):
    """Two-token attention at every position."""

    def setUp(self):
        self.state = PairAttention(4, Rng(6))

    def test_zero_positions_stay_zero(self):
        rng = Rng(7)
        featA, featB = rng.normal((5, 4)), rng.normal((5, 4))
        featA[2] = featB[2] = 0.0
        hA, hB = pair_attention(Tensor(featA), Tensor(featB), self.state)
        np.testing.assert_array_equal(hA.data[2], np.zeros(4))
        np.testing.assert_array_equal(hB.data[2], np.zeros(4))

    def test_positions_do_not_mix(self):
        rng = Rng(8)
        featA, featB = rng.normal((5, 4)), rng.normal((5, 4))
        before, _ = pair_attention(Tensor(featA), Tensor(featB), self.state)
        featA[0] += 1.0
        after, _ = pair_attention(Tensor(featA), Tensor(featB), self.state)
        self.assertFalse(np.allclose(before.data[0], after.data[0]))
        np.testing.assert_allclose(before.data[1:], after.data[1:], atol=1e-12)

    def test_matches_direct_evaluation(self):
        rng = Rng(13)
        featA, featB = rng.normal((6, 4)), rng.normal((6, 4))
        self.state.ffn_in.bias.data[...] = rng.normal(16, scale=0.1)
        self.state.ffn_out.bias.data[...] = rng.normal(4, scale=0.1)
        hA, hB = pair_attention(Tensor(featA), Tensor(featB), self.state)
        expectedA, expectedB = direct_pair_attention(featA, featB, self.state)
        np.testing.assert_allclose(hA.data, expectedA, atol=1e-8, rtol=0)
        np.testing.assert_allclose(hB.data, expectedB, atol=1e-8, rtol=0)

    def test_equal_tokens_attend_to_their_common_value(self):
        feat = Rng(14).normal((5, 4))
        hA, hB = pair_attention(Tensor(feat), Tensor(feat.copy()), self.state)
        value = feat @ self.state.value.data
        expected = np.maximum(0.0, value @ self.state.ffn_in.weight.data + self.state.ffn_in.bias.data)
        expected = expected @ self.state.ffn_out.weight.data + self.state.ffn_out.bias.data
        np.testing.assert_allclose(hA.data, expected, atol=1e-12, rtol=0)
        np.testing.assert_allclose(hB.data, hA.data, atol=1e-12, rtol=0)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            pair_attention(Tensor(np.zeros((5, 4))), Tensor(np.zeros((4, 4))), self.state)


class ModalityAwareForwardTestCase(SimpleTestCase):
    """Full layer fusion."""

    def setUp(self):
        self.fusion = ModalityAwareFusion(4, Rng(9))
        self.features = Rng(10).normal((4, 2, 2, 2, 4))

    def test_output_width(self):
        result = modality_aware_forward(Tensor(self.features), self.fusion)
        self.assertEqual(result.fused.shape, (1, 2, 2, 2, 16))
        self.assertEqual(sorted(result.masks), [0, 1, 2, 3])
        for ratio in result.keep_ratios.values():
            self.assertGreaterEqual(ratio, 0.0)
            self.assertLessEqual(ratio, 1.0)

    def keep_every_token(self):
        decision = self.fusion.predictor.decision_out
        decision.weight.data[...] = 0.0
        decision.bias.data[...] = [10.0, -10.0]

    def test_pairs_are_independent(self):
        self.keep_every_token()
        perturbed = self.features.copy()
        perturbed[Modality.T1] += 3.0
        results = [modality_aware_forward(Tensor(x), self.fusion) for x in (self.features, perturbed)]
        for result in results:
            self.assertEqual(set(result.keep_ratios.values()), {1.0})
        baseline, changed = (result.fused.data for result in results)
        for modality in (Modality.T2, Modality.FLAIR):
            columns = slice(4 * modality, 4 * modality + 4)
            np.testing.assert_array_equal(changed[..., columns], baseline[..., columns])
        columns = slice(4 * Modality.T1, 4 * Modality.T1 + 4)
        self.assertFalse(np.array_equal(changed[..., columns], baseline[..., columns]))

    def test_training_is_seeded(self):
        first = modality_aware_forward(Tensor(self.features), self.fusion, rng=Rng(1), training=True)
        second = modality_aware_forward(Tensor(self.features), self.fusion, rng=Rng(1), training=True)
        np.testing.assert_array_equal(first.fused.data, second.fused.data)

    def test_gradient_reaches_mask_predictor(self):
        self.fusion.zero_grad()
        weights = Rng(11).normal((1, 2, 2, 2, 16))
        result = modality_aware_forward(Tensor(self.features), self.fusion, rng=Rng(2), training=True)
        F.sum(result.fused * weights).backward()
        grads = [tensor.grad for _, tensor in self.fusion.predictor.named_parameters()]
        self.assertTrue(any(g is not None and np.any(g != 0) for g in grads))

    def test_needs_four_streams(self):
        with self.assertRaises(ShapeError):
            modality_aware_forward(Tensor(np.zeros((3, 2, 2, 2, 4))), self.fusion)
