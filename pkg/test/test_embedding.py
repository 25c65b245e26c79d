import unittest

import numpy as np
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mvmatch.common import DimensionMismatchError, EmptyTrackError, ZeroVectorError
from mvmatch.config import EMBED_VARIANTS
from mvmatch.embedding import (dominant_signs, embed, embed_track,
                               normalize_feature, sign_vote, voted_values)
from mvmatch.model import Detection, FeatureVector, Track, NUM_JOINTS

nonzero = st.floats(-10, 10).filter(lambda v: abs(v) > 1e-3)


class TestNormalize(unittest.TestCase):

    def test_example(self):
        f = normalize_feature([3.0, 4.0])
        np.testing.assert_allclose(f.values, [0.6, 0.8])

    @given(arrays(np.float64, 16, elements=nonzero))
    def test_unit_norm(self, raw):
        f = normalize_feature(raw)
        self.assertAlmostEqual(f.norm, 1.0, places=9)
        # direction is kept
        np.testing.assert_allclose(f.values * np.linalg.norm(raw), raw, rtol=1e-9)

    def test_errors(self):
        self.assertRaises(ZeroVectorError, normalize_feature, np.zeros(4))
        self.assertRaises(ZeroVectorError, normalize_feature, [np.nan, 1.0])
        self.assertRaises(DimensionMismatchError, normalize_feature, [1.0, 2.0], 3)
        self.assertRaises(DimensionMismatchError, normalize_feature, np.ones((2, 2)))


class TestSignVote(unittest.TestCase):

    def test_majority(self):
        track = [[1.0, -2.0], [3.0, 1.0], [-5.0, 4.0]]
        np.testing.assert_allclose(voted_values(track), [3.0, 4.0])
        np.testing.assert_allclose(sign_vote(track).values, [0.6, 0.8])

    def test_tie_goes_to_latest(self):
        track = [[1.0, 1.0], [-2.0, 1.0]]
        np.testing.assert_allclose(voted_values(track), [-2.0, 1.0])
        np.testing.assert_allclose(dominant_signs(np.array([[-1.0], [1.0]])), [1.0])

    def test_single_dimension_example(self):
        np.testing.assert_allclose(voted_values([[-0.1], [0.2], [0.3]]), [0.3])

    def test_matches_the_elementwise_rule(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            # small integers give zeros and ties often
            values = rng.integers(-3, 4, (rng.integers(1, 8), 5)).astype(float)
            expected = []
            for column in values.T:
                pos = [v for v in column if v >= 0.0]
                neg = [v for v in column if v < 0.0]
                if len(pos) != len(neg):
                    chosen = pos if len(pos) > len(neg) else neg
                else:
                    chosen = pos if column[-1] >= 0.0 else neg
                sign = 1.0 if chosen is pos else -1.0
                expected.append(sign * max(abs(v) for v in chosen))
            np.testing.assert_array_equal(voted_values(list(values)), expected)

    def test_zero_is_positive(self):
        np.testing.assert_allclose(voted_values([[0.0, 1.0], [0.0, 2.0]]),
                                   [0.0, 2.0])

    def test_flips_are_outvoted(self):
        rng = np.random.default_rng(3)
        base = normalize_feature(rng.standard_normal(32)).values
        track = []
        for n in range(5):
            f = base.copy()
            f[n::5] *= -1.0  # a different fifth of the signs flipped each time
            track.append(f)
        result = sign_vote(track).values
        np.testing.assert_array_equal(np.sign(result), np.sign(base))
        np.testing.assert_allclose(result, base, atol=1e-12)

    @given(arrays(np.float64, (5, 6), elements=nonzero), st.permutations(range(5)))
    def test_order_does_not_matter_without_ties(self, values, order):
        # five rows always give a strict majority
        a = sign_vote(list(values))
        b = sign_vote(list(values[list(order)]))
        np.testing.assert_allclose(a.values, b.values, atol=1e-12)
        self.assertAlmostEqual(a.norm, 1.0, places=9)

    @given(arrays(np.float64, 8, elements=nonzero))
    def test_single_feature(self, values):
        np.testing.assert_allclose(sign_vote([values]).values,
                                   normalize_feature(values).values, atol=1e-12)

    def test_errors(self):
        self.assertRaises(EmptyTrackError, sign_vote, [])
        self.assertRaises(DimensionMismatchError, sign_vote, [[1.0, 2.0], [1.0]])
        self.assertRaises(ZeroVectorError, sign_vote, [[0.0, 0.0]])


class TestVariants(unittest.TestCase):

    track = [[1.0, -2.0], [3.0, 1.0], [-5.0, 4.0]]

    def test_mean(self):
        expected = normalize_feature([-1.0 / 3.0, 1.0]).values
        np.testing.assert_allclose(embed(self.track, 'mean').values, expected)

    def test_max(self):
        np.testing.assert_allclose(embed(self.track, 'max').values, [0.6, 0.8])

    def test_mean_sign_vote(self):
        expected = normalize_feature([2.0, 2.5]).values
        np.testing.assert_allclose(embed(self.track, 'mean-sign-vote').values,
                                   expected)

    def test_none_takes_the_latest(self):
        expected = normalize_feature([-5.0, 4.0]).values
        np.testing.assert_allclose(embed(self.track, 'none').values, expected)

    def test_variant_names(self):
        for variant in EMBED_VARIANTS:
            with self.subTest(variant=variant):
                self.assertAlmostEqual(embed(self.track, variant).norm, 1.0)
        self.assertRaises(ValueError, embed, self.track, 'latest')

    def test_unknown(self):
        self.assertRaises(ValueError, embed, self.track, 'median')

    def test_embed_track(self):
        joints = np.ones((NUM_JOINTS, 3))
        detections = [Detection(0, f, (0, 0, 1, 1), joints, values)
                      for f, values in enumerate(self.track)]
        track = embed_track(Track(0, 7, detections))
        self.assertIsInstance(track.track_feature, FeatureVector)
        np.testing.assert_allclose(track.track_feature.values, [0.6, 0.8])
        self.assertEqual(track.track_id, 7)


if __name__ == '__main__':
    unittest.main()
