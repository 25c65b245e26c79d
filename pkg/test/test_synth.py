import unittest
from dataclasses import replace

import numpy as np

from mvmatch.common import SpecError
from mvmatch.geometry import normalize_points, skew
from mvmatch.synth import (FLIP_SCENE, SynthSpec, camera_rig, generate,
                           jitter_scene, look_at, sweep_constraints,
                           sweep_embeddings, sweep_noise)


def joints_of(scene):
    return np.array([d.joints2d for f in scene.frames for d in f.detections])


class TestSynthSpec(unittest.TestCase):

    def test_default_is_valid(self):
        self.assertEqual(SynthSpec().validate().n_people, 3)

    def test_invalid(self):
        for changes in (dict(n_cameras=1), dict(noise_window=3), dict(p_flip=0.5),
                        dict(dropout=1.0), dict(confidence=0.0),
                        dict(confusion_pairs=((0, 0),)), dict(radius=3.0),
                        dict(n_people=40), dict(negative_fraction=1.5),
                        dict(attenuation=-1.0)):
            with self.subTest(**changes):
                self.assertRaises(SpecError, replace(SynthSpec(), **changes).validate)


class TestRig(unittest.TestCase):

    def test_cameras_look_at_the_center(self):
        for c, (pose, k) in camera_rig(SynthSpec(n_cameras=5)).items():
            self.assertAlmostEqual(np.linalg.norm(pose.center[:2]), 8.0)
            self.assertAlmostEqual(pose.center[2], 2.0)
            np.testing.assert_allclose(pose.transform([[0.0, 0.0, 1.0]])[0, :2], 0.0,
                                       atol=1e-12)
            self.assertEqual((k.cx, k.cy), (320.0, 240.0))

    def test_look_at_axes(self):
        pose = look_at((0.0, -5.0, 0.0), (0.0, 0.0, 0.0))
        # x right, y down, z forward
        np.testing.assert_allclose(pose.rotation, [[1, 0, 0], [0, 0, -1], [0, 1, 0]],
                                   atol=1e-12)


class TestGenerate(unittest.TestCase):

    def setUp(self):
        self.spec = SynthSpec(seed=11, frames=4)
        self.scene = generate(self.spec)

    def test_deterministic(self):
        self.assertEqual(generate(self.spec), self.scene)
        self.assertNotEqual(generate(replace(self.spec, seed=12)), self.scene)

    def test_layout(self):
        scene = self.scene
        self.assertEqual((scene.people, scene.n_cameras, scene.dim), (3, 4, 128))
        self.assertTrue(scene.feasible)
        self.assertEqual(len(scene.truth_skeletons), 4 * 3)
        for frame in scene.frames:
            self.assertEqual(len(frame), 4 * 3)
            for c in scene.camera_ids:
                hints = sorted(d.person_hint for d in frame.detections
                               if d.camera_id == c)
                self.assertEqual(hints, [0, 1, 2])

    def test_lower_legs(self):
        for skeleton in self.scene.truth_skeletons:
            np.testing.assert_allclose(skeleton.lower_leg_lengths(), [0.5, 0.5],
                                       atol=1e-12)

    def test_unit_features(self):
        for frame in self.scene.frames:
            for d in frame.detections:
                self.assertAlmostEqual(d.feature.norm, 1.0, places=12)

    def test_detections_satisfy_the_epipolar_constraint(self):
        truth = self.scene.truth_cameras
        rotation = truth[1].rotation @ truth[0].rotation.T
        translation = truth[1].translation - rotation @ truth[0].translation
        essential = skew(translation) @ rotation
        frame = self.scene.frames[0]
        by_view = {(d.camera_id, d.person_hint): d for d in frame.detections}
        for person in range(3):
            xa = normalize_points(by_view[(0, person)].uv, self.scene.intrinsics[0])
            xb = normalize_points(by_view[(1, person)].uv, self.scene.intrinsics[1])
            for a, b in zip(xa, xb):
                self.assertAlmostEqual(np.append(b, 1.0) @ essential @
                                       np.append(a, 1.0), 0.0, places=9)

    def test_confused_people_look_alike(self):
        scene = generate(replace(self.spec, confusion_pairs=((0, 1),)))
        by_view = {(d.camera_id, d.person_hint): d.feature.values
                   for d in scene.frames[0].detections}
        self.assertGreater(by_view[(0, 0)] @ by_view[(0, 1)], 0.9)
        self.assertLess(abs(by_view[(0, 0)] @ by_view[(0, 2)]), 0.5)

    def test_negative_fraction(self):
        spec = SynthSpec(seed=4, frames=1, dim=64, sigma_view=0.0, sigma_t=0.0,
                         negative_fraction=0.25)
        for d in generate(spec).frames[0].detections:
            self.assertEqual(int(np.sum(d.feature.values < 0)), 16)

    def test_attenuation_keeps_the_signs(self):
        spec = SynthSpec(seed=4, frames=2, sigma_view=0.0, sigma_t=0.0)
        plain = generate(spec).frames[1].detections
        weak = generate(replace(spec, attenuation=3.0)).frames[1].detections
        for a, b in zip(plain, weak):
            np.testing.assert_array_equal(np.sign(a.feature.values),
                                          np.sign(b.feature.values))
            self.assertLess(a.feature.values @ b.feature.values, 0.95)
        # other streams are untouched
        self.assertEqual([d.joints2d.tobytes() for d in plain],
                         [d.joints2d.tobytes() for d in weak])

    def test_dropout(self):
        scene = generate(replace(self.spec, dropout=0.5, frames=6))
        self.assertLess(sum(len(f) for f in scene.frames), 6 * 4 * 3)
        # motion does not depend on dropout
        self.assertEqual(scene.truth_skeletons,
                         generate(replace(self.spec, frames=6)).truth_skeletons)


class TestJitter(unittest.TestCase):

    def test_windows_share_directions(self):
        scene = generate(SynthSpec(seed=3, frames=2))
        clean = joints_of(scene)
        small = joints_of(jitter_scene(scene, 2, 3)) - clean
        large = joints_of(jitter_scene(scene, 6, 3)) - clean
        np.testing.assert_allclose(large, 3.0 * small, atol=1e-9)
        self.assertTrue(np.all(np.abs(small[..., :2]) <= 1.0))
        self.assertTrue(np.all(small[..., 2] == 0.0))
        self.assertGreater(np.abs(small).max(), 0.5)

    def test_generate_applies_the_window(self):
        spec = SynthSpec(seed=3, frames=2)
        jittered = generate(replace(spec, noise_window=4))
        self.assertEqual(jittered, jitter_scene(generate(spec), 4, 3))


class TestSweeps(unittest.TestCase):

    def setUp(self):
        self.base = SynthSpec(frames=2)

    def test_noise(self):
        rows = sweep_noise(self.base, [0, 8], seeds=(0,))
        self.assertEqual([r[0] for r in rows], [0, 8])
        self.assertEqual(rows[0][2], 100.0)
        self.assertLessEqual(rows[1][2], 100.0)
        self.assertEqual(rows[0][1], (1.0, 1.0, 1.0, 1.0))
        self.assertRaises(SpecError, sweep_noise, self.base, [4, 2])

    def test_embeddings(self):
        rows = sweep_embeddings(self.base, ('sign-vote', 'none'), seeds=(0, 1))
        self.assertEqual([r[0] for r in rows], ['sign-vote', 'none'])
        for _, scores, pcp in rows:
            self.assertEqual(len(scores), 4)
            self.assertTrue(np.isnan(pcp))

    def test_noise_trend(self):
        rows = sweep_noise(self.base, [0, 2, 4, 6, 10, 20])
        pcp = [r[2] for r in rows]
        for a, b in zip(pcp, pcp[1:]):
            self.assertLessEqual(b, a)
        self.assertLessEqual(pcp[0] - pcp[1], 2.0)
        self.assertLess(pcp[-1], pcp[0] - 10.0)

    def test_embedding_ordering_on_flipped_features(self):
        base = replace(SynthSpec(frames=6), **FLIP_SCENE)
        rows = sweep_embeddings(base, ('sign-vote', 'max', 'mean'), seeds=range(20))
        purity = {name: scores[0] for name, scores, _ in rows}
        self.assertGreaterEqual(purity['sign-vote'], purity['max'])
        self.assertGreaterEqual(purity['max'], purity['mean'])

    def test_constraints_beat_plain_kmeans(self):
        base = SynthSpec(frames=3, confusion_pairs=((0, 1),))
        rows = sweep_constraints(base, seeds=range(20))
        purity = {name: scores[0] for name, scores, _ in rows}
        self.assertEqual(list(purity), ['multi-step', 'size-only', 'kmeans'])
        self.assertGreater(purity['multi-step'], purity['kmeans'])


if __name__ == '__main__':
    unittest.main()
