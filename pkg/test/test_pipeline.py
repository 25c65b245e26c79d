import unittest
from dataclasses import replace

import numpy as np
from scipy.spatial.transform import Rotation

from mvmatch import pipeline
from mvmatch.common import ConfigError, SchemaError
from mvmatch.config import PipelineConfig
from mvmatch.io import (embeddings_text, matches_text, parse_embeddings,
                        parse_matches, parse_scene, parse_tracks, results_text,
                        scene_text, tracks_text)
from mvmatch.metrics import evaluate, match_skeletons, truth_in
from mvmatch.synth import SynthSpec, generate


class TestStages(unittest.TestCase):

    def setUp(self):
        self.scene = generate(SynthSpec(seed=1, frames=4))
        self.cfg = PipelineConfig(k=3, t=3)

    def test_tracks_cover_every_detection(self):
        tracks = pipeline.track_scene(self.scene, self.cfg)
        self.assertEqual(len(tracks), 4 * 4 * 3)
        self.assertTrue(all(1 <= a.length <= 3 for a in tracks.values()))
        windows = pipeline.track_windows(self.scene, tracks)
        self.assertEqual(set(windows), set(tracks))

    def test_track_windows_need_every_detection(self):
        tracks = pipeline.track_scene(self.scene, self.cfg)
        del tracks[(0, 0)]
        self.assertRaises(SchemaError, pipeline.track_windows, self.scene, tracks)

    def test_embed_none_uses_detection_features(self):
        cfg = self.cfg.updated(embed_variant='none')
        embeddings = pipeline.embed_tracks(self.scene, {}, cfg)
        detection = self.scene.frames[2].detections[5]
        np.testing.assert_allclose(embeddings[(2, 5)].values,
                                   detection.feature.values, atol=1e-12)

    def test_number_of_people(self):
        frame = self.scene.frames[0]
        self.assertEqual(pipeline.frame_k(self.scene, frame, self.cfg), 3)
        unknown = replace(self.scene, people=None)
        self.assertEqual(pipeline.frame_k(unknown, frame, self.cfg.updated(k='auto')), 3)
        self.assertEqual(pipeline.frame_k(self.scene, frame, PipelineConfig()), 3)
        with self.assertRaisesRegex(ConfigError, '--k'):
            pipeline.frame_k(unknown, frame, PipelineConfig())

    def test_stage_signals(self):
        names = []

        def record(name, summary):
            names.append(name)

        pipeline.stage_finished.connect(record)
        try:
            pipeline.run_pipeline(self.scene, self.cfg.updated(fix_cameras=True))
        finally:
            pipeline.stage_finished.disconnect(record)
        self.assertEqual(names, ['track', 'embed', 'match', 'reconstruct'])

    def test_fixed_cameras_need_truth(self):
        _, _, matches = pipeline.match_scene(self.scene, self.cfg)
        bare = replace(self.scene, truth_cameras={})
        self.assertRaises(SchemaError, pipeline.reconstruct, bare, matches,
                          self.cfg.updated(fix_cameras=True))


class TestRunPipeline(unittest.TestCase):

    def setUp(self):
        self.scene = generate(SynthSpec(seed=1, frames=4))
        self.cfg = PipelineConfig(k=3)

    def test_clean_scene_with_known_cameras(self):
        results = pipeline.run_pipeline(self.scene, self.cfg.updated(fix_cameras=True))
        self.assertEqual(results.coordinates, 'world')
        self.assertLess(results.rmse, 1e-6)
        evaluation = evaluate(self.scene, results)
        self.assertEqual(evaluation.mean_scores(), (1.0, 1.0, 1.0, 1.0))
        self.assertEqual(evaluation.pcp, 100.0)

    def test_clean_scene_with_unknown_cameras(self):
        results = pipeline.run_pipeline(self.scene, self.cfg)
        self.assertEqual(results.coordinates, 0)
        truth = self.scene.truth_cameras
        for c, pose in results.cameras.items():
            rotation = truth[c].rotation @ truth[0].rotation.T
            translation = truth[c].translation - rotation @ truth[0].translation
            self.assertLess(Rotation.from_matrix(pose.rotation.T @ rotation)
                            .magnitude(), 1e-6)
            np.testing.assert_allclose(pose.translation, translation, atol=1e-6)
        for frame in self.scene.frames:
            pred = [s for s in results.skeletons if s.frame_id == frame.frame_id]
            expected = [truth_in(s, 0, truth) for s in self.scene.truth_skeletons
                        if s.frame_id == frame.frame_id]
            pairs = match_skeletons(pred, expected)
            self.assertEqual(len(pairs), 3)
            for i, j in pairs:
                np.testing.assert_allclose(pred[i].joints3d, expected[j].joints3d,
                                           atol=1e-6)
        self.assertEqual(evaluate(self.scene, results).pcp, 100.0)

    def test_unreachable_camera_is_left_out(self):
        # camera 3 keeps its features but none of its joints is usable
        frames = []
        for frame in self.scene.frames:
            detections = []
            for d in frame.detections:
                if d.camera_id == 3:
                    joints = np.array(d.joints2d)
                    joints[:, 2] = 0.0
                    d = replace(d, joints2d=joints)
                detections.append(d)
            frames.append(replace(frame, detections=detections))
        scene = replace(self.scene, frames=frames)
        with self.assertLogs('mvmatch', level='WARNING') as logs:
            results = pipeline.run_pipeline(scene, self.cfg)
        self.assertTrue(any('not connected to camera 0' in line for line in logs.output))
        self.assertEqual(sorted(results.cameras), [0, 1, 2])
        evaluation = evaluate(scene, results)
        self.assertEqual(evaluation.mean_scores(), (1.0, 1.0, 1.0, 1.0))
        self.assertEqual(evaluation.pcp, 100.0)

    def test_heavy_jitter_with_estimated_cameras(self):
        results = pipeline.run_pipeline(self.scene, self.cfg.updated(noise_window=20))
        self.assertEqual(results.coordinates, 0)
        self.assertIn(0, results.cameras)
        value = evaluate(self.scene, results).pcp
        self.assertTrue(np.isnan(value) or 0.0 <= value <= 100.0)

    def test_stages_chain_through_files(self):
        cfg = self.cfg.updated(noise_window=2)
        scene = parse_scene(scene_text(self.scene).splitlines())
        prepared = pipeline.prepare_scene(scene, cfg)
        tracks = parse_tracks(tracks_text(
            pipeline.track_scene(prepared, cfg)).splitlines())
        embeddings, variant = parse_embeddings(embeddings_text(
            pipeline.embed_tracks(prepared, tracks, cfg), cfg.embed_variant).splitlines())
        self.assertEqual(variant, 'sign-vote')
        matches = parse_matches(matches_text(
            pipeline.match_frames(scene, embeddings, cfg)).splitlines())
        chained = pipeline.reconstruct(scene, matches, cfg)
        self.assertEqual(results_text(chained),
                         results_text(pipeline.run_pipeline(self.scene, cfg)))

    def test_deterministic(self):
        cfg = self.cfg.updated(noise_window=4, jobs=2)
        a = pipeline.run_pipeline(self.scene, cfg)
        b = pipeline.run_pipeline(self.scene, cfg.updated(jobs=1))
        self.assertEqual(results_text(a), results_text(b))

    def test_unknown_people(self):
        scene = replace(self.scene, people=None)
        self.assertRaises(ConfigError, pipeline.run_pipeline, scene, PipelineConfig())


if __name__ == '__main__':
    unittest.main()
