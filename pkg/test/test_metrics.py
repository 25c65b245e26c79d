import itertools
import unittest

import numpy as np
from hypothesis import given, strategies as st

from mvmatch.common import LengthMismatchError, SchemaError
from mvmatch.io import Results
from mvmatch.metrics import (ClusteringScores, ContingencyTable, Evaluation,
                             FrameScore, clustering_scores, evaluate,
                             format_score_table, format_sweep_table,
                             match_skeletons, missed, pairwise_f_score, pcp)
from mvmatch.model import ClusterResult, JointId, Skeleton3D, NUM_JOINTS
from mvmatch.synth import SynthSpec, generate


def line_skeleton(offset=(0.0, 0.0, 0.0), person=0, frame=0):
    """ Joint j at (j, 0, 0): every limb is at least 2 long. """
    joints = np.zeros((NUM_JOINTS, 3))
    joints[:, 0] = np.arange(NUM_JOINTS)
    return Skeleton3D(person, joints + offset, [True] * NUM_JOINTS, frame)


def moved(skeleton, joint, delta):
    joints = np.array(skeleton.joints3d)
    joints[joint] += delta
    return Skeleton3D(skeleton.person_id, joints, skeleton.joint_valid,
                      skeleton.frame_id)


labelings = st.lists(st.integers(0, 3), min_size=2, max_size=12)


class TestClusteringScores(unittest.TestCase):

    def test_perfect(self):
        self.assertEqual(clustering_scores([1, 1, 0, 0, 2], [0, 0, 2, 2, 1]),
                         (1.0, 1.0, 1.0, 1.0))

    def test_example(self):
        scores = clustering_scores([0, 0, 1, 1], [0, 0, 0, 1])
        self.assertIsInstance(scores, ClusteringScores)
        self.assertAlmostEqual(scores.purity, 0.75)
        self.assertAlmostEqual(scores.ri, 0.5)
        self.assertAlmostEqual(scores.ari, 0.0)
        self.assertAlmostEqual(scores.f_score, 0.4)

    def test_contingency(self):
        table = ContingencyTable.from_labels([0, 0, 1, 1], [0, 0, 0, 1])
        np.testing.assert_array_equal(table.counts, [[2, 0], [1, 1]])
        self.assertEqual(table.total, 4)
        self.assertRaises(SchemaError, ContingencyTable, [[1, -1]])

    def test_no_pairs(self):
        # every sample alone: nothing predicted together, nothing belongs together
        self.assertEqual(pairwise_f_score([0, 1, 2], [0, 1, 2]), 1.0)

    def test_length_mismatch(self):
        self.assertRaises(LengthMismatchError, clustering_scores, [0, 1], [0, 1, 1])
        self.assertRaises(LengthMismatchError, clustering_scores, [0], [0])

    def test_against_pair_counting(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            pred = rng.integers(0, 4, 12).tolist()
            truth = rng.integers(0, 3, 12).tolist()
            tp = fp = fn = tn = 0
            for i, j in itertools.combinations(range(12), 2):
                same_pred, same_truth = pred[i] == pred[j], truth[i] == truth[j]
                tp += same_pred and same_truth
                fp += same_pred and not same_truth
                fn += same_truth and not same_pred
                tn += not same_pred and not same_truth
            denominator = (tp + fn) * (fn + tn) + (tp + fp) * (fp + tn)
            if denominator == 0 or tp == 0:
                continue
            majority = sum(max(sum(1 for p, t in zip(pred, truth) if p == k and t == j)
                               for j in set(truth)) for k in set(pred))
            precision, recall = tp / (tp + fp), tp / (tp + fn)
            expected = (majority / 12, (tp + tn) / 66,
                        2.0 * (tp * tn - fn * fp) / denominator,
                        2 * precision * recall / (precision + recall))
            np.testing.assert_allclose(clustering_scores(pred, truth), expected,
                                       atol=1e-12)

    def test_random_labelings_have_zero_ari(self):
        rng = np.random.default_rng(8)
        ari = [clustering_scores(rng.integers(0, 4, 40), rng.integers(0, 4, 40)).ari
               for _ in range(200)]
        self.assertLess(abs(np.mean(ari)), 0.05)

    @given(labelings, st.data())
    def test_label_names_do_not_matter(self, truth, data):
        pred = data.draw(st.lists(st.integers(0, 3), min_size=len(truth),
                                  max_size=len(truth)))
        rename = data.draw(st.permutations(range(4)))
        renamed = [rename[p] for p in pred]
        a, b = clustering_scores(pred, truth), clustering_scores(renamed, truth)
        np.testing.assert_allclose(a, b, atol=1e-12)
        for value in (a.purity, a.ri, a.f_score):
            self.assertTrue(0.0 <= value <= 1.0)


class TestPcp(unittest.TestCase):

    def setUp(self):
        self.truth = line_skeleton()

    def test_exact(self):
        score = pcp(self.truth, self.truth)
        self.assertEqual((score.correct, score.evaluated), (10, 10))
        self.assertEqual(score.percentage, 100.0)

    def test_threshold_is_strict(self):
        # both limbs at the left knee are 2 long, alpha 0.5 allows errors below 1
        inside = pcp(moved(self.truth, JointId.L_KNEE, (0.0, 0.99, 0.0)), self.truth)
        self.assertEqual(inside.correct, 10)
        boundary = pcp(moved(self.truth, JointId.L_KNEE, (0.0, 1.0, 0.0)), self.truth)
        self.assertEqual((boundary.correct, boundary.evaluated), (8, 10))
        self.assertEqual(boundary.percentage, 80.0)
        self.assertEqual(pcp(moved(self.truth, JointId.L_KNEE, (0.0, 1.0, 0.0)),
                             self.truth, alpha=0.6).correct, 10)

    def test_invalid_joints_are_skipped(self):
        valid = [True] * NUM_JOINTS
        valid[JointId.L_WRIST] = False
        pred = Skeleton3D(0, self.truth.joints3d, valid)
        score = pcp(pred, self.truth)
        self.assertEqual((score.correct, score.evaluated), (9, 9))
        self.assertEqual(score.limbs.count(None), 1)

    def test_missed(self):
        score = missed(self.truth)
        self.assertEqual((score.correct, score.evaluated), (0, 10))
        self.assertEqual(score.percentage, 0.0)
        self.assertTrue(np.isnan(pcp(Skeleton3D(0, self.truth.joints3d,
                                                [False] * NUM_JOINTS),
                                     self.truth).percentage))


class TestMatchSkeletons(unittest.TestCase):

    def test_nearest_hips(self):
        truth = [line_skeleton(person=0), line_skeleton((0.0, 5.0, 0.0), person=1)]
        pred = [line_skeleton((0.0, 5.1, 0.0)), line_skeleton((0.1, 0.0, 0.0)),
                line_skeleton((0.0, 40.0, 0.0))]
        self.assertEqual(match_skeletons(pred, truth), [(1, 0), (0, 1)])
        self.assertEqual(match_skeletons([], truth), [])


class TestEvaluate(unittest.TestCase):

    def test_ground_truth_scores_perfectly(self):
        scene = generate(SynthSpec(seed=2, frames=3))
        matches = {f.frame_id: ClusterResult(
            3, [d.person_hint for d in f.detections], np.zeros((3, scene.dim)))
            for f in scene.frames}
        evaluation = evaluate(scene, Results(matches, scene.truth_cameras,
                                             scene.truth_skeletons))
        self.assertEqual(len(evaluation.frames), 3)
        self.assertEqual(evaluation.mean_scores(), (1.0, 1.0, 1.0, 1.0))
        self.assertEqual(evaluation.pcp, 100.0)
        self.assertEqual(evaluation.per_person, {0: 100.0, 1: 100.0, 2: 100.0})

    def test_camera_coordinates(self):
        scene = generate(SynthSpec(seed=2, frames=1))
        pose = scene.truth_cameras[1]
        skeletons = [Skeleton3D(s.person_id, pose.transform(s.joints3d),
                                s.joint_valid, s.frame_id)
                     for s in scene.truth_skeletons]
        evaluation = evaluate(scene, Results({}, {}, skeletons, coordinates=1))
        self.assertEqual(evaluation.pcp, 100.0)
        self.assertIsNone(evaluation.frames[0].scores)

    def test_missing_skeletons_count_as_wrong(self):
        scene = generate(SynthSpec(seed=2, frames=1))
        evaluation = evaluate(scene, Results({}, {}, scene.truth_skeletons[:2]))
        self.assertAlmostEqual(evaluation.pcp, 200.0 / 3.0)
        self.assertEqual(evaluation.per_person[2], 0.0)


class TestTables(unittest.TestCase):

    def setUp(self):
        perfect = ClusteringScores(1.0, 1.0, 1.0, 1.0)
        self.evaluation = Evaluation((FrameScore(0, perfect, 100.0),
                                      FrameScore(1, None, None)),
                                     {0: 100.0}, 100.0)

    def test_tsv(self):
        lines = format_score_table(self.evaluation, tsv=True).splitlines()
        self.assertEqual(lines[0], 'frame\tpurity\tri\tari\tf\tpcp')
        self.assertEqual(lines[1].split('\t'),
                         ['0'] + ['1.000000'] * 4 + ['100.000000'])
        self.assertEqual(lines[2].split('\t'), ['1'] + ['nan'] * 5)
        self.assertEqual(lines[3].split('\t')[0], 'mean')
        self.assertEqual(lines[4], 'person0\t100.000000')

    def test_aligned(self):
        lines = format_score_table(self.evaluation).splitlines()
        self.assertEqual(len(lines), 5)
        self.assertIn('-', lines[2].split())
        self.assertEqual(lines[3].split()[-1], '100.000')

    def test_sweep(self):
        text = format_sweep_table([(0, (1.0, 1.0, 1.0, 1.0), 100.0),
                                   (2, None, float('nan'))])
        self.assertEqual(text.splitlines(),
                         ['w\tpurity\tri\tari\tf\tpcp',
                          '0\t1.000000\t1.000000\t1.000000\t1.000000\t100.000000',
                          '2\tnan\tnan\tnan\tnan\tnan'])


if __name__ == '__main__':
    unittest.main()
