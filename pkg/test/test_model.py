import unittest

import numpy as np

from mvmatch.common import SchemaError
from mvmatch.model import (CameraPose, ClusterResult, Detection, FeatureVector,
                           Frame, Intrinsics, JointId, Skeleton3D, Track,
                           NUM_JOINTS, orthonormalize)


def detection(camera=0, frame=0, feature=(1.0, 0.0), confidence=1.0):
    joints = np.column_stack((np.arange(NUM_JOINTS), np.arange(NUM_JOINTS),
                              np.full(NUM_JOINTS, confidence)))
    return Detection(camera, frame, (0, 0, 10, 10), joints, feature)


def rotation_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class TestDetection(unittest.TestCase):

    def test_basics(self):
        d = detection(confidence=0.5)
        self.assertEqual(d.uv.shape, (NUM_JOINTS, 2))
        self.assertTrue(np.all(d.usable_joints(0.5)))
        self.assertFalse(np.any(d.usable_joints(0.6)))
        self.assertIsInstance(d.feature, FeatureVector)
        self.assertEqual(d, detection(confidence=0.5))

    def test_immutable(self):
        d = detection()
        with self.assertRaises(ValueError):
            d.joints2d[0, 0] = 5.0

    def test_bad_values(self):
        joints = np.zeros((NUM_JOINTS, 3))
        self.assertRaises(SchemaError, Detection, 0, 0, (5, 0, 1, 10), joints, [1.0])
        self.assertRaises(SchemaError, Detection, 0, 0, (0, 0, 1), joints, [1.0])
        self.assertRaises(SchemaError, Detection, 0, 0, (0, 0, 1, 1),
                          np.zeros((11, 3)), [1.0])
        joints[3, 2] = 1.5
        self.assertRaises(SchemaError, Detection, 0, 0, (0, 0, 1, 1), joints, [1.0])
        self.assertRaises(SchemaError, FeatureVector, [])

    def test_non_finite_values(self):
        for value in (np.nan, np.inf, -np.inf):
            with self.subTest(value=value):
                with self.assertRaisesRegex(SchemaError, 'joints must be finite'):
                    detection(confidence=value)
                self.assertRaises(SchemaError, FeatureVector, [1.0, value])
                self.assertRaises(SchemaError, Detection, 0, 0, (0, 0, value, 1),
                                  np.zeros((NUM_JOINTS, 3)), [1.0])
                self.assertRaises(SchemaError, Intrinsics, 500.0, value, 0.0, 0.0)
                self.assertRaises(SchemaError, CameraPose, np.eye(3), [0.0, value, 0.0])


class TestTrack(unittest.TestCase):

    def test_gap_of_one_frame(self):
        t = Track(0, 3, [detection(frame=0), detection(frame=2)])
        self.assertEqual(len(t), 2)
        self.assertEqual(t.last_frame, 2)

    def test_bad_tracks(self):
        self.assertRaises(SchemaError, Track, 0, 0, [])
        self.assertRaises(SchemaError, Track, 0, 0,
                          [detection(frame=0), detection(frame=3)])
        self.assertRaises(SchemaError, Track, 0, 0,
                          [detection(frame=1), detection(frame=1)])
        self.assertRaises(SchemaError, Track, 0, 0, [detection(camera=1)])


class TestClusterResult(unittest.TestCase):

    def test_defaults(self):
        r = ClusterResult(2, [0, 1, 1, 0], np.zeros((2, 3)))
        self.assertEqual(r.conflict_flags, (False,) * 4)
        self.assertEqual(r.members(1), [1, 2])
        self.assertEqual(r.sizes(), [2, 2])

    def test_equality_ignores_trace(self):
        a = ClusterResult(2, [0, 1], np.eye(2), objective_trace=[3.0, 2.0])
        b = ClusterResult(2, [0, 1], np.eye(2))
        self.assertEqual(a, b)

    def test_bad_results(self):
        self.assertRaises(SchemaError, ClusterResult, 2, [0, 2], np.zeros((2, 3)))
        self.assertRaises(SchemaError, ClusterResult, 2, [0, 1], np.zeros((3, 3)))
        self.assertRaises(SchemaError, ClusterResult, 2, [0, 1], np.zeros((2, 3)),
                          [True])


class TestCameraPose(unittest.TestCase):

    def setUp(self):
        self.pose = CameraPose(rotation_z(0.3), [1.0, -2.0, 0.5])

    def test_center(self):
        np.testing.assert_allclose(self.pose.transform(self.pose.center),
                                   np.zeros(3), atol=1e-12)

    def test_inverse(self):
        points = np.array([[0.1, 0.2, 3.0], [-1.0, 0.5, 2.0]])
        back = self.pose.inverse().transform(self.pose.transform(points))
        np.testing.assert_allclose(back, points, atol=1e-12)

    def test_compose(self):
        rel_r, rel_t = rotation_z(-0.1), np.array([0.0, 1.0, 0.0])
        other = self.pose.compose(rel_r, rel_t)
        point = np.array([0.3, -0.4, 2.0])
        expected = rel_r @ self.pose.transform(point) + rel_t
        np.testing.assert_allclose(other.transform(point), expected, atol=1e-12)

    def test_scaled(self):
        scaled = self.pose.scaled(2.0)
        np.testing.assert_allclose(scaled.center, 2.0 * self.pose.center)

    def test_not_a_rotation(self):
        reflection = np.diag([1.0, 1.0, -1.0])
        self.assertRaises(SchemaError, CameraPose, reflection, np.zeros(3))
        self.assertRaises(SchemaError, CameraPose, 2.0 * np.eye(3), np.zeros(3))

    def test_orthonormalize(self):
        noisy = rotation_z(0.7) + 1e-4 * np.arange(9).reshape(3, 3)
        rot = orthonormalize(noisy)
        np.testing.assert_allclose(rot.T @ rot, np.eye(3), atol=1e-12)
        self.assertAlmostEqual(np.linalg.det(rot), 1.0)


class TestSkeleton(unittest.TestCase):

    def test_limbs(self):
        joints = np.zeros((NUM_JOINTS, 3))
        joints[JointId.L_KNEE] = (0.0, 0.0, 0.5)
        joints[JointId.R_KNEE] = (0.3, 0.0, 0.6)
        joints[JointId.R_ANKLE] = (0.3, 0.0, 0.0)
        valid = [True] * NUM_JOINTS
        valid[JointId.L_ANKLE] = False
        s = Skeleton3D(1, joints, valid)
        self.assertIsNone(s.limb_length(JointId.L_KNEE, JointId.L_ANKLE))
        np.testing.assert_allclose(s.lower_leg_lengths(), [0.6])
        np.testing.assert_allclose(s.scaled(2.0).lower_leg_lengths(), [1.2])

    def test_hip_center(self):
        joints = np.zeros((NUM_JOINTS, 3))
        joints[JointId.L_HIP] = (1.0, 0.0, 1.0)
        joints[JointId.R_HIP] = (-1.0, 0.0, 1.0)
        s = Skeleton3D(0, joints, [True] * NUM_JOINTS)
        np.testing.assert_allclose(s.hip_center(), [0.0, 0.0, 1.0])
        self.assertIsNone(Skeleton3D(0, joints, [False] * NUM_JOINTS).hip_center())

    def test_bad_mask(self):
        self.assertRaises(SchemaError, Skeleton3D, 0, np.zeros((NUM_JOINTS, 3)),
                          [True] * 3)


class TestFrame(unittest.TestCase):

    def test_cameras(self):
        f = Frame(4, [detection(camera=2, frame=4), detection(camera=0, frame=4)])
        self.assertEqual(f.camera_ids(), [0, 2])
        self.assertRaises(SchemaError, Frame, 3, [detection(frame=4)])

    def test_intrinsics(self):
        k = Intrinsics(500, 400, 320, 240)
        self.assertFalse(k.has_distortion)
        self.assertEqual(k.matrix[1, 1], 400.0)
        self.assertRaises(SchemaError, Intrinsics, 0, 400, 320, 240)
        self.assertRaises(SchemaError, Intrinsics, 1, 1, 0, 0, (0.1,))


if __name__ == '__main__':
    unittest.main()
