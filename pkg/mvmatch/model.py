"""

Domain types shared by the whole pipeline: features, detections, tracks,
clustering results, cameras and skeletons.

All types are immutable once constructed. Arrays are copied on
construction and marked read-only so instances can be shared freely.

"""

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .common import SchemaError


NUM_JOINTS = 12
DEFAULT_FEATURE_DIM = 128
DEFAULT_CONFIDENCE_THRESHOLD = 0.1


class JointId(enum.IntEnum):
    L_SHOULDER = 0
    R_SHOULDER = 1
    L_ELBOW = 2
    R_ELBOW = 3
    L_WRIST = 4
    R_WRIST = 5
    L_HIP = 6
    R_HIP = 7
    L_KNEE = 8
    R_KNEE = 9
    L_ANKLE = 10
    R_ANKLE = 11


LIMBS = (
    (JointId.L_SHOULDER, JointId.L_ELBOW),
    (JointId.R_SHOULDER, JointId.R_ELBOW),
    (JointId.L_ELBOW, JointId.L_WRIST),
    (JointId.R_ELBOW, JointId.R_WRIST),
    (JointId.L_HIP, JointId.L_KNEE),
    (JointId.R_HIP, JointId.R_KNEE),
    (JointId.L_KNEE, JointId.L_ANKLE),
    (JointId.R_KNEE, JointId.R_ANKLE),
    (JointId.L_SHOULDER, JointId.L_HIP),
    (JointId.R_SHOULDER, JointId.R_HIP),
)

LOWER_LEGS = (
    (JointId.L_KNEE, JointId.L_ANKLE),
    (JointId.R_KNEE, JointId.R_ANKLE),
)


def _frozen_array(values, shape=None, dtype=float):
    """ Return a read-only copy of `values`, optionally checking the shape. """
    arr = np.array(values, dtype=dtype, copy=True)
    if shape is not None and arr.shape != shape:
        raise SchemaError('expected an array of shape %s but got %s'
                          % (shape, arr.shape))
    arr.setflags(write=False)
    return arr


def _finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise SchemaError('%s must be finite' % what)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """ Appearance descriptor of one person detection. """

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values)
        if arr.ndim != 1 or arr.size == 0:
            raise SchemaError('a feature must be a non-empty vector')
        _finite(arr, 'feature values')
        object.__setattr__(self, 'values', arr)

    @property
    def dim(self):
        return self.values.shape[0]

    @property
    def norm(self):
        return float(np.linalg.norm(self.values))

    def __len__(self):
        return self.dim

    def __eq__(self, other):
        return (isinstance(other, FeatureVector) and
                np.array_equal(self.values, other.values))

    def __hash__(self):
        return hash(self.values.tobytes())

    def __repr__(self):
        return '<FeatureVector D=%d>' % self.dim


@dataclass(frozen=True, eq=False)
class Detection:
    """ One person seen by one camera in one frame.

    `joints2d` is a 12 x 3 array of (u, v, confidence) in pixels.
    `person_hint` is the ground-truth identity and is only used for evaluation.

    """

    camera_id: int
    frame_id: int
    bbox: Tuple[float, float, float, float]
    joints2d: np.ndarray
    feature: FeatureVector
    person_hint: Optional[int] = None

    def __post_init__(self):
        bbox = tuple(float(v) for v in self.bbox)
        if len(bbox) != 4:
            raise SchemaError('bbox needs 4 values, got %d' % len(bbox))
        _finite(np.array(bbox), 'bbox')
        x_min, y_min, x_max, y_max = bbox
        if not (x_min < x_max and y_min < y_max):
            raise SchemaError('bbox %s is not well ordered' % (bbox,))
        object.__setattr__(self, 'bbox', bbox)
        joints = _finite(_frozen_array(self.joints2d, (NUM_JOINTS, 3)), 'joints')
        conf = joints[:, 2]
        if not np.all((conf >= 0.0) & (conf <= 1.0)):
            raise SchemaError('joint confidence must lie in [0, 1]')
        object.__setattr__(self, 'joints2d', joints)
        if not isinstance(self.feature, FeatureVector):
            object.__setattr__(self, 'feature', FeatureVector(self.feature))

    @property
    def uv(self):
        return self.joints2d[:, :2]

    @property
    def confidence(self):
        return self.joints2d[:, 2]

    def usable_joints(self, threshold=DEFAULT_CONFIDENCE_THRESHOLD):
        """ Return the boolean mask of joints confident enough to be used. """
        return self.confidence >= threshold

    def __eq__(self, other):
        return (isinstance(other, Detection) and
                self.camera_id == other.camera_id and
                self.frame_id == other.frame_id and
                self.person_hint == other.person_hint and
                self.bbox == other.bbox and
                np.array_equal(self.joints2d, other.joints2d) and
                self.feature == other.feature)

    def __hash__(self):
        return hash((self.camera_id, self.frame_id, self.bbox))

    def __repr__(self):
        return '<Detection cam=%d frame=%d hint=%s>' % (
            self.camera_id, self.frame_id, self.person_hint)


@dataclass(frozen=True, eq=False)
class Track:
    """ A short single-camera chain of detections of one person.

    Detections are time ordered; consecutive frames differ by one or two
    (a single missing frame is tolerated).

    """

    camera_id: int
    track_id: int
    detections: Tuple[Detection, ...]
    track_feature: Optional[FeatureVector] = None

    def __post_init__(self):
        detections = tuple(self.detections)
        if not detections:
            raise SchemaError('a track needs at least one detection')
        for d in detections:
            if d.camera_id != self.camera_id:
                raise SchemaError('track %d of camera %d holds a detection '
                                  'from camera %d'
                                  % (self.track_id, self.camera_id, d.camera_id))
        for a, b in zip(detections, detections[1:]):
            gap = b.frame_id - a.frame_id
            if gap < 1 or gap > 2:
                raise SchemaError('track %d jumps from frame %d to frame %d'
                                  % (self.track_id, a.frame_id, b.frame_id))
        object.__setattr__(self, 'detections', detections)

    def __len__(self):
        return len(self.detections)

    @property
    def last(self):
        return self.detections[-1]

    @property
    def last_frame(self):
        return self.detections[-1].frame_id

    @property
    def features(self):
        return [d.feature for d in self.detections]

    def __eq__(self, other):
        return (isinstance(other, Track) and
                self.camera_id == other.camera_id and
                self.track_id == other.track_id and
                self.detections == other.detections and
                self.track_feature == other.track_feature)

    def __hash__(self):
        return hash((self.camera_id, self.track_id, len(self.detections)))

    def __repr__(self):
        return '<Track cam=%d id=%d len=%d>' % (
            self.camera_id, self.track_id, len(self))


@dataclass(frozen=True, eq=False)
class ClusterResult:
    """ Assignment of samples to K clusters.

    `conflict_flags[i]` is set when sample i broke the source constraint
    after size-constrained clustering; `fallback_flags[i]` when it had to be
    re-assigned without any eligible cluster. `objective_trace` holds the
    clustering objective after each assignment step and `reassignments`
    the (sample, cluster, score) triples in the order they were re-assigned.

    """

    k: int
    assignments: Tuple[int, ...]
    centers: np.ndarray
    conflict_flags: Tuple[bool, ...] = ()
    fallback_flags: Tuple[bool, ...] = ()
    objective_trace: Tuple[float, ...] = ()
    reassignments: Tuple[Tuple[int, int, float], ...] = ()

    def __post_init__(self):
        assignments = tuple(int(a) for a in self.assignments)
        n = len(assignments)
        for i, a in enumerate(assignments):
            if not 0 <= a < self.k:
                raise SchemaError('sample %d assigned to cluster %d of %d'
                                  % (i, a, self.k))
        object.__setattr__(self, 'assignments', assignments)
        centers = _frozen_array(self.centers)
        if centers.ndim != 2 or centers.shape[0] != self.k:
            raise SchemaError('expected %d cluster centers, got shape %s'
                              % (self.k, centers.shape))
        object.__setattr__(self, 'centers', centers)
        for name in ('conflict_flags', 'fallback_flags'):
            flags = tuple(bool(f) for f in getattr(self, name)) or (False,) * n
            if len(flags) != n:
                raise SchemaError('%s has %d entries for %d samples'
                                  % (name, len(flags), n))
            object.__setattr__(self, name, flags)
        object.__setattr__(self, 'objective_trace',
                           tuple(float(v) for v in self.objective_trace))
        object.__setattr__(self, 'reassignments',
                           tuple((int(s), int(c), float(v))
                                 for s, c, v in self.reassignments))

    def __len__(self):
        return len(self.assignments)

    def members(self, cluster):
        """ Return the indices of samples assigned to `cluster`. """
        return [i for i, a in enumerate(self.assignments) if a == cluster]

    def sizes(self):
        return [len(self.members(k)) for k in range(self.k)]

    def replace(self, **changes):
        return replace(self, **changes)

    def __eq__(self, other):
        return (isinstance(other, ClusterResult) and
                self.k == other.k and
                self.assignments == other.assignments and
                np.array_equal(self.centers, other.centers) and
                self.conflict_flags == other.conflict_flags and
                self.fallback_flags == other.fallback_flags)

    def __hash__(self):
        return hash((self.k, self.assignments))

    def __repr__(self):
        return '<ClusterResult K=%d n=%d conflicts=%d fallbacks=%d>' % (
            self.k, len(self), sum(self.conflict_flags),
            sum(self.fallback_flags))


@dataclass(frozen=True, eq=False)
class Intrinsics:
    """ Pinhole intrinsics with radial-tangential distortion (k1 k2 p1 p2 k3). """

    fx: float
    fy: float
    cx: float
    cy: float
    distortion: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ('fx', 'fy', 'cx', 'cy'):
            object.__setattr__(self, name, float(getattr(self, name)))
        _finite(np.array([self.fx, self.fy, self.cx, self.cy]), 'intrinsics')
        if not (self.fx > 0 and self.fy > 0):
            raise SchemaError('focal lengths must be positive (fx=%g, fy=%g)'
                              % (self.fx, self.fy))
        dist = tuple(float(v) for v in self.distortion)
        _finite(np.array(dist), 'distortion')
        if len(dist) != 5:
            raise SchemaError('distortion needs 5 coefficients, got %d'
                              % len(dist))
        object.__setattr__(self, 'distortion', dist)

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def has_distortion(self):
        return any(v != 0.0 for v in self.distortion)

    def __eq__(self, other):
        return (isinstance(other, Intrinsics) and
                (self.fx, self.fy, self.cx, self.cy, self.distortion) ==
                (other.fx, other.fy, other.cx, other.cy, other.distortion))

    def __hash__(self):
        return hash((self.fx, self.fy, self.cx, self.cy, self.distortion))


# rotations read back from 9-digit text are orthonormal only to ~1e-9
ROTATION_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class CameraPose:
    """ Rigid world-to-camera transform: x_cam = rotation @ x_world + translation. """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = _finite(_frozen_array(self.rotation, (3, 3)), 'camera rotation')
        if (abs(np.linalg.det(rot) - 1.0) > ROTATION_TOLERANCE or
                not np.allclose(rot.T @ rot, np.eye(3), atol=ROTATION_TOLERANCE)):
            raise SchemaError('camera rotation is not a proper rotation')
        object.__setattr__(self, 'rotation', rot)
        object.__setattr__(self, 'translation',
                           _finite(_frozen_array(self.translation, (3,)),
                                   'camera translation'))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @property
    def center(self):
        """ Camera center in world coordinates. """
        return -self.rotation.T @ self.translation

    def transform(self, points):
        """ Map world points (n x 3) into the camera frame. """
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def compose(self, relative_rotation, relative_translation):
        """ Return the pose of a camera related to this one by x_b = R x_a + t. """
        rot = orthonormalize(relative_rotation @ self.rotation)
        return CameraPose(rot, relative_rotation @ self.translation +
                          relative_translation)

    def inverse(self):
        return CameraPose(self.rotation.T, -self.rotation.T @ self.translation)

    def scaled(self, scale):
        return CameraPose(self.rotation, self.translation * scale)

    def __eq__(self, other):
        return (isinstance(other, CameraPose) and
                np.array_equal(self.rotation, other.rotation) and
                np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __repr__(self):
        return '<CameraPose center=%s>' % np.array2string(self.center,
                                                          precision=3)


def orthonormalize(rotation):
    """ Project a 3x3 matrix onto the closest rotation. """
    u, _, vt = np.linalg.svd(np.asarray(rotation, dtype=float))
    rot = u @ vt
    if np.linalg.det(rot) < 0:
        u[:, -1] *= -1
        rot = u @ vt
    return rot


@dataclass(frozen=True, eq=False)
class Skeleton3D:
    """ 3D joints of one person in one frame, in meters. """

    person_id: int
    joints3d: np.ndarray
    joint_valid: Tuple[bool, ...]
    frame_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'joints3d',
                           _frozen_array(self.joints3d, (NUM_JOINTS, 3)))
        valid = tuple(bool(v) for v in self.joint_valid)
        if len(valid) != NUM_JOINTS:
            raise SchemaError('joint_valid needs %d entries, got %d'
                              % (NUM_JOINTS, len(valid)))
        object.__setattr__(self, 'joint_valid', valid)

    @property
    def valid_mask(self):
        return np.array(self.joint_valid, dtype=bool)

    def limb_length(self, a, b):
        """ Length of the segment a-b or None if an endpoint is invalid. """
        if not (self.joint_valid[a] and self.joint_valid[b]):
            return None
        return float(np.linalg.norm(self.joints3d[a] - self.joints3d[b]))

    def lower_leg_lengths(self):
        lengths = [self.limb_length(a, b) for a, b in LOWER_LEGS]
        return [v for v in lengths if v is not None]

    def hip_center(self):
        """ Midpoint of the hips, or of all valid joints when a hip is missing. """
        if self.joint_valid[JointId.L_HIP] and self.joint_valid[JointId.R_HIP]:
            return 0.5 * (self.joints3d[JointId.L_HIP] +
                          self.joints3d[JointId.R_HIP])
        mask = self.valid_mask
        if not mask.any():
            return None
        return self.joints3d[mask].mean(axis=0)

    def scaled(self, scale):
        return replace(self, joints3d=self.joints3d * scale)

    def __eq__(self, other):
        return (isinstance(other, Skeleton3D) and
                self.person_id == other.person_id and
                self.frame_id == other.frame_id and
                self.joint_valid == other.joint_valid and
                np.array_equal(self.joints3d, other.joints3d))

    def __hash__(self):
        return hash((self.frame_id, self.person_id))

    def __repr__(self):
        return '<Skeleton3D frame=%d person=%d valid=%d>' % (
            self.frame_id, self.person_id, sum(self.joint_valid))


@dataclass(frozen=True, eq=False)
class Frame:
    """ The detections of all cameras at one time step. """

    frame_id: int
    detections: Tuple[Detection, ...] = field(default_factory=tuple)

    def __post_init__(self):
        detections = tuple(self.detections)
        for d in detections:
            if d.frame_id != self.frame_id:
                raise SchemaError('frame %d holds a detection of frame %d'
                                  % (self.frame_id, d.frame_id))
        object.__setattr__(self, 'detections', detections)

    def __len__(self):
        return len(self.detections)

    def camera_ids(self):
        return sorted({d.camera_id for d in self.detections})

    def __eq__(self, other):
        return (isinstance(other, Frame) and
                self.frame_id == other.frame_id and
                self.detections == other.detections)

    def __hash__(self):
        return hash((self.frame_id, len(self.detections)))
