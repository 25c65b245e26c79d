"""

Multi-view geometry on matched 2D joints.

Matched people give joint-to-joint correspondences between every pair of
cameras. Each pair yields an essential matrix (eight-point inside RANSAC)
and from it a relative pose. The pairwise poses are chained along a
maximum-inlier spanning tree rooted at a reference camera, joints are
triangulated by DLT, the reconstruction is scaled so that the median lower
leg has a known length and finally all cameras and joints are refined by
bundle adjustment.

Conventions: a camera pose maps world points into the camera frame,
x_cam = R x_world + t. A relative pose (R, t) between cameras a and b
satisfies x_b = R x_a + t, so the essential matrix is E = [t]x R and
x_b^T E x_a = 0 for normalized image points.

"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple, Tuple

import cv2
import networkx as nx
import numpy as np
import scipy.sparse as sp
from scipy.optimize import least_squares
from scipy.sparse.linalg import spsolve
from scipy.spatial.transform import Rotation

from .common import (DegenerateError, InsufficientInliersError,
                     DisconnectedGraphError, BehindCameraError,
                     NoLegObservedError, NonConvergenceError, SchemaError)
from .model import (CameraPose, Skeleton3D, NUM_JOINTS, LOWER_LEGS,
                    orthonormalize, DEFAULT_CONFIDENCE_THRESHOLD)
from .signals import Signal

logger = logging.getLogger('mvmatch.geometry')

# emitted with (iteration, rmse, accepted) after every LM step
ba_step = Signal('ba_step')

MIN_CORRESPONDENCES = 8
MAX_REFITS = 10
# pairs within this many noise levels of the linear fit enter the refinement
REFINE_BAND = 3.0
MAD_TO_SIGMA = 1.4826
_UNDISTORT_CRITERIA = (cv2.TERM_CRITERIA_COUNT | cv2.TERM_CRITERIA_EPS, 50, 1e-12)


def skew(v):
    """ Cross product matrix: skew(a) @ b == np.cross(a, b). """
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


###############################################################################
# Projection


def _undistort(points, matrix, distortion):
    # OpenCV 5 folded the iterative variant into undistortPoints
    if hasattr(cv2, 'undistortPointsIter'):
        return cv2.undistortPointsIter(points, matrix, distortion, None, None,
                                       _UNDISTORT_CRITERIA)
    return cv2.undistortPoints(points, matrix, distortion,
                               criteria=_UNDISTORT_CRITERIA)


def normalize_points(uv, intrinsics):
    """ Pixel coordinates (n x 2) to undistorted normalized image coordinates. """
    uv = np.asarray(uv, dtype=float).reshape(-1, 2)
    if not intrinsics.has_distortion:
        return np.column_stack(((uv[:, 0] - intrinsics.cx) / intrinsics.fx,
                                (uv[:, 1] - intrinsics.cy) / intrinsics.fy))
    pts = _undistort(uv.reshape(-1, 1, 2), intrinsics.matrix,
                     np.array(intrinsics.distortion))
    return pts.reshape(-1, 2)


def project_points(points, pose, intrinsics):
    """ Project world points (n x 3); returns (pixels n x 2, depths n). """
    cam = pose.transform(np.asarray(points, dtype=float).reshape(-1, 3))
    depth = cam[:, 2]
    if not intrinsics.has_distortion:
        with np.errstate(divide='ignore', invalid='ignore'):
            uv = np.column_stack(
                (intrinsics.fx * cam[:, 0] / depth + intrinsics.cx,
                 intrinsics.fy * cam[:, 1] / depth + intrinsics.cy))
        return uv, depth
    rvec, _ = cv2.Rodrigues(np.asarray(pose.rotation))
    uv, _ = cv2.projectPoints(np.asarray(points, dtype=float).reshape(-1, 1, 3),
                              rvec, np.asarray(pose.translation, dtype=float),
                              intrinsics.matrix, np.array(intrinsics.distortion))
    return uv.reshape(-1, 2), depth


def project(point3d, pose, intrinsics):
    """ Pixel (u, v) of one world point. """
    uv, depth = project_points(point3d, pose, intrinsics)
    if not depth[0] > 0.0:
        raise BehindCameraError('point %s has depth %g in the camera'
                                % (np.asarray(point3d).tolist(), depth[0]))
    return float(uv[0, 0]), float(uv[0, 1])


###############################################################################
# Correspondences


@dataclass(frozen=True, eq=False)
class Correspondence:
    """ Matched joints of the same people between cameras a and b.

    Points are undistorted normalized coordinates; `keys` are the
    (frame, cluster, joint) triples the pairs came from.

    """

    camera_a: int
    camera_b: int
    points_a: np.ndarray
    points_b: np.ndarray
    weights: np.ndarray
    keys: Tuple[Tuple[int, int, int], ...] = ()

    def __post_init__(self):
        pa = np.array(self.points_a, dtype=float).reshape(-1, 2)
        pb = np.array(self.points_b, dtype=float).reshape(-1, 2)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if not pa.shape[0] == pb.shape[0] == w.shape[0]:
            raise SchemaError('correspondence lists differ in length '
                              '(%d, %d, %d)' % (pa.shape[0], pb.shape[0],
                                                w.shape[0]))
        keys = tuple(tuple(int(v) for v in k) for k in self.keys)
        if keys and len(keys) != pa.shape[0]:
            raise SchemaError('correspondence has %d keys for %d pairs'
                              % (len(keys), pa.shape[0]))
        for name, arr in (('points_a', pa), ('points_b', pb), ('weights', w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, 'keys', keys)

    def __len__(self):
        return self.points_a.shape[0]

    @property
    def usable(self):
        return len(self) >= MIN_CORRESPONDENCES

    @property
    def pair(self):
        return self.camera_a, self.camera_b

    def subset(self, mask):
        mask = np.asarray(mask)
        keys = tuple(k for k, m in zip(self.keys, mask) if m) if self.keys else ()
        return Correspondence(self.camera_a, self.camera_b, self.points_a[mask],
                              self.points_b[mask], self.weights[mask], keys)

    def __repr__(self):
        return '<Correspondence %d-%d n=%d>' % (self.camera_a, self.camera_b,
                                                len(self))


def cluster_views(result, detections):
    """ {cluster: {camera: detection}} over samples that are not fallbacks.

    A camera that still appears twice in one cluster is left out of it.
    """
    views = defaultdict(dict)
    duplicated = set()
    for i, cluster in enumerate(result.assignments):
        if result.fallback_flags[i]:
            continue
        camera = detections[i].camera_id
        if camera in views[cluster]:
            duplicated.add((cluster, camera))
        views[cluster][camera] = detections[i]
    for cluster, camera in duplicated:
        del views[cluster][camera]
    return views


def build_correspondences(matches, detections, intrinsics,
                          threshold=DEFAULT_CONFIDENCE_THRESHOLD):
    """ Correspondences of one frame's matching, one per camera pair.

    `detections` are the clustered samples in order, `intrinsics` maps
    camera id to Intrinsics. Pairs with fewer than eight points are kept
    but are not usable on their own.

    """
    pairs = defaultdict(lambda: ([], [], [], []))
    for cluster, by_camera in sorted(cluster_views(matches, detections).items()):
        cameras = sorted(by_camera)
        normalized = {c: normalize_points(by_camera[c].uv, intrinsics[c])
                      for c in cameras}
        for ia, a in enumerate(cameras):
            for b in cameras[ia + 1:]:
                da, db = by_camera[a], by_camera[b]
                valid = da.usable_joints(threshold) & db.usable_joints(threshold)
                pa, pb, w, keys = pairs[(a, b)]
                for j in np.flatnonzero(valid):
                    pa.append(normalized[a][j])
                    pb.append(normalized[b][j])
                    w.append(min(da.confidence[j], db.confidence[j]))
                    keys.append((da.frame_id, cluster, int(j)))
    result = []
    for (a, b), (pa, pb, w, keys) in sorted(pairs.items()):
        if not pa:
            continue
        corr = Correspondence(a, b, np.reshape(pa, (-1, 2)), np.reshape(pb, (-1, 2)),
                              w, keys)
        if not corr.usable:
            logger.debug('cameras %d-%d: only %d correspondences', a, b, len(corr))
        result.append(corr)
    return result


def merge_correspondences(correspondences):
    """ Concatenate correspondences per camera pair (e.g. over a frame window). """
    by_pair = defaultdict(list)
    for corr in correspondences:
        by_pair[corr.pair].append(corr)
    merged = []
    for (a, b), group in sorted(by_pair.items()):
        merged.append(Correspondence(
            a, b,
            np.vstack([c.points_a for c in group]),
            np.vstack([c.points_b for c in group]),
            np.concatenate([c.weights for c in group]),
            tuple(k for c in group for k in c.keys)))
    return merged


###############################################################################
# Relative pose


@dataclass(frozen=True, eq=False)
class RelativePose:
    """ x_b = rotation @ x_a + scale * translation_dir """

    camera_a: int
    camera_b: int
    rotation: np.ndarray
    translation_dir: np.ndarray
    inlier_count: int = 0
    mean_error: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=float)
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9):
            raise SchemaError('relative rotation is not orthonormal')
        t = np.array(self.translation_dir, dtype=float)
        if abs(np.linalg.norm(t) - 1.0) > 1e-9:
            raise SchemaError('translation direction must have unit norm')
        rot.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, 'rotation', rot)
        object.__setattr__(self, 'translation_dir', t)

    @property
    def translation(self):
        return self.scale * self.translation_dir

    @property
    def essential(self):
        return skew(self.translation_dir) @ self.rotation

    def inverted(self):
        """ The same relation seen from camera b. """
        rot = self.rotation.T
        return RelativePose(self.camera_b, self.camera_a, rot,
                            -rot @ self.translation_dir, self.inlier_count,
                            self.mean_error, self.scale)

    def __repr__(self):
        return '<RelativePose %d->%d inliers=%d>' % (
            self.camera_a, self.camera_b, self.inlier_count)


def _homogeneous(points):
    return np.column_stack((points, np.ones(points.shape[0])))


def _conditioning(points):
    """ Similarity moving the centroid to 0 and the mean distance to sqrt(2). """
    centroid = points.mean(axis=0)
    spread = np.sqrt(((points - centroid) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / spread if spread > 0 else 1.0
    return np.array([[s, 0.0, -s * centroid[0]],
                     [0.0, s, -s * centroid[1]],
                     [0.0, 0.0, 1.0]])


def essential_projection(e):
    """ Closest matrix with singular values (1, 1, 0). """
    u, _, vt = np.linalg.svd(e)
    return u @ np.diag([1.0, 1.0, 0.0]) @ vt


def eight_point(points_a, points_b):
    """ Essential matrix from >= 8 normalized correspondences. """
    points_a = np.asarray(points_a, dtype=float)
    points_b = np.asarray(points_b, dtype=float)
    if points_a.shape[0] < MIN_CORRESPONDENCES:
        raise DegenerateError('the eight-point algorithm needs %d points, got %d'
                              % (MIN_CORRESPONDENCES, points_a.shape[0]))
    ta, tb = _conditioning(points_a), _conditioning(points_b)
    xa = _homogeneous(points_a) @ ta.T
    xb = _homogeneous(points_b) @ tb.T
    a = np.einsum('ni,nj->nij', xb, xa).reshape(-1, 9)
    _, s, vt = np.linalg.svd(a)
    if s[7] < 1e-10 * s[0]:
        raise DegenerateError('correspondences do not determine an essential '
                              'matrix (rank %d)' % np.sum(s > 1e-10 * s[0]))
    e = vt[-1].reshape(3, 3)
    e = tb.T @ e @ ta
    return essential_projection(e / np.linalg.norm(e))


def sampson_residuals(e, points_a, points_b):
    """ Signed first-order geometric distances to the epipolar constraint. """
    xa = _homogeneous(np.asarray(points_a, dtype=float))
    xb = _homogeneous(np.asarray(points_b, dtype=float))
    exa = xa @ e.T
    etxb = xb @ e
    num = np.sum(xb * exa, axis=1)
    den = exa[:, 0] ** 2 + exa[:, 1] ** 2 + etxb[:, 0] ** 2 + etxb[:, 1] ** 2
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(den > 0, num / np.sqrt(den), 0.0)


def sampson_distance(e, points_a, points_b):
    return np.abs(sampson_residuals(e, points_a, points_b))


def triangulate_pair(rotation, translation, points_a, points_b):
    """ Points in camera a's frame from two views, camera a at the origin. """
    pa = np.hstack((np.eye(3), np.zeros((3, 1))))
    pb = np.hstack((rotation, np.reshape(translation, (3, 1))))
    result = np.empty((len(points_a), 3))
    for n, (xa, xb) in enumerate(zip(points_a, points_b)):
        result[n] = _dlt([pa, pb], [xa, xb])
    return result


def decompose_essential(e):
    """ The four (R, t) candidates of an essential matrix. """
    u, _, vt = np.linalg.svd(e)
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = u[:, 2]
    r1, r2 = u @ w @ vt, u @ w.T @ vt
    return [(r1, t), (r1, -t), (r2, t), (r2, -t)]


def cheirality(rotation, translation, points_a, points_b):
    """ Number of pairs triangulating in front of both cameras. """
    pts = triangulate_pair(rotation, translation, points_a, points_b)
    depth_a = pts[:, 2]
    depth_b = pts @ rotation[2] + translation[2]
    return int(np.sum((depth_a > 0) & (depth_b > 0)))


def _refit_inliers(e, mask, points_a, points_b, threshold):
    """ Eight-point refits on the inliers until the inlier set is stable. """
    for _ in range(MAX_REFITS):
        try:
            refit = eight_point(points_a[mask], points_b[mask])
        except DegenerateError:
            break
        inliers = sampson_distance(refit, points_a, points_b) < threshold
        if inliers.sum() < MIN_CORRESPONDENCES:
            break
        stable = np.array_equal(inliers, mask)
        e, mask = refit, inliers
        if stable:
            break
    return e, mask


def _epipolar_residuals(params, rotation, translation, basis, points_a, points_b):
    rot = Rotation.from_rotvec(params[:3]).as_matrix() @ rotation
    t = translation + basis @ params[3:]
    return sampson_residuals(skew(t / np.linalg.norm(t)) @ rot, points_a, points_b)


def refine_relative_pose(rotation, translation, points_a, points_b, scale):
    """ Sampson least squares over the rotation and translation direction.

    A Huber loss of width `scale` keeps stray matches from pulling the fit.
    Returns (rotation, unit translation).
    """
    translation = translation / np.linalg.norm(translation)
    # two unit vectors orthogonal to the translation
    basis = np.linalg.svd(translation.reshape(1, 3))[2][1:].T
    if len(points_a) < MIN_CORRESPONDENCES:
        return rotation, translation
    fit = least_squares(_epipolar_residuals, np.zeros(5), loss='huber',
                        f_scale=scale, ftol=1e-12, xtol=1e-12, gtol=1e-12,
                        max_nfev=200,
                        args=(rotation, translation, basis, points_a, points_b))
    rot = Rotation.from_rotvec(fit.x[:3]).as_matrix() @ rotation
    t = translation + basis @ fit.x[3:]
    return orthonormalize(rot), t / np.linalg.norm(t)


def estimate_relative_pose(corr, threshold=1e-3, iterations=500, seed=0):
    """ RANSAC over eight-point samples, refit on inliers, cheirality check and
    a final Sampson least-squares refinement. """
    n = len(corr)
    if n < MIN_CORRESPONDENCES:
        raise InsufficientInliersError('cameras %d-%d: %d correspondences, '
                                       'need %d' % (corr.camera_a, corr.camera_b,
                                                    n, MIN_CORRESPONDENCES))
    pa, pb = corr.points_a, corr.points_b
    rng = np.random.default_rng(seed)
    best, best_mask, best_err = None, None, np.inf
    for iteration in range(iterations):
        idx = rng.choice(n, MIN_CORRESPONDENCES, replace=False)
        try:
            e = eight_point(pa[idx], pb[idx])
        except DegenerateError:
            continue
        d = sampson_distance(e, pa, pb)
        mask = d < threshold
        count = int(mask.sum())
        err = float(d[mask].mean()) if count else np.inf
        if best_mask is None or count > best_mask.sum() or (
                count == best_mask.sum() and err < best_err):
            best, best_mask, best_err = e, mask, err
            logger.debug('RANSAC %d-%d iteration %d: %d inliers',
                         corr.camera_a, corr.camera_b, iteration, count)
        if count == n:
            break
    if best is None:
        raise DegenerateError('cameras %d-%d: every minimal sample was degenerate'
                              % (corr.camera_a, corr.camera_b))
    if best_mask.sum() < MIN_CORRESPONDENCES:
        raise InsufficientInliersError('cameras %d-%d: %d inliers, need %d'
                                       % (corr.camera_a, corr.camera_b,
                                          best_mask.sum(), MIN_CORRESPONDENCES))

    best, best_mask = _refit_inliers(best, best_mask, pa, pb, threshold)
    inliers_a, inliers_b = pa[best_mask], pb[best_mask]
    scored = [(cheirality(r, t, inliers_a, inliers_b), k, r, t)
              for k, (r, t) in enumerate(decompose_essential(best))]
    front, _, rotation, translation = max(scored, key=lambda s: (s[0], -s[1]))
    n_in = int(best_mask.sum())
    if 2 * front < n_in:
        raise DegenerateError('cameras %d-%d: only %d of %d inliers in front of '
                              'both cameras' % (corr.camera_a, corr.camera_b,
                                                front, n_in))

    rotation = orthonormalize(rotation)
    translation = translation / np.linalg.norm(translation)
    # noise level from the median residual, never below the threshold
    d = sampson_distance(best, pa, pb)
    spread = max(threshold, MAD_TO_SIGMA * float(np.median(d)))
    near = d < REFINE_BAND * spread
    refined = refine_relative_pose(rotation, translation, pa[near], pb[near],
                                   spread)
    d_refined = sampson_distance(skew(refined[1]) @ refined[0], pa, pb)
    if (d_refined < threshold).sum() >= MIN_CORRESPONDENCES:
        (rotation, translation), best_mask = refined, d_refined < threshold
        d = d_refined
    else:
        logger.warning('cameras %d-%d: refinement lost the inliers; keeping '
                       'the linear estimate', corr.camera_a, corr.camera_b)
        d = sampson_distance(best, pa, pb)
    n_in = int(best_mask.sum())
    rel = RelativePose(corr.camera_a, corr.camera_b, rotation,
                       translation / np.linalg.norm(translation), n_in,
                       float(d[best_mask].mean()))
    logger.debug('cameras %d-%d: %d/%d inliers, mean error %.3g',
                 corr.camera_a, corr.camera_b, n_in, n, rel.mean_error)
    return rel


def leg_scale(corr, rel, lower_leg_length_m):
    """ Scale making this pair's median triangulated lower leg metric.

    Returns None when no knee-ankle pair was observed by both cameras.
    """
    if not corr.keys:
        return None
    by_key = {k: n for n, k in enumerate(corr.keys)}
    lengths = []
    people = sorted({k[:2] for k in corr.keys})
    for frame, cluster in people:
        for knee, ankle in LOWER_LEGS:
            ends = [by_key.get((frame, cluster, int(j))) for j in (knee, ankle)]
            if None in ends:
                continue
            pts = triangulate_pair(rel.rotation, rel.translation_dir,
                                   corr.points_a[ends], corr.points_b[ends])
            if np.all(pts[:, 2] > 0):
                lengths.append(np.linalg.norm(pts[0] - pts[1]))
    if not lengths:
        return None
    median = float(np.median(lengths))
    if not median > 0:
        return None
    return lower_leg_length_m / median


###############################################################################
# Alignment


def align_cameras(pairwise, reference, cameras=(), partial=False):
    """ Camera poses in the reference camera's frame.

    The pose graph keeps the best-supported relative pose per camera pair;
    poses are composed outward from the reference along the maximum
    inlier-weight spanning tree. Returns {camera id: CameraPose}. Cameras
    cut off from the reference raise DisconnectedGraphError, or with
    `partial` are left out of the result.

    """
    graph = nx.Graph()
    graph.add_node(reference)
    graph.add_nodes_from(cameras)
    for rel in sorted(pairwise, key=lambda r: (r.camera_a, r.camera_b)):
        a, b = rel.camera_a, rel.camera_b
        if graph.has_edge(a, b) and graph[a][b]['weight'] >= rel.inlier_count:
            continue
        graph.add_edge(a, b, weight=rel.inlier_count, pose=rel)
    tree = nx.maximum_spanning_tree(graph, weight='weight')
    poses = {reference: CameraPose.identity()}
    for parent, child in nx.bfs_edges(tree, reference):
        rel = tree[parent][child]['pose']
        if rel.camera_a != parent:
            rel = rel.inverted()
        poses[child] = poses[parent].compose(rel.rotation, rel.translation)
    unreachable = set(graph.nodes) - set(poses)
    if unreachable:
        if not partial:
            raise DisconnectedGraphError(unreachable)
        logger.warning('cameras %s are not connected to camera %d and are '
                       'left out', sorted(unreachable), reference)
    logger.debug('spanning tree edges: %s', sorted(tree.edges))
    return dict(sorted(poses.items()))


###############################################################################
# Triangulation and scale


def _dlt(projections, points):
    rows = []
    for p, (x, y) in zip(projections, points):
        rows.append(x * p[2] - p[0])
        rows.append(y * p[2] - p[1])
    _, _, vt = np.linalg.svd(np.array(rows))
    h = vt[-1]
    if abs(h[3]) < 1e-15:
        return np.full(3, np.nan)
    return h[:3] / h[3]


def triangulate_point(points, poses):
    """ DLT of one point from normalized observations in >= 2 cameras. """
    projections = [np.hstack((p.rotation, np.reshape(p.translation, (3, 1))))
                   for p in poses]
    return _dlt(projections, points)


def triangulate(views, poses, person_id=0, frame_id=0):
    """ Skeleton3D from per-camera normalized joints.

    `views` maps camera id to (points 12 x 2, usable mask 12). A joint is
    valid when at least two cameras see it and the triangulated point lies
    in front of all of them.

    """
    joints = np.zeros((NUM_JOINTS, 3))
    valid = [False] * NUM_JOINTS
    cameras = [c for c in sorted(views) if c in poses]
    for j in range(NUM_JOINTS):
        seen = [c for c in cameras if views[c][1][j]]
        if len(seen) < 2:
            continue
        point = triangulate_point([views[c][0][j] for c in seen],
                                  [poses[c] for c in seen])
        if not np.all(np.isfinite(point)):
            continue
        depths = [poses[c].transform(point)[2] for c in seen]
        if min(depths) <= 0.0:
            continue
        joints[j] = point
        valid[j] = True
    return Skeleton3D(person_id, joints, valid, frame_id)


def set_scale(skeletons, poses, lower_leg_length_m):
    """ Scale everything so that the median lower leg is `lower_leg_length_m`. """
    lengths = [v for s in skeletons for v in s.lower_leg_lengths()]
    if not lengths:
        raise NoLegObservedError('no knee-ankle segment was triangulated')
    median = float(np.median(lengths))
    if not median > 0:
        raise NoLegObservedError('lower legs have zero length')
    scale = lower_leg_length_m / median
    logger.debug('scale %.9g from %d lower legs', scale, len(lengths))
    return ([s.scaled(scale) for s in skeletons],
            {c: p.scaled(scale) for c, p in poses.items()})


###############################################################################
# Bundle adjustment


class Observation(NamedTuple):
    """ Pixel observation of joint `joint` of skeletons[person] by a camera. """

    camera_id: int
    person: int
    joint: int
    u: float
    v: float
    weight: float = 1.0


@dataclass
class BundleState:
    """ Current estimate: rotations and translations per camera, one point per
    (skeleton, joint). """

    rotations: dict
    translations: dict
    points: np.ndarray
    point_index: dict = field(default_factory=dict)


class BundleAdjuster:
    """ Levenberg-Marquardt on weighted reprojection error.

    Residuals are measured on undistorted normalized coordinates and scaled
    by the focal lengths, so they are in pixels. Rotations are updated as
    R <- exp([w]x) R with the increment w as parameter. The reference camera
    is held fixed; with `fix_cameras` every camera is.

    """

    def __init__(self, skeletons, poses, observations, intrinsics, cfg,
                 fix_cameras=False, reference=None):
        self.skeletons = list(skeletons)
        self.poses = dict(poses)
        self.cfg = cfg
        self.reference = min(self.poses) if reference is None else reference
        self.free_cameras = [] if fix_cameras else \
            [c for c in sorted(self.poses) if c != self.reference]
        self.camera_index = {c: n for n, c in enumerate(self.free_cameras)}

        point_index = dict()
        for s, skel in enumerate(self.skeletons):
            for j in range(NUM_JOINTS):
                if skel.joint_valid[j]:
                    point_index[(s, j)] = len(point_index)
        obs = [o for o in observations
               if (o.person, o.joint) in point_index and o.camera_id in self.poses
               and o.weight > 0]
        self.observations = obs
        self.n_obs = len(obs)
        self.n_cam_params = 6 * len(self.free_cameras)
        self.n_params = self.n_cam_params + 3 * len(point_index)

        if obs:
            self.obs_camera = [o.camera_id for o in obs]
            self.obs_point = np.array([point_index[(o.person, o.joint)] for o in obs])
            self.measured = np.empty((self.n_obs, 2))
            self.focal = np.empty((self.n_obs, 2))
            by_camera = defaultdict(list)
            for n, o in enumerate(obs):
                by_camera[o.camera_id].append(n)
            for c, rows in by_camera.items():
                uv = np.array([[obs[n].u, obs[n].v] for n in rows])
                self.measured[rows] = normalize_points(uv, intrinsics[c])
                self.focal[rows] = (intrinsics[c].fx, intrinsics[c].fy)
            self.sqrt_w = np.sqrt([o.weight for o in obs])
        points = np.zeros((len(point_index), 3))
        for (s, j), n in point_index.items():
            points[n] = self.skeletons[s].joints3d[j]
        self.state = BundleState(
            {c: np.array(p.rotation) for c, p in self.poses.items()},
            {c: np.array(p.translation) for c, p in self.poses.items()},
            points, point_index)

    def _camera_frame(self, state):
        rot = np.stack([state.rotations[c] for c in self.obs_camera])
        trans = np.stack([state.translations[c] for c in self.obs_camera])
        world = state.points[self.obs_point]
        rotated = np.einsum('nij,nj->ni', rot, world)
        return rotated, rotated + trans

    def residuals(self, state=None):
        """ Weighted pixel residuals, 2 per observation. """
        state = state or self.state
        if not self.n_obs:
            return np.zeros(0)
        _, cam = self._camera_frame(state)
        proj = cam[:, :2] / cam[:, 2:3]
        r = (proj - self.measured) * self.focal * self.sqrt_w[:, None]
        return r.reshape(-1)

    def jacobian(self, state=None):
        """ Sparse analytic Jacobian of residuals() wrt the free parameters. """
        state = state or self.state
        rotated, cam = self._camera_frame(state)
        x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
        scale = self.focal * self.sqrt_w[:, None]
        # d(projection)/d(camera point), 2 x 3 per observation
        dp = np.zeros((self.n_obs, 2, 3))
        dp[:, 0, 0] = 1.0 / z
        dp[:, 0, 2] = -x / z ** 2
        dp[:, 1, 1] = 1.0 / z
        dp[:, 1, 2] = -y / z ** 2
        dp *= scale[:, :, None]

        rows, cols, vals = [], [], []

        def put(n, col0, block):
            for k in range(2):
                rows.extend([2 * n + k] * block.shape[1])
                cols.extend(range(col0, col0 + block.shape[1]))
                vals.extend(block[k])

        for n in range(self.n_obs):
            camera = self.obs_camera[n]
            rot = state.rotations[camera]
            if camera in self.camera_index:
                col = 6 * self.camera_index[camera]
                put(n, col, dp[n] @ -skew(rotated[n]))
                put(n, col + 3, dp[n])
            put(n, self.n_cam_params + 3 * self.obs_point[n], dp[n] @ rot)
        return sp.csr_matrix((vals, (rows, cols)),
                             shape=(2 * self.n_obs, self.n_params))

    def apply(self, state, delta):
        """ New state after the parameter increment `delta`. """
        rotations = dict(state.rotations)
        translations = dict(state.translations)
        for camera, n in self.camera_index.items():
            w = delta[6 * n:6 * n + 3]
            rotations[camera] = Rotation.from_rotvec(w).as_matrix() @ rotations[camera]
            translations[camera] = translations[camera] + delta[6 * n + 3:6 * n + 6]
        points = state.points + delta[self.n_cam_params:].reshape(-1, 3)
        return BundleState(rotations, translations, points, state.point_index)

    def robust_weights(self, residuals):
        """ Per-residual IRLS factors of the Huber loss (all ones when off). """
        if not self.cfg.huber or not residuals.size:
            return np.ones_like(residuals)
        norms = np.linalg.norm(residuals.reshape(-1, 2), axis=1)
        delta = self.cfg.huber_delta
        factor = np.where(norms > delta, np.sqrt(delta / np.maximum(norms, delta)),
                          1.0)
        return np.repeat(factor, 2)

    def cost(self, residuals):
        if not self.cfg.huber:
            return float(residuals @ residuals)
        norms = np.linalg.norm(residuals.reshape(-1, 2), axis=1)
        delta = self.cfg.huber_delta
        return float(np.sum(np.where(norms <= delta, norms ** 2,
                                     2 * delta * norms - delta ** 2)))

    def rmse(self, residuals):
        if not self.n_obs:
            return 0.0
        return float(np.sqrt(residuals @ residuals / self.n_obs))

    def result(self, state=None):
        """ (skeletons, poses) of a state. """
        state = state or self.state
        skeletons = []
        for s, skel in enumerate(self.skeletons):
            joints = np.array(skel.joints3d)
            for j in range(NUM_JOINTS):
                if (s, j) in state.point_index:
                    joints[j] = state.points[state.point_index[(s, j)]]
            skeletons.append(Skeleton3D(skel.person_id, joints, skel.joint_valid,
                                        skel.frame_id))
        poses = {c: CameraPose(orthonormalize(state.rotations[c]),
                               state.translations[c])
                 for c in sorted(self.poses)}
        return skeletons, poses

    def run(self):
        """ Optimize in place; returns (skeletons, poses, rmse). """
        cfg = self.cfg
        r = self.residuals()
        cost = self.cost(r)
        logger.debug('bundle adjustment: %d observations, %d parameters, '
                     'initial rmse %.6g', self.n_obs, self.n_params, self.rmse(r))
        if not self.n_obs or not self.n_params:
            return self.result() + (self.rmse(r),)
        damping = cfg.ba_damping
        for iteration in range(1, cfg.ba_max_iter + 1):
            rho = self.robust_weights(r)
            jac = sp.diags(rho) @ self.jacobian()
            rw = rho * r
            gradient = jac.T @ rw
            if np.max(np.abs(gradient)) < cfg.ba_gradient_tol:
                logger.debug('LM converged: gradient %.3g', np.max(np.abs(gradient)))
                break
            normal = (jac.T @ jac).tocsc()
            diagonal = np.maximum(normal.diagonal(), 1e-12)
            accepted = False
            while True:
                step = -spsolve(normal + sp.diags(damping * diagonal, format='csc'),
                                gradient)
                step_norm = float(np.linalg.norm(step))
                if not np.all(np.isfinite(step)):
                    step_norm = np.inf
                if step_norm < cfg.ba_step_tol:
                    break
                candidate = self.apply(self.state, step)
                r_new = self.residuals(candidate)
                cost_new = self.cost(r_new)
                if np.isfinite(cost_new) and cost_new < cost:
                    self.state, r, cost = candidate, r_new, cost_new
                    damping = max(damping / 10.0, 1e-15)
                    accepted = True
                    break
                damping *= 10.0
                if damping > 1e16:
                    step_norm = 0.0
                    break
            ba_step(iteration, self.rmse(r), accepted)
            logger.debug('LM iteration %d: rmse %.9g, damping %.3g, %s',
                         iteration, self.rmse(r), damping,
                         'accepted' if accepted else 'rejected')
            if step_norm < cfg.ba_step_tol:
                logger.debug('LM converged: step %.3g', step_norm)
                break
        else:
            skeletons, poses = self.result()
            raise NonConvergenceError(
                'bundle adjustment did not converge in %d iterations (rmse %.6g)'
                % (cfg.ba_max_iter, self.rmse(r)), skeletons, poses, self.rmse(r))
        logger.info('bundle adjustment: rmse %.6g over %d observations',
                    self.rmse(r), self.n_obs)
        return self.result() + (self.rmse(r),)


def bundle_adjust(skeletons, poses, observations, cfg, fix_cameras=False,
                  intrinsics=None, reference=None):
    """ Refine cameras and joints; returns (skeletons, poses, final rmse). """
    if intrinsics is None:
        raise ValueError('bundle adjustment needs camera intrinsics')
    return BundleAdjuster(skeletons, poses, observations, intrinsics, cfg,
                          fix_cameras, reference).run()
