"""

Short-term single-camera tracking.

Detections of consecutive frames are linked one-to-one by minimum-cost
assignment on feature distance. A track keeps a sliding window of its
last T detections; a track that misses one frame survives, a track that
misses two is closed.

"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.optimize import linear_sum_assignment

from .common import MixedCameraError
from .model import Track

logger = logging.getLogger('mvmatch.tracking')

# a track survives this many frames without a detection
MAX_GAP = 1


@dataclass(frozen=True)
class AssignmentProblem:
    """ Cost of pairing current detections (rows) with previous tracks (columns). """

    cost: np.ndarray

    def __post_init__(self):
        cost = np.asarray(self.cost, dtype=float)
        if cost.ndim != 2:
            cost = cost.reshape(0, 0) if cost.size == 0 else np.atleast_2d(cost)
        if not np.all(np.isfinite(cost)):
            raise ValueError('assignment costs must be finite')
        object.__setattr__(self, 'cost', cost)

    @property
    def shape(self):
        return self.cost.shape


def hungarian(problem):
    """ Return the minimum-cost one-to-one matching as sorted (row, col) pairs. """
    if not isinstance(problem, AssignmentProblem):
        problem = AssignmentProblem(problem)
    if 0 in problem.shape:
        return []
    rows, cols = linear_sum_assignment(problem.cost)
    return sorted(zip(rows.tolist(), cols.tolist()))


def assignment_cost(problem, pairs):
    if not isinstance(problem, AssignmentProblem):
        problem = AssignmentProblem(problem)
    return float(sum(problem.cost[r, c] for r, c in pairs))


def feature_distance(a, b, metric='cosine'):
    """ Distance between two unit features. """
    if metric == 'cosine':
        return float(1.0 - np.dot(a.values, b.values))
    return float(np.linalg.norm(a.values - b.values))


def distance_matrix(detections, tracks, metric='cosine'):
    """ Rows are detections, columns the tracks' latest detections. """
    if not detections or not tracks:
        return np.zeros((len(detections), len(tracks)))
    current = np.vstack([d.feature.values for d in detections])
    previous = np.vstack([t.last.feature.values for t in tracks])
    if metric == 'cosine':
        return 1.0 - current @ previous.T
    diff = current[:, None, :] - previous[None, :, :]
    return np.linalg.norm(diff, axis=2)


def step_tracks(prev_tracks, current, cfg, next_id=None):
    """ Extend `prev_tracks` with the detections of one camera and one frame.

    Matched detections extend their track (dropping the oldest detection
    when the track would exceed cfg.t), matches farther than cfg.gate are
    rejected, unmatched detections open new tracks and unmatched tracks
    older than the gap tolerance are closed. Returns the live tracks:
    extended ones in input order, then surviving unmatched ones, then new
    ones.

    """
    current = list(current)
    cameras = {d.camera_id for d in current} | {t.camera_id for t in prev_tracks}
    if len(cameras) > 1:
        raise MixedCameraError('tracking step mixes cameras %s' % sorted(cameras))
    frames = {d.frame_id for d in current}
    if len(frames) > 1:
        raise MixedCameraError('tracking step mixes frames %s' % sorted(frames))
    if next_id is None:
        next_id = max((t.track_id for t in prev_tracks), default=-1) + 1

    if not current:
        return list(prev_tracks)
    frame_id = current[0].frame_id
    candidates = [t for t in prev_tracks
                  if frame_id - t.last_frame <= MAX_GAP + 1]

    cost = distance_matrix(current, candidates, cfg.distance)
    pairs = hungarian(AssignmentProblem(cost))
    matches = [(r, c) for r, c in pairs if cost[r, c] <= cfg.gate]
    matched_rows = {r for r, _ in matches}
    matched_cols = {c for _, c in matches}
    logger.debug('frame %d: %d detections, %d tracks, %d matches (%d gated)',
                 frame_id, len(current), len(candidates), len(matches),
                 len(pairs) - len(matches))

    extended = dict()
    for r, c in matches:
        track = candidates[c]
        detections = (track.detections + (current[r],))[-cfg.t:]
        extended[c] = Track(track.camera_id, track.track_id, detections)
    result = [extended[c] for c in sorted(extended)]
    result += [t for c, t in enumerate(candidates)
               if c not in matched_cols and frame_id - t.last_frame <= MAX_GAP]
    for r, detection in enumerate(current):
        if r not in matched_rows:
            result.append(Track(detection.camera_id, next_id, (detection,)))
            next_id += 1
    return result


@dataclass
class Tracker:
    """ Runs step_tracks over the frames of one camera and records, for every
    detection, the track it joined and that track's window at that frame.

    """

    camera_id: int
    cfg: object
    tracks: List[Track] = field(default_factory=list)
    next_id: int = 0
    history: dict = field(default_factory=dict)

    def update(self, frame_id, detections, keys=None):
        """ Feed one frame; `keys` identify the detections in `history`. """
        detections = list(detections)
        keys = list(range(len(detections))) if keys is None else list(keys)
        if not detections:
            # still age the tracks
            self.tracks = [t for t in self.tracks
                           if frame_id - t.last_frame <= MAX_GAP]
            return self.tracks
        self.tracks = step_tracks(self.tracks, detections, self.cfg, self.next_id)
        self.next_id = max([self.next_id] +
                           [t.track_id + 1 for t in self.tracks])
        by_detection = {id(t.last): t for t in self.tracks
                        if t.last_frame == frame_id}
        for key, detection in zip(keys, detections):
            self.history[key] = by_detection[id(detection)]
        return self.tracks


def track_camera(frames, camera_id, cfg):
    """ Track one camera through `frames` (a sequence of model.Frame).

    Returns {(frame_id, index in frame): Track window ending at that detection}.

    """
    tracker = Tracker(camera_id, cfg)
    for frame in frames:
        keys, detections = [], []
        for index, detection in enumerate(frame.detections):
            if detection.camera_id == camera_id:
                keys.append((frame.frame_id, index))
                detections.append(detection)
        tracker.update(frame.frame_id, detections, keys)
    logger.info('camera %d: %d tracks over %d frames',
                camera_id, tracker.next_id, len(frames))
    return tracker.history
