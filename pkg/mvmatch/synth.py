"""

Seeded synthetic multi-camera scenes.

Cameras stand on a circle and look at its center. People stroll between
random waypoints near their own anchor point; their skeletons keep every
bone length fixed and the lower legs are exactly 0.5 m long. Each
detection is the projection of the true joints, optionally jittered
inside a W x W pixel square, together with an appearance feature built
from a per-person base vector, a per-view offset, per-frame noise and
random sign flips. Base vectors are gaussian by default; with
`negative_fraction` set they are mostly positive, and `attenuation`
weakens each component by a random per-detection gain.

Independent random streams drive motion, appearance, feature noise,
dropout and joint jitter, so changing one setting does not reshuffle the
draws of another. In particular every jitter window uses the same draws,
scaled by W.

"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from . import pipeline
from .common import SpecError
from .config import PipelineConfig
from .model import (CameraPose, Detection, Frame, Intrinsics, Skeleton3D,
                    JointId, NUM_JOINTS)
from .geometry import project_points
from .io import Results, Scene
from .metrics import evaluate

logger = logging.getLogger('mvmatch.synth')

# person frame: x forward, y left, z up; meters
TEMPLATE = np.array([
    [0.0, 0.20, 1.45],   # L shoulder
    [0.0, -0.20, 1.45],  # R shoulder
    [0.0, 0.24, 1.17],   # L elbow
    [0.0, -0.24, 1.17],  # R elbow
    [0.05, 0.26, 0.92],  # L wrist
    [0.05, -0.26, 0.92],  # R wrist
    [0.0, 0.10, 0.95],   # L hip
    [0.0, -0.10, 0.95],  # R hip
    [0.0, 0.10, 0.55],   # L knee
    [0.0, -0.10, 0.55],  # R knee
    [0.0, 0.10, 0.05],   # L ankle
    [0.0, -0.10, 0.05],  # R ankle
])

# joints swung about the hip / shoulder of their side
_LEGS = ((JointId.L_HIP, (JointId.L_KNEE, JointId.L_ANKLE)),
         (JointId.R_HIP, (JointId.R_KNEE, JointId.R_ANKLE)))
_ARMS = ((JointId.L_SHOULDER, (JointId.L_ELBOW, JointId.L_WRIST)),
         (JointId.R_SHOULDER, (JointId.R_ELBOW, JointId.R_WRIST)))

# meters per gait cycle
STRIDE = 1.2

_STREAMS = ('motion', 'appearance', 'features', 'dropout', 'jitter')

# appearance for the embedding ablation: mostly positive activations whose
# strength varies from detection to detection, with random sign flips
FLIP_SCENE = dict(p_flip=0.15, negative_fraction=0.015, attenuation=3.0)


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    # rig
    n_cameras: int = 4
    radius: float = 8.0
    camera_height: float = 2.0
    fx: float = 300.0
    fy: float = 300.0
    width: int = 640
    height: int = 480
    distortion: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0, 0.0)
    # people and motion
    n_people: int = 3
    frames: int = 10
    fps: float = 30.0
    area_radius: float = 2.5
    min_separation: float = 1.5
    stroll_radius: float = 0.4
    speed: float = 1.2
    swing: float = 0.35
    # appearance
    dim: int = 128
    sigma_view: float = 0.05
    sigma_t: float = 0.02
    p_flip: float = 0.0
    confusion_pairs: Tuple[Tuple[int, int], ...] = ()
    confusion_offset: float = 0.05
    # None: symmetric gaussian base vectors; otherwise magnitudes are
    # half-normal and this share of each person's components is negative
    negative_fraction: Optional[float] = None
    # per-detection component gain U(0, 1) ** attenuation; 0 keeps every gain at 1
    attenuation: float = 0.0
    # occlusion and joint noise
    dropout: float = 0.0
    noise_window: int = 0
    confidence: float = 1.0

    def validate(self):
        """ Raise SpecError on an inconsistent spec; return self. """
        if self.n_cameras < 2:
            raise SpecError('need at least two cameras')
        if self.n_people < 1 or self.frames < 1 or self.dim < 1:
            raise SpecError('people, frames and dim must be positive')
        for name in ('sigma_view', 'sigma_t', 'confusion_offset', 'dropout',
                     'stroll_radius', 'speed', 'swing', 'attenuation'):
            if getattr(self, name) < 0:
                raise SpecError('%s must not be negative' % name)
        if not 0.0 <= self.p_flip < 0.5:
            raise SpecError('p_flip must lie in [0, 0.5) (got %g)' % self.p_flip)
        if self.negative_fraction is not None and \
                not 0.0 <= self.negative_fraction <= 1.0:
            raise SpecError('negative_fraction must lie in [0, 1]')
        if not self.dropout < 1.0:
            raise SpecError('dropout must be below 1')
        if self.noise_window < 0 or self.noise_window % 2:
            raise SpecError('noise window must be 0 or a positive even integer '
                            '(got %d)' % self.noise_window)
        if not (self.radius > self.area_radius + self.stroll_radius + 1.0):
            raise SpecError('people must stay well inside the camera circle')
        if not 0.0 < self.confidence <= 1.0:
            raise SpecError('confidence must lie in (0, 1]')
        for a, b in self.confusion_pairs:
            if not (0 <= a < self.n_people and 0 <= b < self.n_people) or a == b:
                raise SpecError('bad confusion pair (%d, %d)' % (a, b))
        if self.n_people > 1 and not self._anchors_fit():
            raise SpecError('%d people do not fit %g m apart in a %g m area'
                            % (self.n_people, self.min_separation,
                               self.area_radius))
        return self

    def _anchors_fit(self):
        # loose packing bound on the disc
        area = np.pi * (self.area_radius + self.min_separation / 2) ** 2
        return self.n_people * np.pi * (self.min_separation / 2) ** 2 <= 0.6 * area


def streams(seed):
    """ One generator per concern, all derived from `seed`. """
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    return {name: np.random.default_rng(child)
            for name, child in zip(_STREAMS, children)}


def look_at(center, target, up=(0.0, 0.0, 1.0)):
    """ Pose of a camera at `center` looking at `target` (x right, y down). """
    center = np.asarray(center, dtype=float)
    forward = np.asarray(target, dtype=float) - center
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.vstack((right, down, forward))
    return CameraPose(rotation, -rotation @ center)


def camera_rig(spec):
    """ {camera id: (CameraPose, Intrinsics)} on a circle around the origin. """
    rig = dict()
    for c in range(spec.n_cameras):
        angle = 2.0 * np.pi * c / spec.n_cameras
        center = (spec.radius * np.cos(angle), spec.radius * np.sin(angle),
                  spec.camera_height)
        pose = look_at(center, (0.0, 0.0, 1.0))
        rig[c] = (pose, Intrinsics(spec.fx, spec.fy, spec.width / 2.0,
                                   spec.height / 2.0, spec.distortion))
    return rig


def _rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_y(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def pose_skeleton(position, heading, phase, swing):
    """ World joints of the template standing at `position` facing `heading`.

    Legs and arms swing rigidly about hip and shoulder, in counter phase.
    """
    joints = TEMPLATE.copy()
    for side, (root, chain) in enumerate(_LEGS):
        rot = _rot_y(swing * np.sin(phase + np.pi * side))
        joints[list(chain)] = (joints[list(chain)] - joints[root]) @ rot.T + joints[root]
    for side, (root, chain) in enumerate(_ARMS):
        rot = _rot_y(-swing * np.sin(phase + np.pi * side))
        joints[list(chain)] = (joints[list(chain)] - joints[root]) @ rot.T + joints[root]
    world = joints @ _rot_z(heading).T
    world[:, :2] += position
    return world


def place_anchors(spec, rng):
    """ Anchor points at least min_separation apart, by rejection sampling. """
    anchors = []
    for _ in range(10000):
        if len(anchors) == spec.n_people:
            break
        r = spec.area_radius * np.sqrt(rng.random())
        a = 2.0 * np.pi * rng.random()
        p = np.array([r * np.cos(a), r * np.sin(a)])
        if all(np.linalg.norm(p - q) >= spec.min_separation for q in anchors):
            anchors.append(p)
    if len(anchors) < spec.n_people:
        raise SpecError('could not place %d people %g m apart'
                        % (spec.n_people, spec.min_separation))
    return anchors


@dataclass
class Stroll:
    """ Constant-speed walk along waypoints around an anchor. """

    waypoints: np.ndarray
    speed: float
    lengths: np.ndarray = field(init=False)

    def __post_init__(self):
        self.lengths = np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)

    def at(self, distance):
        """ (position, heading) after walking `distance` meters. """
        for n, length in enumerate(self.lengths):
            if distance <= length or n == len(self.lengths) - 1:
                a, b = self.waypoints[n], self.waypoints[n + 1]
                step = (b - a) / length if length > 0 else np.zeros(2)
                heading = np.arctan2(step[1], step[0])
                return a + step * min(distance, length), heading
            distance -= length


def strolls(spec, rng):
    result = []
    duration = spec.frames / spec.fps
    for anchor in place_anchors(spec, rng):
        # enough waypoints to cover the whole sequence
        n = 2 + int(np.ceil(spec.speed * duration / max(spec.stroll_radius, 1e-3)))
        angles = 2.0 * np.pi * rng.random(n)
        radii = spec.stroll_radius * np.sqrt(rng.random(n))
        points = anchor + np.column_stack((radii * np.cos(angles),
                                           radii * np.sin(angles)))
        result.append(Stroll(points, spec.speed))
    return result


def appearance(spec, rng):
    """ Unnormalized base vectors (people) and view offsets (people x cameras). """
    scale = 1.0 / np.sqrt(spec.dim)
    base = rng.standard_normal((spec.n_people, spec.dim)) * scale
    if spec.negative_fraction is not None:
        n_negative = int(round(spec.negative_fraction * spec.dim))
        base = np.abs(base)
        for p in range(spec.n_people):
            base[p, rng.permutation(spec.dim)[:n_negative]] *= -1.0
    for a, b in spec.confusion_pairs:
        base[b] = base[a] + spec.confusion_offset * scale * \
            rng.standard_normal(spec.dim)
    offsets = spec.sigma_view * scale * rng.standard_normal(
        (spec.n_people, spec.n_cameras, spec.dim))
    return base, offsets


def jitter_scene(scene, window, seed):
    """ Move every joint uniformly inside a window x window pixel square.

    The draws depend only on `seed` and the order of detections, so
    different windows move the joints along the same directions.
    """
    rng = streams(seed)['jitter']
    frames = []
    for frame in scene.frames:
        detections = []
        for d in frame.detections:
            offsets = window * (rng.random((NUM_JOINTS, 2)) - 0.5)
            joints = np.array(d.joints2d)
            joints[:, :2] += offsets
            detections.append(replace(d, joints2d=joints))
        frames.append(Frame(frame.frame_id, detections))
    return replace(scene, frames=frames)


def _bbox(uv, margin=10.0):
    lo, hi = uv.min(axis=0) - margin, uv.max(axis=0) + margin
    return (lo[0], lo[1], hi[0], hi[1])


def generate(spec):
    """ A Scene with full ground truth, deterministic in spec.seed. """
    spec.validate()
    rng = streams(spec.seed)
    rig = camera_rig(spec)
    walks = strolls(spec, rng['motion'])
    phases = 2.0 * np.pi * rng['motion'].random(spec.n_people)
    base, offsets = appearance(spec, rng['appearance'])

    frames, truth, feasible = [], [], True
    for f in range(spec.frames):
        t = f / spec.fps
        skeletons = []
        for p, walk in enumerate(walks):
            position, heading = walk.at(spec.speed * t)
            phase = phases[p] + 2.0 * np.pi * spec.speed * t / STRIDE
            joints = pose_skeleton(position, heading, phase, spec.swing)
            skeletons.append(joints)
            truth.append(Skeleton3D(p, joints, [True] * NUM_JOINTS, f))
        detections = []
        views = np.zeros(spec.n_people, dtype=int)
        for c, (pose, intrinsics) in rig.items():
            keep = rng['dropout'].random(spec.n_people) >= spec.dropout
            order = rng['dropout'].permutation(spec.n_people)
            for p in order:
                noise = spec.sigma_t / np.sqrt(spec.dim) * \
                    rng['features'].standard_normal(spec.dim)
                flips = rng['features'].random(spec.dim) < spec.p_flip
                gain = rng['features'].random(spec.dim) ** spec.attenuation \
                    if spec.attenuation else 1.0
                if not keep[p]:
                    continue
                raw = (base[p] + offsets[p, c] + noise) * gain
                feature = raw / np.linalg.norm(raw)
                feature[flips] *= -1.0
                uv, _ = project_points(skeletons[p], pose, intrinsics)
                joints = np.column_stack((uv, np.full(NUM_JOINTS, spec.confidence)))
                detections.append(Detection(c, f, _bbox(uv), joints, feature, int(p)))
                views[p] += 1
        if np.any(views < 2):
            feasible = False
        frames.append(Frame(f, detections))

    scene = Scene(spec.dim, {c: k for c, (_, k) in rig.items()}, frames, spec.fps,
                  spec.n_people, feasible, {c: pose for c, (pose, _) in rig.items()},
                  truth)
    if spec.noise_window:
        scene = jitter_scene(scene, spec.noise_window, spec.seed)
    if not feasible:
        logger.warning('scene %d: some person is seen by fewer than two cameras',
                       spec.seed)
    return scene


###############################################################################
# sweeps


def _mean_rows(evaluations):
    """ Mean clustering scores and mean PCP over several evaluations. """
    scores = [e.mean_scores() for e in evaluations]
    scores = [s for s in scores if s is not None]
    mean_scores = tuple(np.mean(scores, axis=0)) if scores else None
    pcps = [e.pcp for e in evaluations if not np.isnan(e.pcp)]
    return mean_scores, (float(np.mean(pcps)) if pcps else float('nan'))


def sweep_noise(base, windows, seeds=(0, 1, 2, 3, 4), cfg=None):
    """ Rows (W, mean scores, mean PCP) with the joint jitter window W.

    Cameras are held at their true poses so the rows measure the effect
    of joint noise on triangulation alone.
    """
    windows = list(windows)
    if windows != sorted(windows):
        raise SpecError('noise windows must be sorted ascending')
    cfg = (cfg or PipelineConfig()).updated(fix_cameras=True)
    rows = []
    for window in windows:
        evaluations = []
        for seed in seeds:
            scene = generate(replace(base, seed=seed, noise_window=0))
            run_cfg = cfg.updated(seed=seed, noise_window=window)
            results = pipeline.run_pipeline(scene, run_cfg)
            evaluations.append(evaluate(scene, results, cfg.pcp_alpha))
        scores, pcp = _mean_rows(evaluations)
        logger.info('noise window %d: PCP %.2f', window, pcp)
        rows.append((window, scores, pcp))
    return rows


def _matching_rows(base, seeds, cfg, variants, warmup=0):
    """ Frames before `warmup` are matched but not scored. """
    rows = []
    for name, changes in variants:
        evaluations = []
        for seed in seeds:
            scene = generate(replace(base, seed=seed, frames=base.frames + warmup))
            _, _, matches = pipeline.match_scene(scene, cfg.updated(seed=seed, **changes))
            scored = {f: m for f, m in matches.items() if f >= warmup}
            evaluations.append(evaluate(scene, Results(scored)))
        scores, _ = _mean_rows(evaluations)
        logger.info('%s: purity %.4f', name, scores[0] if scores else float('nan'))
        rows.append((name, scores, float('nan')))
    return rows


def sweep_embeddings(base, variants=('sign-vote', 'max', 'mean', 'mean-sign-vote'),
                     seeds=tuple(range(20)), cfg=None, warmup=None):
    """ Rows (variant, mean clustering scores, nan) of the embedding ablation.

    Each scene gets `warmup` extra leading frames (default T - 1) that are
    not scored, so every scored detection sits on a full-length track.
    """
    cfg = cfg or PipelineConfig()
    if warmup is None:
        warmup = cfg.t - 1
    return _matching_rows(base, seeds, cfg,
                          [(v, dict(embed_variant=v)) for v in variants], warmup)


def sweep_constraints(base, seeds=tuple(range(20)), cfg=None,
                      methods=('multi-step', 'size-only', 'kmeans')):
    """ Rows (method, mean clustering scores, nan) of the constraint ablation. """
    cfg = cfg or PipelineConfig()
    return _matching_rows(base, seeds, cfg,
                          [(m, dict(clustering=m)) for m in methods])
