"""

The stages of a run, each usable on its own:

    track_scene -> embed_tracks -> match_frames -> reconstruct

Every stage takes and returns plain values that the io module can write,
so a run can be split into separate command line invocations.

"""

import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from . import synth
from .clustering import Sample, match_people
from .common import (ConfigError, DegenerateError, InsufficientInliersError,
                     NoLegObservedError, NonConvergenceError, SchemaError)
from .embedding import embed, normalize_feature
from .geometry import (Observation, align_cameras, build_correspondences,
                       bundle_adjust, cluster_views, estimate_relative_pose,
                       leg_scale, merge_correspondences, normalize_points,
                       set_scale, triangulate)
from .io import Results, TrackAssignment
from .model import NUM_JOINTS, Track
from .signals import Signal
from .tracking import track_camera

logger = logging.getLogger('mvmatch.pipeline')

# emitted with (stage name, summary string) when a stage completes
stage_finished = Signal('stage_finished')


def _map(func, items, jobs):
    """ Ordered map, threaded when jobs > 1. """
    items = list(items)
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


def _finished(name, summary):
    logger.info('%s: %s', name, summary)
    stage_finished(name, summary)


def prepare_scene(scene, cfg):
    """ Apply the configured joint jitter (if any) to the scene's detections. """
    if cfg.noise_window:
        return synth.jitter_scene(scene, cfg.noise_window, cfg.seed)
    return scene


###############################################################################
# tracking and embedding


def track_scene(scene, cfg):
    """ {(frame, index): TrackAssignment} for every detection of the scene. """
    def run(camera):
        return track_camera(scene.frames, camera, cfg)

    tracks = dict()
    for history in _map(run, scene.camera_ids, cfg.jobs):
        for key, track in history.items():
            tracks[key] = TrackAssignment(track.camera_id, track.track_id,
                                          len(track))
    _finished('track', '%d detections in %d tracks' % (
        len(tracks), len({(a.camera_id, a.track_id) for a in tracks.values()})))
    return dict(sorted(tracks.items()))


def track_windows(scene, tracks):
    """ Rebuild the Track window of every detection from its assignment. """
    members = defaultdict(list)
    for frame in scene.frames:
        for index, detection in enumerate(frame.detections):
            key = (frame.frame_id, index)
            if key not in tracks:
                raise SchemaError('frame %d detection %d has no track'
                                  % (frame.frame_id, index))
            a = tracks[key]
            if a.camera_id != detection.camera_id:
                raise SchemaError('frame %d detection %d: track of camera %d '
                                  'for a detection of camera %d'
                                  % (frame.frame_id, index, a.camera_id,
                                     detection.camera_id))
            members[(a.camera_id, a.track_id)].append((key, detection))
    windows = dict()
    for (camera, track_id), entries in members.items():
        detections = [d for _, d in entries]
        for n, (key, _) in enumerate(entries):
            length = tracks[key].length
            if length > n + 1:
                raise SchemaError('track %d of camera %d is shorter than %d'
                                  % (track_id, camera, length))
            windows[key] = Track(camera, track_id, detections[n + 1 - length:n + 1])
    return windows


def embed_tracks(scene, tracks, cfg):
    """ {(frame, index): track feature} with the configured variant.

    The 'none' variant skips temporal aggregation and uses each
    detection's own feature.
    """
    if cfg.embed_variant == 'none':
        embeddings = {(f.frame_id, i): normalize_feature(d.feature)
                      for f in scene.frames for i, d in enumerate(f.detections)}
    else:
        windows = track_windows(scene, tracks)
        embeddings = {key: embed(track.features, cfg.embed_variant)
                      for key, track in sorted(windows.items())}
    _finished('embed', '%d track features (%s)' % (len(embeddings),
                                                   cfg.embed_variant))
    return embeddings


###############################################################################
# matching


def frame_k(scene, frame, cfg):
    """ Number of people to look for in one frame.

    An explicit integer wins. 'auto' prefers the scene's PEOPLE header and
    falls back to the largest per-camera detection count of the frame.
    Without either a ConfigError names the missing --k.
    """
    if cfg.k is not None and cfg.k != 'auto':
        return cfg.k
    if scene.people is not None:
        return scene.people
    if cfg.k == 'auto':
        return max(Counter(d.camera_id for d in frame.detections).values())
    raise ConfigError('the number of people is unknown: pass --k '
                      '(an integer or "auto")')


def frame_samples(frame, embeddings):
    """ Clustering samples of one frame, in detection order. """
    samples = []
    local = defaultdict(int)
    for index, d in enumerate(frame.detections):
        if embeddings is None:
            feature = normalize_feature(d.feature)
        else:
            feature = embeddings[(frame.frame_id, index)]
        samples.append(Sample(feature, d.camera_id, local[d.camera_id]))
        local[d.camera_id] += 1
    return samples


def match_frames(scene, embeddings, cfg):
    """ {frame: ClusterResult} for every frame with detections. """
    frames = [f for f in scene.frames if f.detections]
    n_cameras = scene.n_cameras
    ks = [frame_k(scene, f, cfg) for f in frames]

    def run(item):
        frame, k = item
        samples = frame_samples(frame, embeddings)
        return match_people(samples, k, n_cameras, cfg)

    results = _map(run, zip(frames, ks), cfg.jobs)
    matches = {f.frame_id: r for f, r in zip(frames, results)}
    _finished('match', '%d frames, %d conflicts, %d fallbacks' % (
        len(matches), sum(sum(r.conflict_flags) for r in results),
        sum(sum(r.fallback_flags) for r in results)))
    return matches


def match_scene(scene, cfg):
    """ Tracking, embedding and matching; returns (tracks, embeddings, matches). """
    scene = prepare_scene(scene, cfg)
    tracks = track_scene(scene, cfg)
    embeddings = embed_tracks(scene, tracks, cfg)
    return tracks, embeddings, match_frames(scene, embeddings, cfg)


###############################################################################
# reconstruction


def people(scene, matches):
    """ [(frame, cluster, {camera: detection})] seen by at least two cameras. """
    result = []
    for frame in scene.frames:
        match = matches.get(frame.frame_id)
        if match is None:
            continue
        for cluster, views in sorted(cluster_views(match, frame.detections).items()):
            if len(views) >= 2:
                result.append((frame.frame_id, cluster, views))
    return result


def estimate_cameras(scene, matches, cfg):
    """ Camera poses in the reference camera frame, with metric edges. """
    frames = [f for f in scene.frames if f.frame_id in matches]
    if cfg.window:
        frames = frames[:cfg.window]
    correspondences = []
    for frame in frames:
        correspondences += build_correspondences(
            matches[frame.frame_id], frame.detections, scene.intrinsics,
            cfg.confidence_threshold)
    merged = merge_correspondences(correspondences)

    def run(corr):
        if not corr.usable:
            logger.warning('cameras %d-%d: %d correspondences are too few',
                           corr.camera_a, corr.camera_b, len(corr))
            return None
        try:
            rel = estimate_relative_pose(corr, cfg.ransac_threshold,
                                         cfg.ransac_iterations, cfg.seed)
        except (DegenerateError, InsufficientInliersError) as e:
            logger.warning('%s', e)
            return None
        scale = leg_scale(corr, rel, cfg.lower_leg_length_m)
        if scale is None:
            logger.warning('cameras %d-%d: no lower leg seen by both; '
                           'edge left unscaled', corr.camera_a, corr.camera_b)
            return rel
        return replace(rel, scale=scale)

    estimated = _map(run, merged, cfg.jobs)
    dropped = [c.pair for c, r in zip(merged, estimated) if r is None]
    if dropped:
        logger.warning('%d of %d camera pairs dropped from the pose graph: %s',
                       len(dropped), len(merged), dropped)
    pairwise = [r for r in estimated if r is not None]
    reference = cfg.reference_camera
    if reference is None:
        reference = scene.camera_ids[0]
    elif reference not in scene.intrinsics:
        raise ConfigError('reference camera %d is not in the scene' % reference)
    poses = align_cameras(pairwise, reference, scene.camera_ids, partial=True)
    return poses, reference


def _metric(skeletons, poses, cfg):
    try:
        return set_scale(skeletons, poses, cfg.lower_leg_length_m)
    except NoLegObservedError as e:
        logger.warning('%s; the scale of the camera edges is kept', e)
        return skeletons, poses


def reconstruct(scene, matches, cfg):
    """ Cameras and skeletons from matched detections; returns io.Results. """
    scene = prepare_scene(scene, cfg)
    if cfg.fix_cameras:
        missing = set(scene.camera_ids) - set(scene.truth_cameras)
        if missing:
            raise SchemaError('fixed cameras need ground-truth poses; missing '
                              'for cameras %s' % sorted(missing))
        poses, coordinates = dict(scene.truth_cameras), 'world'
        reference = None
    else:
        poses, reference = estimate_cameras(scene, matches, cfg)
        coordinates = reference

    skeletons, observations = [], []
    for frame_id, cluster, views in people(scene, matches):
        normalized = {c: (normalize_points(d.uv, scene.intrinsics[c]),
                          d.usable_joints(cfg.confidence_threshold))
                      for c, d in views.items()}
        person = len(skeletons)
        skeletons.append(triangulate(normalized, poses, cluster, frame_id))
        for c, d in sorted(views.items()):
            usable = d.usable_joints(cfg.confidence_threshold)
            for j in range(NUM_JOINTS):
                if usable[j]:
                    observations.append(Observation(
                        c, person, j, d.joints2d[j, 0], d.joints2d[j, 1],
                        d.confidence[j]))

    if not cfg.fix_cameras:
        skeletons, poses = _metric(skeletons, poses, cfg)
    try:
        skeletons, poses, rmse = bundle_adjust(
            skeletons, poses, observations, cfg, cfg.fix_cameras,
            scene.intrinsics, reference)
    except NonConvergenceError as e:
        logger.warning('%s; keeping the best iterate', e)
        skeletons, poses, rmse = e.skeletons, e.poses, e.rmse
    if not cfg.fix_cameras:
        skeletons, poses = _metric(skeletons, poses, cfg)
    _finished('reconstruct', '%d skeletons, %d cameras, rmse %.4g' % (
        len(skeletons), len(poses), rmse))
    return Results(matches, poses, skeletons, coordinates, float(rmse))


def run_pipeline(scene, cfg):
    """ All stages in order. """
    scene = prepare_scene(scene, cfg)
    plain = cfg.updated(noise_window=0) if cfg.noise_window else cfg
    _, _, matches = match_scene(scene, plain)
    return reconstruct(scene, matches, plain)
