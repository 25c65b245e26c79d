"""

Text formats for scenes, intermediate stage outputs and results.

Every file is a sequence of records, one per line, each starting with an
upper-case keyword. `#` starts a comment. The first record names the file
type and format version (`SCENE 1`, `RESULTS 1`, ...). Scenes and the
intermediate files (tracks, embeddings, matches) store floats exactly, so
stages can be chained through files without changing any result. Results
files use 9 significant digits.

The path '-' means standard input or standard output.

"""

import logging
import sys
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, Union

import numpy as np
from pyparsing import (Group, Keyword, Literal, MatchFirst, OneOrMore,
                       ParseException, Regex, ZeroOrMore)

from .common import IoError, ParseError, SchemaError
from .model import (CameraPose, ClusterResult, Detection, FeatureVector, Frame,
                    Intrinsics, Skeleton3D, NUM_JOINTS)

logger = logging.getLogger('mvmatch.io')

FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class Scene:
    """ Detections of all cameras and frames plus optional ground truth. """

    dim: int
    intrinsics: Dict[int, Intrinsics]
    frames: Tuple[Frame, ...]
    fps: float = 30.0
    people: Optional[int] = None
    feasible: bool = True
    truth_cameras: Dict[int, CameraPose] = field(default_factory=dict)
    truth_skeletons: Tuple[Skeleton3D, ...] = ()
    version: int = FORMAT_VERSION

    def __post_init__(self):
        object.__setattr__(self, 'intrinsics', dict(sorted(self.intrinsics.items())))
        object.__setattr__(self, 'frames', tuple(self.frames))
        object.__setattr__(self, 'truth_cameras',
                           dict(sorted(self.truth_cameras.items())))
        object.__setattr__(self, 'truth_skeletons', tuple(self.truth_skeletons))
        previous = None
        for frame in self.frames:
            if previous is not None and frame.frame_id <= previous:
                raise SchemaError('frame %d follows frame %d'
                                  % (frame.frame_id, previous))
            previous = frame.frame_id
            for d in frame.detections:
                if d.camera_id not in self.intrinsics:
                    raise SchemaError('frame %d: camera %d is not in the header'
                                      % (frame.frame_id, d.camera_id))
                if d.feature.dim != self.dim:
                    raise SchemaError('frame %d: feature of dimension %d, '
                                      'expected %d' % (frame.frame_id,
                                                       d.feature.dim, self.dim))

    @property
    def camera_ids(self):
        return list(self.intrinsics)

    @property
    def n_cameras(self):
        return len(self.intrinsics)

    def frame(self, frame_id):
        for f in self.frames:
            if f.frame_id == frame_id:
                return f
        raise KeyError(frame_id)

    def __eq__(self, other):
        return (isinstance(other, Scene) and
                (self.version, self.dim, self.fps, self.people, self.feasible) ==
                (other.version, other.dim, other.fps, other.people,
                 other.feasible) and
                self.intrinsics == other.intrinsics and
                self.frames == other.frames and
                self.truth_cameras == other.truth_cameras and
                self.truth_skeletons == other.truth_skeletons)

    def __repr__(self):
        return '<Scene cameras=%d frames=%d D=%d>' % (
            self.n_cameras, len(self.frames), self.dim)


@dataclass(frozen=True, eq=False)
class Results:
    """ Matching, cameras and skeletons of a pipeline run.

    `coordinates` is 'world' when the cameras were given, otherwise the id
    of the reference camera whose frame the reconstruction lives in.
    """

    matches: Dict[int, ClusterResult] = field(default_factory=dict)
    cameras: Dict[int, CameraPose] = field(default_factory=dict)
    skeletons: Tuple[Skeleton3D, ...] = ()
    coordinates: Union[str, int] = 'world'
    rmse: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, 'matches', dict(sorted(self.matches.items())))
        object.__setattr__(self, 'cameras', dict(sorted(self.cameras.items())))
        object.__setattr__(self, 'skeletons', tuple(
            sorted(self.skeletons, key=lambda s: (s.frame_id, s.person_id))))

    def __eq__(self, other):
        return (isinstance(other, Results) and
                self.coordinates == other.coordinates and
                self.matches == other.matches and
                self.cameras == other.cameras and
                self.skeletons == other.skeletons and
                self.rmse == other.rmse)


###############################################################################
# low level helpers


def _read_lines(path):
    if path == '-':
        return sys.stdin.read().splitlines()
    try:
        with open(path, 'r') as f:
            return f.read().splitlines()
    except OSError as e:
        raise IoError('cannot read "%s": %s' % (path, e)) from e


def write_text(path, text):
    if path == '-':
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    try:
        with open(path, 'w') as f:
            f.write(text)
    except OSError as e:
        raise IoError('cannot write "%s": %s' % (path, e)) from e


def _exact(values):
    return ' '.join(repr(float(v)) for v in np.ravel(values))


def _short(values):
    return ' '.join('%.9g' % v for v in np.ravel(values))


def _mask(flags):
    return ''.join('1' if f else '0' for f in flags)


def _records(lines, grammar, source):
    """ Yield (line number, parsed tokens) for the non-empty lines. """
    for line_no, line in enumerate(lines, 1):
        line = line.partition('#')[0].strip()
        if not line:
            continue
        try:
            tokens = grammar.parse_string(line, parse_all=True)
        except ParseException as e:
            raise ParseError('%s:%d: cannot parse "%s": %s'
                             % (source, line_no, _clip(line), e)) from e
        yield line_no, tokens


def _clip(line, width=60):
    return line if len(line) <= width else line[:width] + '...'


def _located(source, line_no, e):
    """ A SchemaError with the record location prepended. """
    return SchemaError('%s:%d: %s' % (source, line_no, e))


def _header(records, kind, source):
    try:
        line_no, tokens = next(records)
    except StopIteration:
        raise ParseError('%s: empty file' % source) from None
    if tokens[0] != kind:
        raise ParseError('%s:%d: expected a %s header, got %s'
                         % (source, line_no, kind, tokens[0]))
    if tokens[1] != FORMAT_VERSION:
        raise SchemaError('%s:%d: unsupported %s format version %d'
                          % (source, line_no, kind, tokens[1]))


###############################################################################
# scene files


def scene_text(scene):
    """ Serialize a scene with exact floats. """
    lines = ['SCENE %d' % scene.version,
             'DIM %d' % scene.dim,
             'CAMERAS %d' % scene.n_cameras,
             'FPS %r' % float(scene.fps)]
    if scene.people is not None:
        lines.append('PEOPLE %d' % scene.people)
    if not scene.feasible:
        lines.append('FEASIBLE 0')
    for camera, k in scene.intrinsics.items():
        lines.append('INTRINSICS %d %s' % (camera, _exact(
            (k.fx, k.fy, k.cx, k.cy) + k.distortion)))
    for frame in scene.frames:
        lines.append('FRAME %d' % frame.frame_id)
        for d in frame.detections:
            hint = '-' if d.person_hint is None else '%d' % d.person_hint
            lines.append('DETECTION %d %s %s %s %s' % (
                d.camera_id, hint, _exact(d.bbox), _exact(d.joints2d),
                _exact(d.feature.values)))
    for camera, pose in scene.truth_cameras.items():
        lines.append('TRUTH_CAMERA %d %s %s' % (
            camera, _exact(pose.rotation), _exact(pose.translation)))
    for s in scene.truth_skeletons:
        lines.append('TRUTH_SKELETON %d %d %s %s' % (
            s.frame_id, s.person_id, _mask(s.joint_valid), _exact(s.joints3d)))
    return '\n'.join(lines) + '\n'


def write_scene(path, scene):
    write_text(path, scene_text(scene))


def parse_scene(lines, source='<scene>'):
    """ Build a validated Scene from the lines of a scene file. """
    records = _records(lines, _scene_record, source)
    _header(records, 'SCENE', source)
    header = dict()
    intrinsics = dict()
    frames = []
    current = None
    truth_cameras = dict()
    truth_skeletons = []

    def close_frame():
        if current is not None:
            frames.append(Frame(current[0], current[1]))

    for line_no, t in records:
        kind = t[0]
        try:
            if kind in ('DIM', 'CAMERAS', 'PEOPLE', 'FEASIBLE', 'FPS'):
                if frames or current is not None:
                    raise SchemaError('%s must precede the frames' % kind)
                if kind == 'FPS' and not (np.isfinite(t[1]) and t[1] > 0):
                    raise SchemaError('FPS must be a positive number')
                header[kind] = t[1]
            elif kind == 'INTRINSICS':
                values = list(t['values'])
                if t['camera'] in intrinsics:
                    raise SchemaError('camera %d defined twice' % t['camera'])
                intrinsics[t['camera']] = Intrinsics(*values[:4], values[4:])
            elif kind == 'FRAME':
                close_frame()
                if frames and t[1] <= frames[-1].frame_id:
                    raise SchemaError('frame %d follows frame %d'
                                      % (t[1], frames[-1].frame_id))
                current = (t[1], [])
            elif kind == 'DETECTION':
                if current is None:
                    raise SchemaError('detection outside of a frame')
                camera = t['camera']
                if camera not in intrinsics:
                    raise SchemaError('camera %d is not in the header' % camera)
                hint = None if t['hint'] == '-' else t['hint']
                feature = FeatureVector(list(t['feature']))
                if 'DIM' in header and feature.dim != header['DIM']:
                    raise SchemaError('feature of dimension %d, expected %d'
                                      % (feature.dim, header['DIM']))
                current[1].append(Detection(
                    camera, current[0], list(t['bbox']),
                    np.reshape(list(t['joints']), (NUM_JOINTS, 3)), feature, hint))
            elif kind == 'TRUTH_CAMERA':
                if t['camera'] not in intrinsics:
                    raise SchemaError('truth for camera %d which is not in the '
                                      'header' % t['camera'])
                values = list(t['values'])
                truth_cameras[t['camera']] = CameraPose(
                    np.reshape(values[:9], (3, 3)), values[9:])
            elif kind == 'TRUTH_SKELETON':
                truth_skeletons.append(Skeleton3D(
                    t['person'], np.reshape(list(t['joints']), (NUM_JOINTS, 3)),
                    [c == '1' for c in t['mask']], t['frame']))
        except SchemaError as e:
            raise _located(source, line_no, e) from e
    close_frame()

    for key in ('DIM', 'CAMERAS'):
        if key not in header:
            raise SchemaError('%s: missing %s record' % (source, key))
    if header['CAMERAS'] != len(intrinsics):
        raise SchemaError('%s: header announces %d cameras but %d have '
                          'intrinsics' % (source, header['CAMERAS'],
                                          len(intrinsics)))
    scene = Scene(header['DIM'], intrinsics, frames, header.get('FPS', 30.0),
                  header.get('PEOPLE'), bool(header.get('FEASIBLE', 1)),
                  truth_cameras, truth_skeletons)
    logger.debug('%s: %d cameras, %d frames', source, scene.n_cameras,
                 len(scene.frames))
    return scene


def read_scene(path):
    return parse_scene(_read_lines(path), source=path)


###############################################################################
# results files


def results_text(results):
    """ Deterministic text of a Results value, 9 significant digits. """
    lines = ['RESULTS %d' % FORMAT_VERSION]
    if results.coordinates == 'world':
        lines.append('COORDINATES world')
    else:
        lines.append('COORDINATES camera %d' % results.coordinates)
    lines.append('SECTION MATCHES')
    for frame_id, result in results.matches.items():
        for sample, cluster in enumerate(result.assignments):
            lines.append('MATCH %d %d %d' % (frame_id, sample, cluster))
    lines.append('SECTION CENTERS')
    for frame_id, result in results.matches.items():
        for cluster, center in enumerate(result.centers):
            lines.append('CENTER %d %d %s' % (frame_id, cluster, _short(center)))
    lines.append('SECTION CAMERAS')
    for camera, pose in results.cameras.items():
        lines.append('CAMERA %d %s %s' % (camera, _short(pose.rotation),
                                          _short(pose.translation)))
    lines.append('SECTION SKELETONS')
    for s in results.skeletons:
        lines.append('SKELETON %d %d %s %s' % (s.frame_id, s.person_id,
                                               _mask(s.joint_valid),
                                               _short(s.joints3d)))
    lines.append('SECTION DIAGNOSTICS')
    for frame_id, result in results.matches.items():
        for sample in range(len(result)):
            lines.append('FLAGS %d %d %d %d' % (
                frame_id, sample, result.conflict_flags[sample],
                result.fallback_flags[sample]))
    if results.rmse is not None:
        lines.append('RMSE %s' % _short([results.rmse]))
    return '\n'.join(lines) + '\n'


def write_results(path, results):
    write_text(path, results_text(results))


def _cluster_results(assignments, centers, flags, source):
    """ {frame: ClusterResult} from per-frame record dicts. """
    matches = dict()
    for frame_id in sorted(set(assignments) | set(centers)):
        rows = assignments.get(frame_id, {})
        if sorted(rows) != list(range(len(rows))):
            raise SchemaError('%s: frame %d has non-contiguous sample indices'
                              % (source, frame_id))
        frame_centers = centers.get(frame_id, {})
        if sorted(frame_centers) != list(range(len(frame_centers))):
            raise SchemaError('%s: frame %d has non-contiguous cluster indices'
                              % (source, frame_id))
        frame_flags = flags.get(frame_id, {})
        conflict = [frame_flags.get(i, (0, 0))[0] for i in range(len(rows))]
        fallback = [frame_flags.get(i, (0, 0))[1] for i in range(len(rows))]
        center_rows = [frame_centers[k] for k in range(len(frame_centers))]
        dim = len(center_rows[0]) if center_rows else 0
        matches[frame_id] = ClusterResult(
            len(center_rows), [rows[i] for i in range(len(rows))],
            np.reshape(center_rows, (len(center_rows), dim)), conflict, fallback)
    return matches


def parse_results(lines, source='<results>'):
    records = _records(lines, _results_record, source)
    _header(records, 'RESULTS', source)
    coordinates = 'world'
    assignments = defaultdict(dict)
    centers = defaultdict(dict)
    flags = defaultdict(dict)
    cameras = dict()
    skeletons = []
    rmse = None
    for line_no, t in records:
        kind = t[0]
        try:
            if kind == 'COORDINATES':
                coordinates = 'world' if t[1] == 'world' else t[2]
            elif kind == 'MATCH':
                assignments[t[1]][t[2]] = t[3]
            elif kind == 'CENTER':
                centers[t['frame']][t['index']] = list(t['values'])
            elif kind == 'CAMERA':
                values = list(t['values'])
                cameras[t['camera']] = CameraPose(np.reshape(values[:9], (3, 3)),
                                                  values[9:])
            elif kind == 'SKELETON':
                skeletons.append(Skeleton3D(
                    t['person'], np.reshape(list(t['joints']), (NUM_JOINTS, 3)),
                    [c == '1' for c in t['mask']], t['frame']))
            elif kind == 'FLAGS':
                flags[t[1]][t[2]] = (bool(t[3]), bool(t[4]))
            elif kind == 'RMSE':
                rmse = t[1]
        except SchemaError as e:
            raise _located(source, line_no, e) from e
    return Results(_cluster_results(assignments, centers, flags, source),
                   cameras, skeletons, coordinates, rmse)


def read_results(path):
    return parse_results(_read_lines(path), source=path)


###############################################################################
# intermediate files


@dataclass(frozen=True)
class TrackAssignment:
    """ The track a detection joined and the length of its window there. """

    camera_id: int
    track_id: int
    length: int


def tracks_text(tracks):
    """ `tracks` maps (frame, index in frame) to TrackAssignment. """
    lines = ['TRACKS %d' % FORMAT_VERSION]
    for (frame_id, index), a in sorted(tracks.items()):
        lines.append('ASSIGN %d %d %d %d %d' % (frame_id, index, a.camera_id,
                                                a.track_id, a.length))
    return '\n'.join(lines) + '\n'


def parse_tracks(lines, source='<tracks>'):
    records = _records(lines, _tracks_record, source)
    _header(records, 'TRACKS', source)
    tracks = dict()
    for line_no, t in records:
        if t[5] < 1:
            raise _located(source, line_no, 'track window must not be empty')
        tracks[(t[1], t[2])] = TrackAssignment(t[3], t[4], t[5])
    return tracks


def embeddings_text(embeddings, variant):
    """ `embeddings` maps (frame, index in frame) to a FeatureVector. """
    lines = ['EMBEDDINGS %d' % FORMAT_VERSION, 'VARIANT %s' % variant]
    for (frame_id, index), feature in sorted(embeddings.items()):
        lines.append('EMBED %d %d %s' % (frame_id, index, _exact(feature.values)))
    return '\n'.join(lines) + '\n'


def parse_embeddings(lines, source='<embeddings>'):
    """ Returns (embeddings, variant). """
    records = _records(lines, _embeddings_record, source)
    _header(records, 'EMBEDDINGS', source)
    variant = None
    embeddings = dict()
    for line_no, t in records:
        if t[0] == 'VARIANT':
            variant = t[1]
        else:
            embeddings[(t['frame'], t['index'])] = FeatureVector(list(t['values']))
    return embeddings, variant


def matches_text(matches):
    """ `matches` maps frame id to ClusterResult; floats are exact. """
    lines = ['MATCHES %d' % FORMAT_VERSION]
    for frame_id, result in sorted(matches.items()):
        for sample, cluster in enumerate(result.assignments):
            lines.append('MATCH %d %d %d' % (frame_id, sample, cluster))
            lines.append('FLAGS %d %d %d %d' % (
                frame_id, sample, result.conflict_flags[sample],
                result.fallback_flags[sample]))
        for cluster, center in enumerate(result.centers):
            lines.append('CENTER %d %d %s' % (frame_id, cluster, _exact(center)))
    return '\n'.join(lines) + '\n'


def parse_matches(lines, source='<matches>'):
    records = _records(lines, _matches_record, source)
    _header(records, 'MATCHES', source)
    assignments = defaultdict(dict)
    centers = defaultdict(dict)
    flags = defaultdict(dict)
    for _, t in records:
        if t[0] == 'MATCH':
            assignments[t[1]][t[2]] = t[3]
        elif t[0] == 'FLAGS':
            flags[t[1]][t[2]] = (bool(t[3]), bool(t[4]))
        else:
            centers[t['frame']][t['index']] = list(t['values'])
    return _cluster_results(assignments, centers, flags, source)


def _reader(parse):
    def read(path):
        return parse(_read_lines(path), source=path)
    read.__doc__ = 'Read a file with %s.' % parse.__name__
    return read


def _writer(text):
    def write(path, *args):
        write_text(path, text(*args))
    write.__doc__ = 'Write the output of %s to a file.' % text.__name__
    return write


read_tracks = _reader(parse_tracks)
read_embeddings = _reader(parse_embeddings)
read_matches = _reader(parse_matches)
write_tracks = _writer(tracks_text)
write_embeddings = _writer(embeddings_text)
write_matches = _writer(matches_text)


def guess_kind(lines):
    """ The header keyword of a file's lines ('SCENE', 'MATCHES', ...). """
    for line in lines:
        line = line.partition('#')[0].strip()
        if line:
            return line.split()[0]
    raise ParseError('empty file')


# ########################## parsing related functions ######################## #

def _to_int(tokens):
    return int(tokens[0])


def _to_float(tokens):
    return float(tokens[0])


_int = Regex(r'[+-]?\d+(?![\d.eE])').set_parse_action(_to_int)
_real = Regex(r'[+-]?(?:nan|inf|(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)'
              ).set_parse_action(_to_float)
_flag = Regex(r'[01](?![\d.eE])').set_parse_action(_to_int)
_joint_mask = Regex(r'[01]{%d}(?!\d)' % NUM_JOINTS)
_name = Regex(r'[a-z][a-z-]*')


def _kw(name):
    return Keyword(name)


def _version(kind):
    return _kw(kind) + _int


_scene_record = MatchFirst([
    _version('SCENE'),
    _kw('DIM') + _int,
    _kw('CAMERAS') + _int,
    _kw('PEOPLE') + _int,
    _kw('FEASIBLE') + _flag,
    _kw('FPS') + _real,
    _kw('INTRINSICS') + _int('camera') + Group(_real * 9)('values'),
    _kw('FRAME') + _int,
    _kw('DETECTION') + _int('camera') + (_int | Literal('-'))('hint') +
    Group(_real * 4)('bbox') + Group(_real * (3 * NUM_JOINTS))('joints') +
    Group(OneOrMore(_real))('feature'),
    _kw('TRUTH_CAMERA') + _int('camera') + Group(_real * 12)('values'),
    _kw('TRUTH_SKELETON') + _int('frame') + _int('person') + _joint_mask('mask') +
    Group(_real * (3 * NUM_JOINTS))('joints'),
])

_center = (_kw('CENTER') + _int('frame') + _int('index') +
           Group(ZeroOrMore(_real))('values'))
_match = _kw('MATCH') + _int + _int + _int
_flags = _kw('FLAGS') + _int + _int + _flag + _flag

_results_record = MatchFirst([
    _version('RESULTS'),
    _kw('COORDINATES') + (_kw('world') | _kw('camera') + _int),
    _kw('SECTION') + (_kw('MATCHES') | _kw('CENTERS') | _kw('CAMERAS') |
                      _kw('SKELETONS') | _kw('DIAGNOSTICS')),
    _match,
    _center,
    _kw('CAMERA') + _int('camera') + Group(_real * 12)('values'),
    _kw('SKELETON') + _int('frame') + _int('person') + _joint_mask('mask') +
    Group(_real * (3 * NUM_JOINTS))('joints'),
    _flags,
    _kw('RMSE') + _real,
])

_tracks_record = MatchFirst([
    _version('TRACKS'),
    _kw('ASSIGN') + _int + _int + _int + _int + _int,
])

_embeddings_record = MatchFirst([
    _version('EMBEDDINGS'),
    _kw('VARIANT') + _name,
    _kw('EMBED') + _int('frame') + _int('index') + Group(OneOrMore(_real))('values'),
])

_matches_record = MatchFirst([
    _version('MATCHES'),
    _match,
    _flags,
    _center,
])
