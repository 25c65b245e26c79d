"""

Evaluation against ground truth: clustering agreement (Purity, Rand index,
adjusted Rand index, pairwise F-score) and Percentage of Correct Parts of
reconstructed skeletons.

"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np
from sklearn.metrics import adjusted_rand_score, rand_score
from sklearn.metrics.cluster import contingency_matrix, pair_confusion_matrix

from .common import LengthMismatchError, SchemaError
from .model import LIMBS

logger = logging.getLogger('mvmatch.metrics')

DEFAULT_PCP_ALPHA = 0.5


@dataclass(frozen=True, eq=False)
class ContingencyTable:
    """ counts[k, j]: samples in predicted cluster k with true label j. """

    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.ndim != 2 or np.any(counts < 0):
            raise SchemaError('contingency counts must be a non-negative matrix')
        counts.setflags(write=False)
        object.__setattr__(self, 'counts', counts)

    @classmethod
    def from_labels(cls, pred, truth):
        # sklearn puts the true classes on the rows
        return cls(contingency_matrix(truth, pred).T)

    @property
    def total(self):
        return int(self.counts.sum())

    def purity(self):
        return float(self.counts.max(axis=1).sum() / self.total)


class ClusteringScores(NamedTuple):
    purity: float
    ri: float
    ari: float
    f_score: float


def _check_labels(pred, truth):
    pred, truth = list(pred), list(truth)
    if len(pred) != len(truth):
        raise LengthMismatchError('%d predicted labels for %d true labels'
                                  % (len(pred), len(truth)))
    if len(pred) < 2:
        raise LengthMismatchError('clustering scores need at least two samples')
    return pred, truth


def pairwise_f_score(pred, truth):
    """ Harmonic mean of pairwise precision and recall.

    Precision is 1 when no pair is predicted together, recall is 1 when no
    pair belongs together.
    """
    pred, truth = _check_labels(pred, truth)
    (tn, fp), (fn, tp) = pair_confusion_matrix(truth, pred) // 2
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def clustering_scores(pred, truth):
    """ (purity, ri, ari, f_score) of predicted labels against true labels. """
    pred, truth = _check_labels(pred, truth)
    table = ContingencyTable.from_labels(pred, truth)
    return ClusteringScores(table.purity(),
                            float(rand_score(truth, pred)),
                            float(adjusted_rand_score(truth, pred)),
                            pairwise_f_score(pred, truth))


class PcpScore(NamedTuple):
    """ Per-limb verdicts (None: not evaluated) and their counts. """

    limbs: Tuple[Optional[bool], ...]
    correct: int
    evaluated: int

    @property
    def percentage(self):
        if not self.evaluated:
            return float('nan')
        return 100.0 * self.correct / self.evaluated


def pcp(pred, truth, alpha=DEFAULT_PCP_ALPHA):
    """ Percentage of Correct Parts of one skeleton.

    A limb is correct when both predicted endpoints are strictly closer
    than alpha times the true limb length to their true positions.
    """
    limbs = []
    for a, b in LIMBS:
        if not (pred.joint_valid[a] and pred.joint_valid[b] and
                truth.joint_valid[a] and truth.joint_valid[b]):
            limbs.append(None)
            continue
        length = np.linalg.norm(truth.joints3d[a] - truth.joints3d[b])
        err_a = np.linalg.norm(pred.joints3d[a] - truth.joints3d[a])
        err_b = np.linalg.norm(pred.joints3d[b] - truth.joints3d[b])
        limbs.append(bool(err_a < alpha * length and err_b < alpha * length))
    evaluated = [v for v in limbs if v is not None]
    return PcpScore(tuple(limbs), sum(evaluated), len(evaluated))


def missed(truth):
    """ PCP of a true skeleton that no prediction was matched to. """
    limbs = [False if truth.joint_valid[a] and truth.joint_valid[b] else None
             for a, b in LIMBS]
    return PcpScore(tuple(limbs), 0, sum(v is not None for v in limbs))


def match_skeletons(pred, truth):
    """ Greedy one-to-one matching by ascending hip-center distance.

    Returns [(pred index, truth index)] sorted by truth index.
    """
    candidates = []
    for i, p in enumerate(pred):
        hp = p.hip_center()
        if hp is None:
            continue
        for j, t in enumerate(truth):
            ht = t.hip_center()
            if ht is None:
                continue
            candidates.append((float(np.linalg.norm(hp - ht)), i, j))
    used_pred, used_truth, pairs = set(), set(), []
    for _, i, j in sorted(candidates):
        if i in used_pred or j in used_truth:
            continue
        used_pred.add(i)
        used_truth.add(j)
        pairs.append((i, j))
    return sorted(pairs, key=lambda p: p[1])


@dataclass(frozen=True)
class FrameScore:
    frame_id: int
    scores: Optional[ClusteringScores]
    pcp: Optional[float]


@dataclass(frozen=True)
class Evaluation:
    frames: Tuple[FrameScore, ...]
    per_person: Dict[int, float] = field(default_factory=dict)
    pcp: float = float('nan')

    def mean_scores(self):
        rows = [f.scores for f in self.frames if f.scores is not None]
        if not rows:
            return None
        return ClusteringScores(*(float(v) for v in np.mean(rows, axis=0)))


def truth_in(skeleton, coordinates, truth_cameras):
    """ Express a true skeleton in the frame the results were written in. """
    if coordinates == 'world':
        return skeleton
    pose = truth_cameras[coordinates]
    return type(skeleton)(skeleton.person_id, pose.transform(skeleton.joints3d),
                          skeleton.joint_valid, skeleton.frame_id)


def evaluate(scene, results, alpha=DEFAULT_PCP_ALPHA):
    """ Score results (io.Results) against the ground truth of a scene. """
    frames = {f.frame_id: f for f in scene.frames}
    truth_by_frame = defaultdict(list)
    for s in scene.truth_skeletons:
        truth_by_frame[s.frame_id].append(s)
    pred_by_frame = defaultdict(list)
    for s in results.skeletons:
        pred_by_frame[s.frame_id].append(s)

    rows = []
    person_counts = defaultdict(lambda: [0, 0])
    total = [0, 0]
    frame_ids = sorted(set(results.matches) | set(truth_by_frame))
    for frame_id in frame_ids:
        scores = None
        result = results.matches.get(frame_id)
        frame = frames.get(frame_id)
        if result is not None and frame is not None and len(result) >= 2:
            hints = [d.person_hint for d in frame.detections]
            if None not in hints:
                scores = clustering_scores(result.assignments, hints)
        frame_pcp = None
        if truth_by_frame[frame_id] and results.skeletons:
            truth = [truth_in(s, results.coordinates, scene.truth_cameras)
                     for s in truth_by_frame[frame_id]]
            pred = pred_by_frame[frame_id]
            matched = dict((j, i) for i, j in match_skeletons(pred, truth))
            correct = evaluated = 0
            for j, t in enumerate(truth):
                score = pcp(pred[matched[j]], t, alpha) if j in matched else missed(t)
                person_counts[t.person_id][0] += score.correct
                person_counts[t.person_id][1] += score.evaluated
                correct += score.correct
                evaluated += score.evaluated
            total[0] += correct
            total[1] += evaluated
            frame_pcp = 100.0 * correct / evaluated if evaluated else None
        rows.append(FrameScore(frame_id, scores, frame_pcp))

    per_person = {p: 100.0 * c / n for p, (c, n) in sorted(person_counts.items())
                  if n}
    overall = 100.0 * total[0] / total[1] if total[1] else float('nan')
    logger.info('evaluated %d frames, PCP %.2f', len(rows), overall)
    return Evaluation(tuple(rows), per_person, overall)


def _fmt(value, tsv):
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return 'nan' if tsv else '-'
    return ('%.6f' if tsv else '%.3f') % value


def format_score_table(evaluation, tsv=False):
    """ Per-frame rows, a mean row and per-person PCP as text. """
    sep = '\t' if tsv else '  '
    header = ['frame', 'purity', 'ri', 'ari', 'f', 'pcp']
    lines = [sep.join(header) if tsv else
             sep.join('%8s' % h for h in header)]

    def row(name, scores, pcp_value):
        values = list(scores) if scores is not None else [None] * 4
        cells = [str(name)] + [_fmt(v, tsv) for v in values + [pcp_value]]
        return sep.join(cells) if tsv else sep.join('%8s' % c for c in cells)

    for f in evaluation.frames:
        lines.append(row(f.frame_id, f.scores, f.pcp))
    lines.append(row('mean', evaluation.mean_scores(), evaluation.pcp))
    for person, value in sorted(evaluation.per_person.items()):
        label = 'person%d' % person
        lines.append(sep.join([label, _fmt(value, tsv)]) if tsv else
                     '%8s%s%8s' % (label, sep, _fmt(value, tsv)))
    return '\n'.join(lines) + '\n'


def format_sweep_table(rows, key_name='w'):
    """ Tab separated sweep rows: key followed by the mean scores. """
    lines = ['\t'.join([key_name, 'purity', 'ri', 'ari', 'f', 'pcp'])]
    for key, scores, pcp_value in rows:
        values = list(scores) if scores is not None else [None] * 4
        lines.append('\t'.join([str(key)] + [_fmt(v, True)
                                             for v in values + [pcp_value]]))
    return '\n'.join(lines) + '\n'

