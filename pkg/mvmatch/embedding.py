"""

Feature normalization and track feature aggregation.

A track feature is built per dimension by majority vote on the sign of the
track's values followed by the largest magnitude among the values that
carry the winning sign. Sign flips produced by an over-sensitive
appearance network are then outvoted instead of averaged in.

"""

import logging
from dataclasses import replace

import numpy as np

from .common import ZeroVectorError, EmptyTrackError, DimensionMismatchError
from .model import FeatureVector

logger = logging.getLogger('mvmatch.embedding')


def normalize_feature(raw, dim=None):
    """ Return `raw` scaled to unit Euclidean norm as a FeatureVector. """
    values = np.asarray(raw.values if isinstance(raw, FeatureVector) else raw,
                        dtype=float)
    if values.ndim != 1:
        raise DimensionMismatchError('a feature must be a vector')
    if dim is not None and values.shape[0] != dim:
        raise DimensionMismatchError('expected dimension %d, got %d'
                                     % (dim, values.shape[0]))
    norm = np.linalg.norm(values)
    if not np.isfinite(norm) or norm == 0.0:
        raise ZeroVectorError('cannot normalize a vector of norm %g' % norm)
    return FeatureVector(values / norm)


def _stack(track_features):
    """ Stack the features of a track into an (n, D) array. """
    if not track_features:
        raise EmptyTrackError('cannot embed an empty track')
    rows = [f.values if isinstance(f, FeatureVector) else np.asarray(f, float)
            for f in track_features]
    dims = {r.shape for r in rows}
    if len(dims) != 1:
        raise DimensionMismatchError('track mixes feature dimensions %s'
                                     % sorted(d[0] for d in dims))
    return np.vstack(rows)


def dominant_signs(values):
    """ Per column of `values` (n x D, time ordered), the sign held by the
    strict majority; ties go to the sign of the last row. Zero counts as
    positive.

    """
    positive = values >= 0.0
    n = values.shape[0]
    n_pos = positive.sum(axis=0)
    n_neg = n - n_pos
    latest = np.where(positive[-1], 1.0, -1.0)
    return np.where(n_pos > n_neg, 1.0, np.where(n_neg > n_pos, -1.0, latest))


def voted_values(track_features):
    """ The per-dimension max of sign voting before normalization. """
    values = _stack(track_features)
    signs = dominant_signs(values)
    agree = np.where(values >= 0.0, 1.0, -1.0) == signs
    magnitude = np.where(agree, np.abs(values), 0.0).max(axis=0)
    return signs * magnitude


def sign_vote(track_features):
    """ Fuse a time-ordered list of features into one unit-norm track feature. """
    return normalize_feature(voted_values(track_features))


def mean_embedding(track_features):
    return normalize_feature(_stack(track_features).mean(axis=0))


def max_embedding(track_features):
    return normalize_feature(_stack(track_features).max(axis=0))


def mean_sign_vote(track_features):
    """ Mean of the elements that agree with the dominant sign, per dimension. """
    values = _stack(track_features)
    signs = dominant_signs(values)
    agree = np.where(values >= 0.0, 1.0, -1.0) == signs
    total = np.where(agree, values, 0.0).sum(axis=0)
    return normalize_feature(total / agree.sum(axis=0))


def latest_feature(track_features):
    """ No temporal aggregation: the newest detection feature alone. """
    values = _stack(track_features)
    return normalize_feature(values[-1])


_VARIANTS = {
    'sign-vote': sign_vote,
    'mean': mean_embedding,
    'max': max_embedding,
    'mean-sign-vote': mean_sign_vote,
    'none': latest_feature,
}


def embed(track_features, variant='sign-vote'):
    """ Aggregate track features with the named variant. """
    try:
        func = _VARIANTS[variant]
    except KeyError:
        raise ValueError('unknown embedding variant "%s"' % variant) from None
    return func(track_features)


def embed_track(track, variant='sign-vote'):
    """ Return a copy of `track` with its track feature filled in. """
    return replace(track, track_feature=embed(track.features, variant))
