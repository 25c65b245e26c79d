"""

Pipeline configuration.

Settings live in a flat key-value text file: one `key value` pair per
line, `#` starts a comment. Keys are spelled like the command line flags
without the leading dashes, so `--leg-length 0.45` and a line
`leg-length 0.45` mean the same thing. Explicit flags override the file,
the file overrides the defaults.

"""

import logging
from dataclasses import dataclass, fields, replace
from typing import Optional, Union

from .common import ConfigError

logger = logging.getLogger('mvmatch.config')

EMBED_VARIANTS = ('sign-vote', 'mean', 'max', 'mean-sign-vote', 'none')
CLUSTERING_METHODS = ('multi-step', 'size-only', 'kmeans')
DISTANCES = ('cosine', 'euclidean')


def _auto_or_int(value):
    if isinstance(value, str) and value.strip().lower() == 'auto':
        return 'auto'
    return int(value)


def _bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ('1', 'true', 'yes', 'on'):
        return True
    if text in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError('not a boolean: %r' % value)


def _optional_int(value):
    if value is None or str(value).strip().lower() in ('', 'none'):
        return None
    return int(value)


@dataclass(frozen=True)
class PipelineConfig:
    # tracking
    t: int = 10
    gate: float = 0.5
    distance: str = 'cosine'
    confidence_threshold: float = 0.1
    # embedding
    embed_variant: str = 'sign-vote'
    # clustering
    k: Optional[Union[int, str]] = None
    clustering: str = 'multi-step'
    kmeans_max_iter: int = 100
    cost_scale: float = 1e7
    seed: int = 0
    # geometry
    ransac_threshold: float = 1e-3
    ransac_iterations: int = 500
    window: int = 10
    reference_camera: Optional[int] = None
    lower_leg_length_m: float = 0.5
    fix_cameras: bool = False
    ba_max_iter: int = 100
    ba_gradient_tol: float = 1e-8
    ba_step_tol: float = 1e-10
    ba_damping: float = 1e-3
    huber: bool = False
    huber_delta: float = 2.0
    # evaluation and noise injection
    pcp_alpha: float = 0.5
    noise_window: int = 0
    # execution
    jobs: int = 1

    def validate(self):
        """ Raise ConfigError when a value is out of range; return self. """
        if self.t < 1:
            raise ConfigError('t must be at least 1 (got %d)' % self.t)
        if self.k is not None and self.k != 'auto' and self.k < 2:
            raise ConfigError('k must be at least 2 or "auto" (got %s)' % self.k)
        if not self.lower_leg_length_m > 0:
            raise ConfigError('leg-length must be positive (got %g)'
                              % self.lower_leg_length_m)
        if self.embed_variant not in EMBED_VARIANTS:
            raise ConfigError('unknown embed-variant "%s"; choose from %s'
                              % (self.embed_variant, ', '.join(EMBED_VARIANTS)))
        if self.clustering not in CLUSTERING_METHODS:
            raise ConfigError('unknown clustering "%s"; choose from %s'
                              % (self.clustering, ', '.join(CLUSTERING_METHODS)))
        if self.distance not in DISTANCES:
            raise ConfigError('unknown distance "%s"' % self.distance)
        for name in ('gate', 'ransac_threshold', 'cost_scale', 'huber_delta',
                     'pcp_alpha', 'ba_damping'):
            if not getattr(self, name) > 0:
                raise ConfigError('%s must be positive' % name)
        for name in ('kmeans_max_iter', 'ransac_iterations', 'ba_max_iter',
                     'jobs'):
            if getattr(self, name) < 1:
                raise ConfigError('%s must be at least 1' % name)
        if self.window < 0:
            raise ConfigError('window must be 0 (all frames) or positive')
        if self.noise_window < 0 or self.noise_window % 2:
            raise ConfigError('noise-window must be 0 or a positive even '
                              'integer (got %d)' % self.noise_window)
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ConfigError('confidence-threshold must lie in [0, 1]')
        return self

    def updated(self, **changes):
        """ Return a validated copy with `changes` applied (None is ignored). """
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes).validate()


# key in the file / flag on the command line -> (attribute, converter)
KEYS = {
    't': ('t', int),
    'gate': ('gate', float),
    'distance': ('distance', str),
    'confidence-threshold': ('confidence_threshold', float),
    'embed-variant': ('embed_variant', str),
    'k': ('k', _auto_or_int),
    'clustering': ('clustering', str),
    'kmeans-max-iter': ('kmeans_max_iter', int),
    'cost-scale': ('cost_scale', float),
    'seed': ('seed', int),
    'ransac-threshold': ('ransac_threshold', float),
    'ransac-iterations': ('ransac_iterations', int),
    'window': ('window', int),
    'reference-camera': ('reference_camera', _optional_int),
    'leg-length': ('lower_leg_length_m', float),
    'fix-cameras': ('fix_cameras', _bool),
    'ba-max-iter': ('ba_max_iter', int),
    'ba-gradient-tol': ('ba_gradient_tol', float),
    'ba-step-tol': ('ba_step_tol', float),
    'ba-damping': ('ba_damping', float),
    'huber': ('huber', _bool),
    'huber-delta': ('huber_delta', float),
    'pcp-alpha': ('pcp_alpha', float),
    'noise-window': ('noise_window', int),
    'jobs': ('jobs', int),
}

assert {attr for attr, _ in KEYS.values()} == {f.name for f in fields(PipelineConfig)}


def parse_settings(lines, source='<config>'):
    """ Parse `key value` lines into a dict of PipelineConfig attributes. """
    values = dict()
    for line_no, line in enumerate(lines, 1):
        line = line.partition('#')[0].strip()
        if not line:
            continue
        kv = line.split()
        if len(kv) != 2:
            raise ConfigError('%s:%d: expected "key value" but got "%s"'
                              % (source, line_no, line))
        key, value = kv
        if key not in KEYS:
            raise ConfigError('%s:%d: unknown setting "%s"'
                              % (source, line_no, key))
        attr, convert = KEYS[key]
        try:
            values[attr] = convert(value)
        except ValueError as e:
            raise ConfigError('%s:%d: bad value for "%s": %s'
                              % (source, line_no, key, e)) from e
    return values


def read_config(path, base=None):
    """ Read a settings file and return a validated PipelineConfig. """
    try:
        with open(path, 'r') as f:
            values = parse_settings(f, source=path)
    except OSError as e:
        raise ConfigError('cannot read config file "%s": %s' % (path, e)) from e
    logger.debug('read %d settings from "%s"', len(values), path)
    return replace(base or PipelineConfig(), **values).validate()
