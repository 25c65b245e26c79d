"""

Command line frontend.

    mvmatch synth --seed 7 --people 3 | mvmatch pipeline --k 3 > results.txt
    mvmatch eval scene.txt results.txt

Every stage also runs on its own over intermediate files:

    mvmatch track scene.txt --out tracks.txt
    mvmatch embed scene.txt tracks.txt --out embeddings.txt
    mvmatch match scene.txt embeddings.txt --out matches.txt
    mvmatch reconstruct scene.txt matches.txt --out results.txt

Exit codes: 0 on success, 1 on a usage or configuration error and 2 when
the data cannot be processed.

"""

import argparse
import logging
import sys
from dataclasses import replace

from . import io, pipeline, synth
from .clustering import kmeans_iteration
from .common import ConfigError, DataError, IoError
from .config import EMBED_VARIANTS, KEYS, PipelineConfig, read_config
from .geometry import ba_step
from .metrics import evaluate, format_score_table, format_sweep_table
from .utils import setup_logging

logger = logging.getLogger('mvmatch.cli')

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

# settings that are switches on the command line
SWITCHES = ('fix-cameras', 'huber')


class UsageError(ConfigError):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """ Report bad arguments with an exception instead of exiting. """

    def error(self, message):
        raise UsageError('%s\n%s: error: %s'
                         % (self.format_usage().rstrip(), self.prog, message))


class Progress:
    """ Counts k-means iterations and LM steps between pipeline stages. """

    def __init__(self):
        self.iterations = 0
        self.steps = 0
        self.rejected = 0

    def connect(self):
        kmeans_iteration.connect(self.on_iteration)
        ba_step.connect(self.on_step)
        pipeline.stage_finished.connect(self.on_stage)

    def disconnect(self):
        kmeans_iteration.disconnect(self.on_iteration)
        ba_step.disconnect(self.on_step)
        pipeline.stage_finished.disconnect(self.on_stage)

    def on_iteration(self, iteration, value):
        self.iterations += 1

    def on_step(self, iteration, rmse, accepted):
        self.steps += 1
        if not accepted:
            self.rejected += 1

    def on_stage(self, name, summary):
        if self.iterations:
            logger.debug('%s took %d k-means iterations', name, self.iterations)
        if self.steps:
            logger.debug('%s took %d LM steps (%d rejected)',
                         name, self.steps, self.rejected)
        self.iterations = self.steps = self.rejected = 0


###############################################################################
# configuration


def make_config(args):
    """ Defaults, then the --config file, then explicit flags. """
    cfg = PipelineConfig()
    if getattr(args, 'config', None):
        cfg = read_config(args.config, cfg)
    changes = dict()
    for key, (attr, convert) in KEYS.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        try:
            changes[attr] = convert(value)
        except ValueError as e:
            raise UsageError('bad value for --%s: %s' % (key, e)) from e
    return cfg.updated(**changes)


def _pairs(text):
    """ '0-1,2-3' -> ((0, 1), (2, 3)) """
    try:
        pairs = [tuple(int(v) for v in item.split('-'))
                 for item in text.split(',') if item]
    except ValueError as e:
        raise argparse.ArgumentTypeError('expected pairs like 0-1,2-3') from e
    if any(len(p) != 2 for p in pairs):
        raise argparse.ArgumentTypeError('expected pairs like 0-1,2-3')
    return tuple(pairs)


def _ints(text):
    try:
        return [int(v) for v in text.split(',') if v]
    except ValueError as e:
        raise argparse.ArgumentTypeError('expected integers like 0,2,4') from e


# flag -> (SynthSpec attribute, converter); parsed into `synth_<attribute>`
SCENE_FLAGS = {
    'cameras': ('n_cameras', int),
    'people': ('n_people', int),
    'frames': ('frames', int),
    'dim': ('dim', int),
    'fps': ('fps', float),
    'radius': ('radius', float),
    'sigma-view': ('sigma_view', float),
    'sigma-t': ('sigma_t', float),
    'p-flip': ('p_flip', float),
    'dropout': ('dropout', float),
    'confidence': ('confidence', float),
    'confusion': ('confusion_pairs', _pairs),
    'negative-fraction': ('negative_fraction', float),
    'attenuation': ('attenuation', float),
    'jitter': ('noise_window', int),
}


def make_spec(args, seed=None, defaults=None):
    changes = {attr: getattr(args, 'synth_' + attr)
               for attr, _ in SCENE_FLAGS.values()
               if getattr(args, 'synth_' + attr) is not None}
    if args.focal is not None:
        changes.update(fx=args.focal, fy=args.focal)
    if seed is not None:
        changes['seed'] = seed
    spec = replace(synth.SynthSpec(), **(defaults or {}))
    return replace(spec, **changes).validate()


###############################################################################
# commands


def cmd_synth(args):
    scene = synth.generate(make_spec(args, args.seed))
    io.write_scene(args.out, scene)


def cmd_track(args):
    cfg = make_config(args)
    scene = pipeline.prepare_scene(io.read_scene(args.scene), cfg)
    io.write_tracks(args.out, pipeline.track_scene(scene, cfg))


def cmd_embed(args):
    cfg = make_config(args)
    scene = pipeline.prepare_scene(io.read_scene(args.scene), cfg)
    tracks = io.read_tracks(args.tracks)
    embeddings = pipeline.embed_tracks(scene, tracks, cfg)
    io.write_embeddings(args.out, embeddings, cfg.embed_variant)


def cmd_match(args):
    cfg = make_config(args)
    scene = io.read_scene(args.scene)
    embeddings, variant = io.read_embeddings(args.embeddings)
    if variant != cfg.embed_variant:
        logger.info('embeddings were computed with %s', variant)
    io.write_matches(args.out, pipeline.match_frames(scene, embeddings, cfg))


def cmd_reconstruct(args):
    cfg = make_config(args)
    scene = io.read_scene(args.scene)
    matches = io.read_matches(args.matches)
    io.write_results(args.out, pipeline.reconstruct(scene, matches, cfg))


def cmd_pipeline(args):
    cfg = make_config(args)
    scene = io.read_scene(args.scene)
    io.write_results(args.out, pipeline.run_pipeline(scene, cfg))


def cmd_eval(args):
    cfg = make_config(args)
    scene = io.read_scene(args.scene)
    results = io.read_results(args.results)
    evaluation = evaluate(scene, results, cfg.pcp_alpha)
    io.write_text(args.out, format_score_table(evaluation, tsv=args.tsv))


def cmd_sweep(args):
    cfg = make_config(args)
    seeds = tuple(range(args.seeds))
    base = make_spec(args, defaults=synth.FLIP_SCENE if args.kind == 'embeddings'
                     else None)
    if args.kind == 'noise':
        rows = synth.sweep_noise(base, args.windows, seeds, cfg)
        key = 'w'
    elif args.kind == 'embeddings':
        rows = synth.sweep_embeddings(base, args.variants, seeds, cfg)
        key = 'variant'
    else:
        rows = synth.sweep_constraints(base, seeds, cfg)
        key = 'method'
    io.write_text(args.out, format_sweep_table(rows, key))


###############################################################################
# parser


def _add_settings(parser):
    group = parser.add_argument_group('pipeline settings')
    group.add_argument('--config', metavar='PATH',
                       help='settings file (key value per line)')
    for key, (attr, _) in KEYS.items():
        if key in SWITCHES:
            group.add_argument('--' + key, dest=attr, action='store_const',
                               const=True, default=None)
        else:
            group.add_argument('--' + key, dest=attr, default=None,
                               metavar=key.upper().replace('-', '_'))


def _add_scene_flags(parser):
    group = parser.add_argument_group('synthetic scene')
    for key, (attr, convert) in SCENE_FLAGS.items():
        group.add_argument('--' + key, dest='synth_' + attr, type=convert,
                           default=None)
    group.add_argument('--focal', type=float, default=None,
                       help='focal length in pixels')


def build_parser():
    common = ArgumentParser(add_help=False)
    common.add_argument('--out', default='-',
                        help='output file (default: standard output)')
    common.add_argument('-v', '--verbose', action='store_true',
                        help='log debug messages')

    parser = ArgumentParser(prog='mvmatch',
                            description='Match people across cameras and '
                                        'reconstruct their 3D poses.')
    sub = parser.add_subparsers(dest='name', required=True, metavar='command')

    def command(name, func, summary, settings=True):
        p = sub.add_parser(name, parents=[common], help=summary)
        if settings:
            _add_settings(p)
        p.set_defaults(func=func)
        return p

    p = command('synth', cmd_synth, 'generate a synthetic scene', settings=False)
    p.add_argument('--seed', type=int, default=0)
    _add_scene_flags(p)

    p = command('track', cmd_track, 'track detections in every camera')
    p.add_argument('scene')

    p = command('embed', cmd_embed, 'compute track features')
    p.add_argument('scene')
    p.add_argument('tracks')

    p = command('match', cmd_match, 'cluster detections into people')
    p.add_argument('scene')
    p.add_argument('embeddings')

    p = command('reconstruct', cmd_reconstruct,
                'recover cameras and 3D skeletons from matches')
    p.add_argument('scene')
    p.add_argument('matches')

    p = command('pipeline', cmd_pipeline, 'run every stage')
    p.add_argument('scene', nargs='?', default='-')

    p = command('eval', cmd_eval, 'score results against ground truth')
    p.add_argument('scene')
    p.add_argument('results')
    p.add_argument('--tsv', action='store_true', help='tab separated output')

    p = command('sweep', cmd_sweep, 'run an ablation over seeded scenes')
    p.add_argument('kind', choices=('noise', 'embeddings', 'constraints'))
    p.add_argument('--seeds', type=int, default=5,
                   help='number of scenes per row (seeds 0..N-1)')
    p.add_argument('--windows', type=_ints, default=[0, 2, 4, 6, 10, 20],
                   help='jitter windows in pixels for the noise sweep')
    p.add_argument('--variants', type=lambda s: tuple(s.split(',')),
                   default=EMBED_VARIANTS[:4],
                   help='embedding variants for the embeddings sweep')
    _add_scene_flags(p)
    return parser


def run(argv=None):
    """ Run the command line and return the exit code. """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return e.code if isinstance(e.code, int) else EXIT_OK

    setup_logging()
    if args.verbose:
        logging.getLogger('mvmatch').setLevel(logging.DEBUG)
    progress = Progress()
    progress.connect()
    try:
        args.func(args)
    except ConfigError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, IoError) as e:
        print(e, file=sys.stderr)
        return EXIT_DATA
    finally:
        progress.disconnect()
    return EXIT_OK


def main():
    sys.exit(run())
