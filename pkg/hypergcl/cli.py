# coding: utf-8
from __future__ import print_function

import argparse
import io
import json
import logging
import os
import shlex
import sys

from prompt_toolkit import prompt

from . import __version__
from .augment import AugmentationError, apply_augmentation, parse_spec
from .hypergraph import (SYNTH_PRESETS, HypergraphError, clique_expand, homophily,
                         load_bundle, load_hypergraph, save_hypergraph, split, synth_hypergraph)
from .model import load_params, save_params
from .train import (DEFAULT_ATTACK_RATIO, ConfigError, TrainConfig, derive_seed, evaluate,
                    random_perturb_attack, run_protocol, write_epoch_log, write_summary, write_table)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

SUMMARY_FILE = 'summary.json'
TABLE_FILE = 'table.csv'
DEFAULT_OUT = 'runs'

COMMANDS = ('train', 'eval', 'augment', 'stats', 'synth', 'attack')

# (flag, TrainConfig field, type); booleans are store_true switches
TRAIN_FLAGS = [
    ('--mode', 'mode', str),
    ('--view1', 'view1', str),
    ('--view2', 'view2', str),
    ('--epochs', 'epochs', int),
    ('--pretrain-epochs', 'pretrain_epochs', int),
    ('--lr-model', 'lr_model', float),
    ('--lr-generator', 'lr_generator', float),
    ('--weight-decay', 'weight_decay', float),
    ('--lam', 'lam', float),
    ('--beta', 'beta', float),
    ('--tau-contrast', 'tau_contrast', float),
    ('--tau-gumbel', 'tau_gumbel', float),
    ('--anneal-gumbel', 'anneal_gumbel', bool),
    ('--dropout', 'dropout', float),
    ('--hidden', 'hidden', int),
    ('--proj', 'proj', int),
    ('--latent', 'latent', int),
    ('--blocks', 'blocks', int),
    ('--neg-k', 'neg_k', int),
    ('--kl-weight', 'kl_weight', float),
    ('--train-frac', 'train_frac', float),
    ('--val-frac', 'val_frac', float),
    ('--max-anchors', 'max_anchors', int),
    ('--clique', 'clique', bool),
]


class UsageError(Exception):
    """Raised for invalid command-line usage."""
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError('{}: {}'.format(self.prog, message))


class CliConfig(object):
    """Parsed invocation: subcommand, raw arguments and, for ``train``, the training config."""

    def __init__(self, command, args, train=None):
        self.command = command
        self.args = args
        self.train = train

    def __repr__(self):
        return '<CliConfig {}>'.format(self.command)


def _add_source(parser):
    group = parser.add_argument_group('data source (exactly one)')
    group.add_argument('--hyperedges', help='hyperedge file, one line of vertex ids per hyperedge')
    group.add_argument('--features', help='feature file, one row per vertex')
    group.add_argument('--labels', help='label file, one class per vertex')
    group.add_argument('--sensitive', help='binary sensitive attribute file')
    group.add_argument('--bundle', help='single JSON bundle')
    group.add_argument('--synth', choices=sorted(SYNTH_PRESETS), help='synthetic preset')
    group.add_argument('--synth-seed', type=int, default=0, help='synthetic generator seed (default: 0)')
    group.add_argument('--clique', action='store_true', default=argparse.SUPPRESS,
                       help='use the clique expansion of the hypergraph (default: False)')


def _add_split(parser):
    defaults = TrainConfig()
    parser.add_argument('--seed', type=int, default=0, help='split/attack seed (default: 0)')
    parser.add_argument('--train-frac', type=float, default=defaults.train_frac,
                        help='train fraction (default: {})'.format(defaults.train_frac))
    parser.add_argument('--val-frac', type=float, default=defaults.val_frac,
                        help='validation fraction (default: {})'.format(defaults.val_frac))


def _add_train_flags(parser):
    defaults = TrainConfig()
    for flag, name, kind in TRAIN_FLAGS:
        if name == 'clique':
            continue
        text = 'default: {}'.format(getattr(defaults, name))
        if kind is bool:
            parser.add_argument(flag, dest=name, action='store_true', default=argparse.SUPPRESS, help=text)
        else:
            parser.add_argument(flag, dest=name, type=kind, default=argparse.SUPPRESS, help=text)
    parser.add_argument('--seeds', default=argparse.SUPPRESS,
                        help='seed count N (seeds SEED..SEED+N-1) or a comma list (default: 0)')
    parser.add_argument('--seed', type=int, default=argparse.SUPPRESS, help='root seed (default: 0)')
    parser.add_argument('--config', help='JSON file with TrainConfig fields; flags override it')
    parser.add_argument('--parallel', type=int, default=1, help='seeds run concurrently (default: 1)')
    parser.add_argument('--save-checkpoints', action='store_true',
                        help='write the selected parameters of every seed')
    parser.add_argument('--method', help='row name in the CSV table (default: mode+views)')


def build_parser():
    parser = _Parser(prog='hypergcl-cli', description='Hypergraph contrastive learning laboratory')
    parser.add_argument('--version', action='version', version='%(prog)s ' + __version__)
    parser.add_argument('--verbose', '-v', action='store_true', help='debug logging')
    commands = parser.add_subparsers(dest='command')

    train = commands.add_parser('train', help='train over one or more seeds')
    _add_source(train)
    _add_train_flags(train)
    train.add_argument('--out', default=DEFAULT_OUT, help='output directory (default: {})'.format(DEFAULT_OUT))

    evaluate_cmd = commands.add_parser('eval', help='test accuracy of a checkpoint')
    _add_source(evaluate_cmd)
    _add_split(evaluate_cmd)
    evaluate_cmd.add_argument('--checkpoint', required=True)

    augment = commands.add_parser('augment', help='write one fabricated augmentation')
    _add_source(augment)
    augment.add_argument('--spec', required=True, help='A0, A1:p .. A4:p or A5:retain')
    augment.add_argument('--seed', type=int, default=0, help='augmentation seed (default: 0)')
    augment.add_argument('--out', required=True, help='output directory')

    stats = commands.add_parser('stats', help='print |V| |E| F C h_edge h_node')
    _add_source(stats)

    synth = commands.add_parser('synth', help='write a synthetic hypergraph')
    synth.add_argument('--preset', choices=sorted(SYNTH_PRESETS), default='default',
                       help='synthetic preset (default: default)')
    synth.add_argument('--seed', type=int, default=0, help='generator seed (default: 0)')
    synth.add_argument('--out', required=True, help='output directory')

    attack = commands.add_parser('attack', help='random perturbation then checkpoint evaluation')
    _add_source(attack)
    _add_split(attack)
    attack.add_argument('--checkpoint', required=True)
    attack.add_argument('--ratio', type=float, default=DEFAULT_ATTACK_RATIO,
                        help='fraction of incidences removed (default: {})'.format(DEFAULT_ATTACK_RATIO))
    return parser


def _check_source(args):
    given = [name for name, present in (('files', args.hyperedges is not None),
                                         ('bundle', args.bundle is not None),
                                         ('synth', args.synth is not None)) if present]
    if len(given) != 1:
        raise UsageError('exactly one data source is required (--hyperedges/--features, --bundle or --synth)')
    if given == ['files'] and args.features is None:
        raise UsageError('--hyperedges needs --features')
    if given != ['files'] and (args.features or args.labels or args.sensitive):
        raise UsageError('--features/--labels/--sensitive only go with --hyperedges')


def _parse_seeds(text, root):
    text = str(text).strip()
    try:
        if ',' in text:
            return [int(s) for s in text.split(',') if s.strip()]
        count = int(text)
    except ValueError:
        raise UsageError('--seeds takes a count or a comma list, got "{}"'.format(text))
    if count < 1:
        raise UsageError('--seeds count must be >= 1')
    return list(range(root, root + count))


def _train_config(args):
    values = {}
    if args.config:
        with io.open(args.config, encoding='utf-8') as f:
            try:
                values.update(json.load(f))
            except ValueError as e:
                raise ConfigError('{}: invalid JSON: {}'.format(args.config, e))
    for _, name, _ in TRAIN_FLAGS:
        if hasattr(args, name):
            values[name] = getattr(args, name)
    cfg = TrainConfig.from_dict(values)
    root = getattr(args, 'seed', None)
    if hasattr(args, 'seeds'):
        cfg.seeds = _parse_seeds(args.seeds, root or 0)
    elif root is not None:
        cfg.seeds = [root]
    return cfg.validate()


def parse_args(argv):
    """Parse and validate one invocation."""
    args = build_parser().parse_args(argv)
    if args.command is None:
        raise UsageError('a subcommand is required: {}'.format(', '.join(COMMANDS)))
    if args.command != 'synth':
        _check_source(args)
    train = None
    if args.command == 'train':
        train = _train_config(args)
    elif args.command == 'augment':
        spec = parse_spec(args.spec)
        if spec.is_generative:
            raise AugmentationError('A6 views come from a trained generator; use train')
    return CliConfig(args.command, args, train)


def load_source(args):
    if args.bundle is not None:
        H = load_bundle(args.bundle)
    elif args.synth is not None:
        H = synth_hypergraph(SYNTH_PRESETS[args.synth], args.synth_seed)
    else:
        H = load_hypergraph(args.hyperedges, args.features, args.labels, args.sensitive)
    return H


def _ensure_dir(path):
    if not os.path.isdir(path):
        os.makedirs(path)


def invocation(args):
    """Every parsed command-line argument, ready for the summary echo."""
    return dict((name, value) for name, value in sorted(vars(args).items()))


def do_train(cfg):
    args = cfg.args
    _ensure_dir(args.out)
    H = load_source(args)
    result = run_protocol(H, cfg.train, parallel=args.parallel)
    for seed_result in result.per_seed:
        write_epoch_log(os.path.join(args.out, 'seed_{}.jsonl'.format(seed_result.seed)), seed_result.logs)
        if args.save_checkpoints and seed_result.ok:
            save_params(os.path.join(args.out, 'seed_{}.ckpt.json'.format(seed_result.seed)),
                        seed_result.params, extra={'seed': seed_result.seed, 'config': cfg.train.to_dict()})
    write_summary(os.path.join(args.out, SUMMARY_FILE), result, invocation=invocation(args))
    method = args.method or '{}+{}/{}'.format(cfg.train.mode, cfg.train.view1, cfg.train.view2)
    write_table(os.path.join(args.out, TABLE_FILE), [(method, result)])
    for failed in result.failures:
        log.error('seed %s failed: %s', failed.seed, failed.error)
    if result.mean is not None:
        print('{}: {:.2f} +- {:.2f} over {} seeds'.format(method, result.mean, result.std,
                                                          len(result.per_seed) - len(result.failures)))
    return EXIT_RUNTIME if result.failures else EXIT_OK


def _maybe_clique(args, H):
    return clique_expand(H) if getattr(args, 'clique', False) else H


def do_eval(cfg):
    args = cfg.args
    H = _maybe_clique(args, load_source(args))
    masks = split(H, args.train_frac, args.val_frac, derive_seed(args.seed, 'split'))
    params = load_params(args.checkpoint)
    print('test_acc {:.2f}'.format(evaluate(params, H, masks.test)))
    return EXIT_OK


def do_attack(cfg):
    args = cfg.args
    H = _maybe_clique(args, load_source(args))
    masks = split(H, args.train_frac, args.val_frac, derive_seed(args.seed, 'split'))
    attacked = random_perturb_attack(H, args.ratio, derive_seed(args.seed, 'attack'))
    params = load_params(args.checkpoint)
    clean = evaluate(params, H, masks.test)
    perturbed = evaluate(params, attacked, masks.test)
    print('ratio {} clean {:.2f} attacked {:.2f}'.format(args.ratio, clean, perturbed))
    return EXIT_OK


def do_augment(cfg):
    args = cfg.args
    H = load_source(args)
    view = apply_augmentation(H, parse_spec(args.spec), args.seed)
    paths = save_hypergraph(view, args.out)
    log.info('wrote %r to %s', view, paths['hyperedges'])
    return EXIT_OK


def stats_row(H):
    h_edge, h_node = homophily(H)
    return '|V|={} |E|={} F={} C={} h_edge={:.4f} h_node={:.4f}'.format(
        H.num_vertices, H.num_hyperedges, H.num_features, H.num_classes, h_edge, h_node)


def do_stats(cfg):
    print(stats_row(_maybe_clique(cfg.args, load_source(cfg.args))))
    return EXIT_OK


def do_synth(cfg):
    args = cfg.args
    H = synth_hypergraph(SYNTH_PRESETS[args.preset], args.seed)
    paths = save_hypergraph(H, args.out)
    log.info('wrote %r to %s', H, paths['hyperedges'])
    return EXIT_OK


DISPATCH = {
    'train': do_train,
    'eval': do_eval,
    'augment': do_augment,
    'stats': do_stats,
    'synth': do_synth,
    'attack': do_attack,
}


def dispatch(cfg):
    return DISPATCH[cfg.command](cfg)


def run(argv):
    """Parse, dispatch and map failures onto exit codes."""
    try:
        cfg = parse_args(argv)
    except (UsageError, ConfigError, AugmentationError) as e:
        print('error: {}'.format(e), file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print('error: {}'.format(e), file=sys.stderr)
        return EXIT_DATA
    except SystemExit as e:
        # --help and --version
        return e.code or EXIT_OK
    if cfg.args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        return dispatch(cfg)
    except (HypergraphError, OSError) as e:
        log.error('%s', e)
        return EXIT_DATA
    except Exception:
        log.exception('%s failed', cfg.command)
        return EXIT_RUNTIME


def shell():
    print('hypergcl-cli v{}'.format(__version__))
    print('Control-D to exit.')
    print()
    while 1:
        raw = prompt('hypergcl> ')
        try:
            data = shlex.split(raw)
        except ValueError as e:
            print('error: {}'.format(e))
            continue
        if not data:
            continue
        if data[0] in ('exit', 'quit'):
            raise EOFError
        status = run(data)
        if status:
            print('exit status {}'.format(status))


def main():
    argv = sys.argv[1:]
    level = logging.DEBUG if '--verbose' in argv or '-v' in argv else logging.INFO
    logging.basicConfig(level=level)
    if not argv:
        try:
            shell()
        except EOFError:
            print()
            print('Bye!')
        return
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
