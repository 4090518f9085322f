# MIT License
# 
# Copyright (c) 2025 pysimba contributors
# 
# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:
# 
# The above copyright notice and this permission notice shall be included in all
# copies or substantial portions of the Software.
# 
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
# SOFTWARE.

__docformat__ = 'google'

'''pysimba command line interface.

Try `python -m pysimba --help` for command and switch options.

Commands:
    gen-data    generate a synthetic dataset
    train       train Stage 1 (teacher) or Stage 2 (completion pipeline)
    complete    complete a partial point cloud file
    eval        compare predicted clouds with ground truth
    ablate      train and evaluate ablation variants

Order of precedence for settings:
    1. Command line switch settings (--seed, --ablation)
    2. SIMBA_SEED environment variable (seed only)
    3. Settings loaded from specified ini file (--config)
    4. Built-in defaults

Artifact paths are printed to stdout, diagnostics go to stderr.

Exit codes:
    0   success
    2   configuration, usage, malformed input, or checkpoint error
    3   I/O error, including refusing to overwrite an existing dataset
    4   training aborted on a non-finite loss
    5   evaluation found ids without a counterpart
'''

import os
import sys
import logging
import argparse

from tqdm import tqdm

import pysimba
from pysimba.settings import PipelineConfig, ABLATIONS
from pysimba.synth import Dataset, build_dataset
from pysimba.symmgt import train_stage1
from pysimba.simba import train_stage2, load_pipeline, complete
from pysimba.evaluate import evaluate_dirs
from pysimba.ablation import run_sweep
from pysimba.runmonitor import ResourceMonitor, RunRecord
from pysimba.geometry import Source, read_point_cloud
from pysimba.errors import ConfigError, CheckpointError, PointCloudFormatError, TrainingAborted


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_ABORTED = 4
EXIT_UNMATCHED = 5
SEED_VARIABLE = 'SIMBA_SEED'

log = logging.getLogger('pysimba')


def load_config(args):
    '''Build the run configuration from --config, --ablation, --seed, and SIMBA_SEED.'''
    config = PipelineConfig.load(args.config) if getattr(args, 'config', None) else PipelineConfig()

    if getattr(args, 'ablation', None):
        config = config.with_ablation(args.ablation)

    seed = getattr(args, 'seed', None)

    if seed is None and os.environ.get(SEED_VARIABLE):
        try:
            seed = int(os.environ[SEED_VARIABLE])
        except ValueError:
            raise ConfigError(SEED_VARIABLE + ' must be an integer, got \'' + os.environ[SEED_VARIABLE] + '\'') from None

    if seed is not None:
        config = config.replace(seed=seed)

    return config


def epoch_progress(config, epochs):
    '''Progress bar over epochs on stderr, hidden when stderr is not a terminal.'''
    total = config.epochs if epochs is None else epochs
    bar = tqdm(total=total, unit='epoch', file=sys.stderr, disable=not sys.stderr.isatty())

    def progress(epoch, loss, lr):
        bar.n = epoch + 1
        bar.set_postfix(loss='{:.4g}'.format(loss), lr='{:.2g}'.format(lr))

    return bar, progress


def cmd_gen_data(args):
    config = load_config(args)
    n_shapes = args.n_shapes or config.n_shapes
    manifest = build_dataset(
        args.out,
        n_shapes,
        families = config.families,
        occlusion = config.occlusion,
        severity = config.severity,
        seed = config.seed,
        n_points = config.n_points,
        workers = args.workers or config.workers,
        force = args.force,
        min_retained = config.n_keypoints,
        comments = {'config_hash': config.config_hash()}
    )
    print(manifest)
    return EXIT_OK


def cmd_train(args):
    config = load_config(args)

    if args.stage == 2 and not args.stage1_ckpt:
        raise ConfigError('Stage 2 training needs a Stage-1 checkpoint, see --stage1-ckpt')

    dataset = Dataset(args.data)
    monitor = ResourceMonitor()
    bar, progress = epoch_progress(config, args.epochs)
    monitor.enable()

    try:
        if args.stage == 1:
            trainer = train_stage1(dataset, config, args.out, resume=args.resume, epochs=args.epochs, progress=progress)
        else:
            trainer = train_stage2(args.stage1_ckpt, dataset, config, args.out, resume=args.resume, epochs=args.epochs, progress=progress)
    finally:
        monitor.disable()
        bar.close()

    record = RunRecord.from_trainer(trainer, monitor, extra={'stage': args.stage})
    record_path = record.write(os.path.join(args.out, trainer.name + '-run.json'))

    print(trainer.checkpoint_path)
    print(trainer.metrics_path)
    print(record_path)
    return EXIT_OK


def cmd_complete(args):
    seed = load_config(args).seed
    pipeline = load_pipeline(args.ckpt)
    partial = read_point_cloud(args.input, source=Source.PARTIAL_INPUT)
    result = complete(pipeline, partial, seed)
    stem = os.path.splitext(os.path.basename(args.input))[0]

    for path in result.write(args.out, stem, intermediates=args.dump_intermediates):
        print(path)

    return EXIT_OK


def cmd_eval(args):
    report = evaluate_dirs(args.pred, args.gt, with_mmd=args.mmd, workers=args.workers)

    if report.unmatched:
        log.error('Ids without a counterpart: %s', ', '.join(report.unmatched))
        return EXIT_UNMATCHED

    print(report.write_csv(args.out))
    return EXIT_OK


def cmd_ablate(args):
    config = load_config(args)
    dataset = Dataset(args.data)
    stage1_ckpt = args.stage1_ckpt

    if not stage1_ckpt:
        trainer = train_stage1(dataset, config, os.path.join(args.out, 'stage1'), epochs=args.stage1_epochs)
        stage1_ckpt = trainer.checkpoint_path

    print(run_sweep(args.ids, stage1_ckpt, dataset, config, args.out, epochs=args.epochs, limit=args.limit))
    return EXIT_OK


def build_parser():
    help_epilog = 'Set SIMBA_SEED to change the default seed of every command. '
    help_epilog += 'See the pysimba README for file formats and exit codes.'

    program = 'python -m pysimba'
    parser = argparse.ArgumentParser(prog=program, description='pysimba point cloud completion', epilog = help_epilog)
    parser.add_argument('--debug', help='Log debug messages to stderr', action='store_true')
    parser.add_argument('--log', help='Also log to this file')
    commands = parser.add_subparsers(dest='command', required=True)

    gen = commands.add_parser('gen-data', help='Generate a synthetic dataset')
    gen.add_argument('--config', help='Settings ini file')
    gen.add_argument('--out', help='Dataset directory', required=True)
    gen.add_argument('--seed', help='Dataset seed', type=int)
    gen.add_argument('--n-shapes', help='Number of shapes, defaults to the [data] n_shapes setting', type=int)
    gen.add_argument('--workers', help='Worker threads, defaults to the CPU count', type=int, default=0)
    gen.add_argument('--force', help='Overwrite an existing dataset', action='store_true')
    gen.set_defaults(func=cmd_gen_data)

    train = commands.add_parser('train', help='Train Stage 1 or Stage 2')
    train.add_argument('--stage', help='Training stage', type=int, choices=(1, 2), required=True)
    train.add_argument('--config', help='Settings ini file')
    train.add_argument('--data', help='Dataset directory', required=True)
    train.add_argument('--out', help='Output directory', required=True)
    train.add_argument('--stage1-ckpt', help='Stage-1 checkpoint (stage 2 only)')
    train.add_argument('--resume', help='Epoch checkpoint to resume from')
    train.add_argument('--epochs', help='Total epochs, defaults to the [training] epochs setting', type=int)
    train.add_argument('--ablation', help='Ablation id', choices=sorted(ABLATIONS))
    train.add_argument('--seed', help='Run seed', type=int)
    train.set_defaults(func=cmd_train)

    comp = commands.add_parser('complete', help='Complete a partial point cloud')
    comp.add_argument('--ckpt', help='Stage-2 checkpoint', required=True)
    comp.add_argument('--input', help='Partial cloud, XYZ or ASCII PLY', required=True)
    comp.add_argument('--out', help='Output directory', required=True)
    comp.add_argument('--seed', help='Sampling seed', type=int)
    comp.add_argument('--dump-intermediates', help='Also write keypoint, symmetric, coarse, and per-block clouds', action='store_true')
    comp.set_defaults(func=cmd_complete)

    ev = commands.add_parser('eval', help='Evaluate predictions against ground truth')
    ev.add_argument('--pred', help='Folder of predicted clouds', required=True)
    ev.add_argument('--gt', help='Folder of ground-truth clouds', required=True)
    ev.add_argument('--out', help='Metrics CSV path', required=True)
    ev.add_argument('--mmd', help='Add minimum matching distance to aggregate rows', action='store_true')
    ev.add_argument('--workers', help='Worker threads, defaults to the CPU count', type=int, default=0)
    ev.set_defaults(func=cmd_eval)

    ab = commands.add_parser('ablate', help='Train and evaluate ablation variants')
    ab.add_argument('--config', help='Settings ini file')
    ab.add_argument('--data', help='Dataset directory', required=True)
    ab.add_argument('--out', help='Output directory', required=True)
    ab.add_argument('--ids', help='Ablation ids, defaults to all', nargs='*', choices=sorted(ABLATIONS), default=[])
    ab.add_argument('--stage1-ckpt', help='Shared Stage-1 checkpoint, trained first when omitted')
    ab.add_argument('--stage1-epochs', help='Stage-1 epochs when training the shared teacher', type=int)
    ab.add_argument('--epochs', help='Stage-2 epochs per ablation', type=int)
    ab.add_argument('--limit', help='Evaluate at most this many held-out shapes', type=int)
    ab.add_argument('--seed', help='Run seed', type=int)
    ab.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None):
    '''Run one command.

    Returns:
        int: Exit code
    '''
    parser = build_parser()
    args = parser.parse_args(argv)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter('%(levelname)s %(name)s: %(message)s'))
    log.addHandler(handler)
    log.setLevel(logging.DEBUG if args.debug else logging.INFO)

    if args.log:
        pysimba.enable_logging(args.log, debug=args.debug)

    try:
        return args.func(args)
    except TrainingAborted as e:
        log.error('%s', e)
        print(e.dump_path)
        return EXIT_ABORTED
    except (ConfigError, CheckpointError, PointCloudFormatError) as e:
        log.error('%s', e)
        return EXIT_CONFIG
    except OSError as e:
        log.error('%s', e)
        return EXIT_IO
    finally:
        log.removeHandler(handler)


if __name__ == '__main__':
    sys.exit(main())
