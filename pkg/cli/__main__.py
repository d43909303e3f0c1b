#!/usr/bin/env python3
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv
from tabulate import tabulate

from common.errors import DegenerateInputError, InvalidArgumentError, InvalidFormatError, NumericError
from common.seeding import named_rng
from configs.app import Config, RuntimeSettings
from eventlog.setup import ExperimentLogger, configure_logging
from geometry.rotations import Rotation, decompose, zyz_angles
from network.vinet import VINet, architecture_header
from runner.diagnostics import DiagnosticsRunner, format_grid, pad_demo
from sphermap.convert import to_spherical_map
from sphermap.fileio import read_point_cloud, write_spherical_map
from tensorcore.checkpoint import load_checkpoint
from tensorcore.gradcheck import REL_TOL
from training.dataset_io import load_dataset, save_dataset, split_held_out
from training.evaluate import evaluate, write_report
from training.synth import synth_dataset
from training.trainer import TrainingEngine

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_MISSING_FILE = 2
EXIT_INVALID = 3
EXIT_NUMERIC = 4
EXIT_USAGE = 64

GRADCHECK_OPS = ['all'] + sorted(DiagnosticsRunner().gradcheck_cases())


class VINetArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_config(args, settings: RuntimeSettings) -> Config:
    if args.config:
        config = Config(args.config)
    elif Path(settings.config_path).exists():
        config = Config(settings.config_path)
    else:
        config = Config()
    return config.with_seed(args.seed)


def _mkparent(path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _fmt_matrix(m: np.ndarray) -> str:
    return '\n'.join('  [' + ' '.join(f"{v: .6f}" for v in row) + ']' for row in m)


def cmd_gen_data(args, config: Config, settings: RuntimeSettings) -> int:
    seed = config.train.seed
    count = config.train.train_count if args.count is None else args.count
    samples = synth_dataset(seed, count, threads=args.threads or settings.threads)
    save_dataset(args.out, samples)
    print(f"✓ Wrote {len(samples)} samples (seed {seed}) to {args.out}")
    return EXIT_OK


def cmd_convert(args, config: Config, settings: RuntimeSettings) -> int:
    cloud = read_point_cloud(args.input)
    smap = to_spherical_map(cloud, args.stream, args.height, args.width)
    _mkparent(args.out)
    write_spherical_map(args.out, smap)
    C, H, W = smap.data.shape
    print(f"✓ Wrote {C}x{H}x{W} '{args.stream}' map to {args.out}")
    return EXIT_OK


def cmd_train(args, config: Config, settings: RuntimeSettings) -> int:
    events = ExperimentLogger('vinet.train')
    samples = load_dataset(args.data)
    if args.held_out:
        train_set, held_out = samples, load_dataset(args.held_out)
    elif config.train.held_out_count < len(samples):
        train_set, held_out = split_held_out(samples, config.train.held_out_count)
    else:
        events.warning(f"Dataset of {len(samples)} samples is too small to hold out "
                       f"{config.train.held_out_count}; training without evaluation", tags=['DATA'])
        train_set, held_out = samples, []

    _mkparent(args.out_checkpoint)
    if args.log:
        _mkparent(args.log)
    engine = TrainingEngine(config, events=events)
    result = engine.train(train_set, held_out, checkpoint_path=args.out_checkpoint, log_path=args.log,
                          threads=args.threads or settings.threads)

    last = result.history.iloc[-1]
    print(f"✓ Trained {config.train.iterations} iterations; final loss {last['loss']:.6f}")
    if result.final_report is not None:
        print(result.final_report.to_table())
    print(f"Checkpoint: {args.out_checkpoint}")
    return EXIT_OK


def cmd_eval(args, config: Config, settings: RuntimeSettings) -> int:
    model = VINet(config.network, named_rng(config.train.seed, 'init'))
    load_checkpoint(args.checkpoint, model, architecture_header(config.network))
    samples = load_dataset(args.data)
    report = evaluate(model, samples, threads=args.threads or settings.threads)
    if args.report:
        _mkparent(args.report)
        write_report(args.report, report)
    ExperimentLogger('vinet.eval').info(f"Evaluated {args.checkpoint} on {len(samples)} samples",
                                        tags=['EVAL'], stage='eval', payload=report.to_dict())
    print(report.to_table())
    return EXIT_OK


def cmd_check_equivariance(args, config: Config, settings: RuntimeSettings) -> int:
    runner = DiagnosticsRunner(config.train.seed)
    shift_error = runner.shift_equivariance_error(args.trials, args.resolution)
    print(f"Azimuthal shift equivariance: max abs error {shift_error:.3e} over {args.trials} trials")
    rows = [[n, f"{d:.6f}"] for n, d in runner.convergence_table(args.rotations)]
    print(tabulate(rows, headers=['resolution', 'mean relative discrepancy'], tablefmt='github'))
    return EXIT_OK


def cmd_gradcheck(args, config: Config, settings: RuntimeSettings) -> int:
    results = DiagnosticsRunner(config.train.seed).run_gradchecks(args.ops)
    rows = [[r.name, f"{r.worst_relative_error:.3e}", r.entries_checked, 'ok' if r.passed else 'FAIL']
            for r in results]
    print(tabulate(rows, headers=['op', 'worst rel. error', 'entries', 'status'], tablefmt='github'))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"✗ {len(failed)} op(s) above {REL_TOL:g}: {', '.join(failed)}")
        return EXIT_NUMERIC
    print(f"✓ All {len(results)} op(s) below {REL_TOL:g}")
    return EXIT_OK


def cmd_pad_demo(args, config: Config, settings: RuntimeSettings) -> int:
    source, padded = pad_demo(args.height, args.width, args.pad)
    print(f"Source ({args.height}x{args.width}):")
    print(format_grid(source))
    print(f"Padded (P={args.pad}):")
    print(format_grid(padded))
    return EXIT_OK


def parse_rotation(text: str) -> Rotation:
    parts = text.replace(',', ' ').split()
    if len(parts) != 9:
        raise InvalidArgumentError(f"--rotation needs 9 reals, got {len(parts)}")
    try:
        values = [float(p) for p in parts]
    except ValueError as e:
        raise InvalidArgumentError(f"--rotation: {e}") from e
    return Rotation(np.array(values).reshape(3, 3))


def cmd_decompose(args, config: Config, settings: RuntimeSettings) -> int:
    r = parse_rotation(args.rotation)
    r_vp, r_ip = decompose(r)
    phi, theta, beta = zyz_angles(r)
    print(f"phi   = {phi:.6f} rad ({np.degrees(phi):.4f} deg)")
    print(f"theta = {theta:.6f} rad ({np.degrees(theta):.4f} deg)")
    print(f"beta  = {beta:.6f} rad ({np.degrees(beta):.4f} deg)")
    print("R_vp =")
    print(_fmt_matrix(r_vp.m))
    print("R_ip =")
    print(_fmt_matrix(r_ip.m))
    return EXIT_OK


COMMANDS = {
    'gen-data': cmd_gen_data,
    'convert': cmd_convert,
    'train': cmd_train,
    'eval': cmd_eval,
    'check-equivariance': cmd_check_equivariance,
    'gradcheck': cmd_gradcheck,
    'pad-demo': cmd_pad_demo,
    'decompose': cmd_decompose,
}


def build_parser() -> argparse.ArgumentParser:
    common = VINetArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, help='Seed for all random streams (default: train.seed from config)')
    common.add_argument('--threads', type=int, help='Worker threads for data generation and evaluation (default: 1)')
    common.add_argument('--config', type=str, help='YAML config file (default: configs/app.yaml when present)')

    parser = VINetArgumentParser(prog='vinet', description='VI-Net rotation estimation on spherical maps')
    subparsers = parser.add_subparsers(dest='command', help='Commands')

    gen = subparsers.add_parser('gen-data', parents=[common], help='Generate a synthetic dataset directory')
    gen.add_argument('--count', type=int, help='Number of samples (default: train.train_count)')
    gen.add_argument('--out', type=str, required=True, help='Output dataset directory')

    conv = subparsers.add_parser('convert', parents=[common], help='Convert a VIPC point cloud to a VISM map')
    conv.add_argument('--in', dest='input', type=str, required=True, help='Input VIPC file')
    conv.add_argument('--out', type=str, required=True, help='Output VISM file')
    conv.add_argument('--height', type=int, default=64, help='Inclination bins (default: 64)')
    conv.add_argument('--width', type=int, default=64, help='Azimuth bins, even (default: 64)')
    conv.add_argument('--stream', type=str, default='radial', help='Stream to project (default: radial)')

    train = subparsers.add_parser('train', parents=[common], help='Train VI-Net on a dataset directory')
    train.add_argument('--data', type=str, required=True, help='Training dataset directory')
    train.add_argument('--held-out', type=str, help='Held-out dataset directory (default: split from --data)')
    train.add_argument('--out-checkpoint', type=str, required=True, help='Checkpoint to write (VICK)')
    train.add_argument('--log', type=str, help='Metric CSV log')

    ev = subparsers.add_parser('eval', parents=[common], help='Evaluate a checkpoint on a dataset directory')
    ev.add_argument('--checkpoint', type=str, required=True, help='Checkpoint (VICK)')
    ev.add_argument('--data', type=str, required=True, help='Dataset directory')
    ev.add_argument('--report', type=str, help='JSON metrics report')

    eq = subparsers.add_parser('check-equivariance', parents=[common],
                               help='Shift-equivariance error and resampling convergence table')
    eq.add_argument('--trials', type=int, default=50, help='Random input/kernel pairs (default: 50)')
    eq.add_argument('--resolution', type=int, default=32, help='Largest map size for the shift test (default: 32)')
    eq.add_argument('--rotations', type=int, default=20, help='Random rotations per resolution (default: 20)')

    gc = subparsers.add_parser('gradcheck', parents=[common], help='Finite-difference gradient checks')
    gc.add_argument('--ops', type=str, default='all', choices=GRADCHECK_OPS, help='Op to check (default: all)')

    pad = subparsers.add_parser('pad-demo', parents=[common], help='Show spherical padding on a symbolic map')
    pad.add_argument('--height', type=int, default=2, help='Map height (default: 2)')
    pad.add_argument('--width', type=int, default=2, help='Map width, even (default: 2)')
    pad.add_argument('--pad', type=int, default=1, help='Pad width (default: 1)')

    dec = subparsers.add_parser('decompose', parents=[common], help='Split a rotation into R_vp and R_ip')
    dec.add_argument('--rotation', type=str, required=True, help='Nine reals, row-major')
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    settings = RuntimeSettings()
    try:
        config = load_config(args, settings)
        log_dir = settings.log_dir if config.logging.jsonl else None
        configure_logging(settings.log_level or config.logging.level, log_dir,
                          config.logging.max_bytes, config.logging.backup_count)
        return COMMANDS[args.command](args, config, settings)
    except FileNotFoundError as e:
        logger.error(f"{args.command}: {e}")
        print(f"✗ File not found: {e}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except NumericError as e:
        logger.error(f"{args.command}: numeric failure (op={e.op}, batch={e.batch_id}): {e}")
        print(f"✗ Numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidFormatError, InvalidArgumentError, DegenerateInputError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"✗ {e}", file=sys.stderr)
        return EXIT_INVALID


def main() -> int:
    load_dotenv()
    return run(sys.argv[1:])


if __name__ == '__main__':
    sys.exit(main())
