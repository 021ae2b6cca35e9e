"""
=============================================================================
CDVFT COMMAND LINE
=============================================================================

PURPOSE:
    One entry point for everything the library does.

COMMANDS:
    gradcheck      finite-difference suite, max relative error per factor kind
    bench          parameter / FLOP accounting across methods and layer sets
    train          toy training run, writes a TrainLog and a checkpoint
    merge          checkpoint + dense W file -> merged dense matrix
    compare        FFT path vs reconstruct-then-matvec timings
    export-dense   checkpoint -> alpha * dW as a dense matrix file

OUTPUT:
    stdout   aligned tables and/or one JSON record per line (--format)
    stderr   logs
    files    output/json/<name>_<TIMESTAMP>.json and <name>_latest.json

EXIT CODES:
    0 success, 1 computational failure, 2 usage error

HOW TO USE:
    python -m cdvft bench --method cdvft --d 768 --m 2 --p 768 --layers 24
    python -m cdvft gradcheck --d 16 --m 2 --seed 1
    python -m cdvft train --task matrix-recovery --d 32 --steps 2000
"""

# =============================================================================
# IMPORTS
# =============================================================================
import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime

import numpy as np

from cdvft.chain import adapter_apply, chain_forward, merge, reconstruct_dense
from cdvft.checkpoint import load_checkpoint, load_dense, save_checkpoint, save_dense
from cdvft.complexity import (
    AdapterConfig,
    Method,
    calibration_rows,
    count_flops,
    flop_ratio_note,
    format_calibration,
    format_table,
    layer_set_report,
    sweep_report,
)
from cdvft.config import DEFAULT_OUTPUT_DIR, RunConfig
from cdvft.errors import CdvftError, ConfigError, GradientCheckError, NumericalCorruptionError, UsageError
from cdvft.gradcheck import DEFAULT_TOL, random_chain, run_suite
from cdvft.layer_sets import get_layer_set
from cdvft.trainer import DEFAULT_LR, ToyTask, default_config, run_frozen_linear, run_matrix_recovery

# =============================================================================
# LOGGING CONFIGURATION
# =============================================================================
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
logger = logging.getLogger(__name__)

# =============================================================================
# CONFIGURATION CONSTANTS
# =============================================================================
FORMATS = ('table', 'jsonl', 'both')
TASK_ALIASES = {
    'matrix-recovery': 'matrix_recovery',
    'frozen-linear': 'frozen_linear_regression',
}
DEFAULT_COMPARE_DIMS = [16, 32, 64, 128, 256, 512]
MERGE_CHECK_COLUMNS = 4
MERGE_CHECK_TOL = 1e-9


# =============================================================================
# OUTPUT HELPERS
# =============================================================================

class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports bad flags as UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


class Output:
    """Routes tables and JSON records to stdout according to --format."""

    def __init__(self, fmt='both'):
        self.fmt = fmt

    def record(self, data):
        if self.fmt in ('jsonl', 'both'):
            print(json.dumps(data, sort_keys=True, default=_plain))

    def table(self, text):
        if self.fmt in ('table', 'both'):
            print(text)


def save_json(data, filename, output_dir=DEFAULT_OUTPUT_DIR):
    """
    Save a Python dictionary to <output_dir>/<filename>_<TIMESTAMP>.json and
    refresh <output_dir>/<filename>_latest.json.
    """
    os.makedirs(output_dir, exist_ok=True)
    timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
    data = {'export_date': datetime.now().isoformat(), **data}

    paths = []
    for suffix in (timestamp, 'latest'):
        filepath = os.path.join(output_dir, f'{filename}_{suffix}.json')
        try:
            with open(filepath, 'w', encoding='utf-8') as f:
                json.dump(data, f, indent=2, default=_plain, ensure_ascii=False)
        except OSError as e:
            raise ConfigError(f"cannot write {filepath}: {e}") from e
        logger.info(f"Saved: {filepath}")
        paths.append(filepath)
    return paths[0]


def _dims(args):
    """--d sets both sides; --d-out / --d-in override one side."""
    d_out = args.d_out if args.d_out is not None else args.d
    d_in = args.d_in if args.d_in is not None else args.d
    return d_out, d_in


# =============================================================================
# COMMANDS
# =============================================================================

def cmd_gradcheck(args, out):
    d_out, d_in = _dims(args)
    cfg = RunConfig('gradcheck', seed=args.seed, tolerance=args.tol, trials=args.trials,
                    adapter=AdapterConfig(Method.CDVFT, d_out=d_out, d_in=d_in, m=args.m,
                                          p=args.p or max(d_out, d_in))).validate()
    adapter = cfg.adapter
    logger.info(f"Gradient check: {d_out}x{d_in}, m={adapter.m}, p={adapter.p}, "
                f"seed={cfg.seed}, {cfg.trials} trial(s)")

    rows = run_suite(d_out, d_in, adapter.m, adapter.p, cfg.seed, cfg.trials)
    lines = [f"{'Factor kind':<16} {'Trials':>6} {'Max rel. error':>15}  Status", '-' * 48]
    failed = []
    for row in rows:
        passed = row['max_rel_error'] < cfg.tolerance
        if not passed:
            failed.append(row['kind'])
        lines.append(f"{row['kind']:<16} {row['trials']:>6} {row['max_rel_error']:>15.3e}  "
                     f"{'PASS' if passed else 'FAIL'}")
        out.record({'record': 'gradcheck', 'kind': row['kind'], 'trials': row['trials'],
                    'max_rel_error': row['max_rel_error'], 'tolerance': cfg.tolerance,
                    'passed': passed})
    out.table('\n'.join(lines))

    if failed:
        raise GradientCheckError(f"gradient check failed for: {', '.join(failed)}")
    return 0


def _bench_configs(args):
    methods = args.method or [Method.CDVFT.value]
    p_values = args.p or [None]
    d_out, d_in = _dims(args)
    if args.layer_set:
        first_out, first_in, _ = get_layer_set(args.layer_set)[0]
        default_p = max(first_out, first_in)
    else:
        default_p = max(d_out, d_in)

    configs = []
    for method in methods:
        base = dict(method=method, d_out=d_out, d_in=d_in, L_t=args.layers, m=args.m,
                    r=args.r, n_coeffs=args.n_coeffs, amortize_spectra=args.amortize_spectra)
        if Method(method) is Method.CDVFT:
            for p in p_values:
                configs.append(AdapterConfig(**base, p=None if args.m == 1 else (p or default_p)))
        else:
            configs.append(AdapterConfig(**base))
    return configs


def cmd_bench(args, out):
    cfg = RunConfig('bench', adapters=_bench_configs(args), layer_set=args.layer_set).validate()

    if cfg.layer_set:
        logger.info(f"Bench over layer set {cfg.layer_set}")
        reports = [layer_set_report(template, cfg.layer_set) for template in cfg.adapters]
    else:
        reports = sweep_report(cfg.adapters)

    out.table(format_table(reports))
    for report in reports:
        out.record(report.to_record())

    note = flop_ratio_note(reports)
    if note:
        out.record(note)
        for label, ratio in note['ratios'].items():
            out.table(f"FLOP ratio {label}: {ratio:,.2f}x")
        out.table(f"note: {note['note']}")

    if args.calibration:
        rows = calibration_rows()
        out.table('')
        out.table(format_calibration(rows))
        for row in rows:
            out.record(row)
        outside = [r['label'] for r in rows if r['within_tolerance'] is False]
        if outside:
            logger.warning(f"Calibration outside tolerance: {', '.join(outside)}")
    return 0


def _train_config(args):
    if args.config:
        cfg = RunConfig.from_json_file(args.config)
        if cfg.command != 'train' or cfg.task is None:
            raise ConfigError(f"{args.config}: a train config needs command='train' and a task")
        if cfg.adapter is None:
            cfg.adapter = default_config(cfg.task.d_out, cfg.task.d_in)
        return cfg.validate()

    d_out, d_in = _dims(args)
    task = ToyTask(kind=TASK_ALIASES[args.task], d_out=d_out, d_in=d_in, batch_size=args.batch,
                   steps=args.steps, seed=args.seed, schedule=args.schedule,
                   verify_every=args.verify_every)
    adapter = AdapterConfig(Method.CDVFT, d_out=d_out, d_in=d_in, m=args.m,
                            p=None if args.m == 1 else (args.p or max(d_out, d_in)), alpha=args.alpha)
    return RunConfig('train', seed=args.seed, adapter=adapter, task=task, lr=args.lr,
                     output_dir=args.output_dir, checkpoint_path=args.checkpoint).validate()


def cmd_train(args, out):
    cfg = _train_config(args)
    task = cfg.task

    logger.info("=" * 60)
    logger.info(f"TRAIN: {task.kind}")
    logger.info("=" * 60)

    runner = run_matrix_recovery if task.kind == 'matrix_recovery' else run_frozen_linear
    log = runner(cfg.adapter, task, lr=cfg.lr)

    checkpoint = cfg.checkpoint_path or os.path.join(cfg.output_dir, f'{task.kind}_adapter.cdvf')
    save_checkpoint(log.adapter, checkpoint)

    summary = log.to_dict()
    save_json({'adapter': cfg.adapter.to_dict(), 'lr': cfg.lr, 'checkpoint': str(checkpoint), **summary},
              f'train_{task.kind}', cfg.output_dir)

    summary.pop('losses')
    out.record({'record': 'train', 'checkpoint': str(checkpoint), **summary})

    logger.info("=" * 60)
    logger.info("SUMMARY")
    logger.info("=" * 60)
    if log.final_relative_error is not None:
        out.table(f"final relative error: {log.final_relative_error:.3e}")
    if log.final_test_loss is not None:
        out.table(f"test loss: {log.initial_test_loss:.3e} -> {log.final_test_loss:.3e}")
    out.table(f"converged: {'yes' if log.succeeded else 'no'}")
    if not log.succeeded:
        logger.warning("Run finished without reaching its target")
    return 0


def cmd_merge(args, out):
    cfg = RunConfig('merge', seed=args.seed, checkpoint_path=args.checkpoint,
                    weights_path=args.weights, output_path=args.output,
                    output_dir=args.output_dir).validate()
    ch = load_checkpoint(cfg.checkpoint_path)
    W = load_dense(cfg.weights_path)
    merged = merge(W, ch)

    # merged @ x must equal W x + alpha * dW x on the FFT path
    x = np.random.default_rng(cfg.seed).standard_normal((ch.d_in, MERGE_CHECK_COLUMNS))
    reference = adapter_apply(W, ch, x)
    error = float(np.max(np.abs(merged @ x - reference)))
    if error > MERGE_CHECK_TOL * max(1.0, float(np.max(np.abs(reference)))):
        raise NumericalCorruptionError(f"merged matrix disagrees with the adapter path by {error:.3e}")

    target = cfg.output_path or os.path.join(cfg.output_dir, 'merged.dense')
    save_dense(merged, target)
    out.record({'record': 'merge', 'rows': merged.shape[0], 'cols': merged.shape[1],
                'max_abs_update': float(np.max(np.abs(merged - W))), 'check_error': error,
                'output': str(target)})
    out.table(f"merged {merged.shape[0]}x{merged.shape[1]} -> {target} (check error {error:.2e})")
    return 0


def cmd_export_dense(args, out):
    cfg = RunConfig('export-dense', checkpoint_path=args.checkpoint, output_path=args.output,
                    output_dir=args.output_dir).validate()
    ch = load_checkpoint(cfg.checkpoint_path)
    dense = reconstruct_dense(ch)
    target = cfg.output_path or os.path.join(cfg.output_dir, 'adapter.dense')
    save_dense(dense, target)
    out.record({'record': 'export-dense', 'rows': dense.shape[0], 'cols': dense.shape[1],
                'frobenius_norm': float(np.linalg.norm(dense)), 'output': str(target)})
    out.table(f"alpha * dW ({dense.shape[0]}x{dense.shape[1]}) -> {target}")
    return 0


def _time_per_call(fun, repeats):
    start = time.perf_counter()
    for _ in range(repeats):
        fun()
    return (time.perf_counter() - start) / repeats


def cmd_compare(args, out):
    cfg = RunConfig('compare', seed=args.seed, dims=args.dims or DEFAULT_COMPARE_DIMS,
                    repeats=args.repeats).validate()
    rng = np.random.default_rng(cfg.seed)

    lines = [
        f"{'d':>6} {'FLOPs (FFT)':>14} {'FFT path us':>12} {'rebuild+mv us':>14} {'dense mv us':>12}  Faster",
        '-' * 72,
    ]
    crossover = None
    for d in cfg.dims:
        m = min(args.m, d)
        ch = random_chain(rng, d, d, m, d if m > 1 else None)
        x = rng.standard_normal(d)
        dense = reconstruct_dense(ch)
        flops = count_flops(AdapterConfig(Method.CDVFT, d_out=d, d_in=d, m=m, p=d if m > 1 else None))

        fft_time = _time_per_call(lambda: chain_forward(ch, x), cfg.repeats)
        rebuild_time = _time_per_call(lambda: reconstruct_dense(ch) @ x, cfg.repeats)
        dense_time = _time_per_call(lambda: dense @ x, cfg.repeats)
        faster = 'fft' if fft_time < rebuild_time else 'rebuild'
        if faster == 'fft' and crossover is None:
            crossover = d

        lines.append(f"{d:>6} {flops:>14,} {fft_time * 1e6:>12.1f} {rebuild_time * 1e6:>14.1f} "
                     f"{dense_time * 1e6:>12.1f}  {faster}")
        # timings live under 'timing' and are not reproducible run to run
        out.record({'record': 'compare', 'd': d, 'm': m, 'flops_fft': flops,
                    'timing': {'fft_s': fft_time, 'rebuild_matvec_s': rebuild_time,
                               'dense_matvec_s': dense_time}})

    out.table('\n'.join(lines))
    out.table(f"crossover: {crossover if crossover is not None else 'not reached'}")
    out.record({'record': 'crossover', 'timing': {'d': crossover}})
    return 0


COMMANDS = {
    'gradcheck': cmd_gradcheck,
    'bench': cmd_bench,
    'train': cmd_train,
    'merge': cmd_merge,
    'compare': cmd_compare,
    'export-dense': cmd_export_dense,
}


# =============================================================================
# ARGUMENT PARSING
# =============================================================================

def _add_dims(parser, default_d):
    parser.add_argument('--d', type=int, default=default_d, help='Square layer size')
    parser.add_argument('--d-out', type=int, default=None, help='Output size (overrides --d)')
    parser.add_argument('--d-in', type=int, default=None, help='Input size (overrides --d)')


def build_parser():
    parser = _Parser(prog='cdvft', description='Circulant-diagonal adapter toolkit')
    parser.add_argument('--verbose', action='store_true', help='Debug logging')
    parser.add_argument('--quiet', action='store_true', help='Warnings and errors only')
    parser.add_argument('--format', choices=FORMATS, default='both',
                        help='Tables, JSON lines, or both on stdout')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gradcheck', help='Finite-difference gradient suite')
    _add_dims(p, 16)
    p.add_argument('--m', type=int, default=2, help='Number of diagonal factors')
    p.add_argument('--p', type=int, default=None, help='Circulant block size')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--trials', type=int, default=3)
    p.add_argument('--tol', type=float, default=DEFAULT_TOL, help='Max relative error')

    p = sub.add_parser('bench', help='Parameter and FLOP accounting')
    _add_dims(p, 768)
    p.add_argument('--method', action='append', choices=[m.value for m in Method],
                   help='Adapter method (repeatable, default cdvft)')
    p.add_argument('--m', type=int, default=2)
    p.add_argument('--p', type=int, action='append', help='Block size (repeatable)')
    p.add_argument('--r', type=int, default=None, help='Rank for lora / vera')
    p.add_argument('--n-coeffs', type=int, default=None, help='Spectral coefficients for fourierft')
    p.add_argument('--layers', type=int, default=1, help='Number of adapted layers')
    p.add_argument('--layer-set', default=None, help='Named layer set (vit, roberta, llama-qv, gsm8k, ...)')
    p.add_argument('--amortize-spectra', action='store_true',
                   help='Count generator FFTs once, not per token')
    p.add_argument('--calibration', action='store_true',
                   help='Also print the published reference figures')

    p = sub.add_parser('train', help='Toy training run')
    p.add_argument('--task', choices=sorted(TASK_ALIASES), default='matrix-recovery')
    _add_dims(p, 32)
    p.add_argument('--m', type=int, default=2)
    p.add_argument('--p', type=int, default=None)
    p.add_argument('--alpha', type=float, default=1.0)
    p.add_argument('--steps', type=int, default=2000)
    p.add_argument('--lr', type=float, default=DEFAULT_LR)
    p.add_argument('--batch', type=int, default=64)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--schedule', choices=['cosine', 'constant'], default='cosine')
    p.add_argument('--verify-every', type=int, default=0,
                   help='Spot-check gradients every N steps (0 = never)')
    p.add_argument('--output-dir', default=DEFAULT_OUTPUT_DIR)
    p.add_argument('--checkpoint', default=None, help='Checkpoint path')
    p.add_argument('--config', default=None, help='RunConfig JSON file (replaces the flags above)')

    p = sub.add_parser('merge', help='Fold an adapter into dense weights')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--weights', required=True, help='Dense W file')
    p.add_argument('--output', default=None)
    p.add_argument('--output-dir', default=DEFAULT_OUTPUT_DIR)
    p.add_argument('--seed', type=int, default=0, help='Seed for the merge check inputs')

    p = sub.add_parser('compare', help='Time the FFT path against dense reconstruction')
    p.add_argument('--dims', type=int, nargs='+', default=None)
    p.add_argument('--m', type=int, default=2)
    p.add_argument('--repeats', type=int, default=20)
    p.add_argument('--seed', type=int, default=0)

    p = sub.add_parser('export-dense', help='Write alpha * dW as a dense matrix')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--output', default=None)
    p.add_argument('--output-dir', default=DEFAULT_OUTPUT_DIR)

    return parser


# =============================================================================
# MAIN FUNCTION
# =============================================================================

def _emit_error(error):
    print(json.dumps(error.to_record(), sort_keys=True))


def cli_dispatch(argv=None):
    """Parse argv, run one command, return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        _emit_error(e)
        return e.exit_code
    except SystemExit as e:
        return e.code or 0

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr)
    logging.getLogger('cdvft').setLevel(level)

    out = Output(args.format)
    try:
        return COMMANDS[args.command](args, out)
    except CdvftError as e:
        logger.error(f"{args.command} failed [{e.category}]: {e}")
        _emit_error(e)
        return e.exit_code


def main():
    return cli_dispatch()


if __name__ == '__main__':
    sys.exit(main())
