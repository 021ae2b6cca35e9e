#!/usr/bin/env python3
"""
CDVFT - Acceptance Verification Script

Run this script after changing any factor, the FLOP model or the trainer.
Usage: python scripts/verify_acceptance.py [--seed N] [--quick]

This script checks:
1. FFT-path forward against dense reconstruction
2. Analytic gradients against central finite differences
3. Conjugate backward against the shifted-vector backward
4. Exact trainable-parameter counts
5. FLOP model against the published reference figures
6. Matrix recovery on a realizable target
7. Merge soundness and checkpoint round trip
8. Operation counters against the FLOP model
"""

import argparse
import os
import sys
import tempfile
import time
from datetime import datetime
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from cdvft.chain import adapter_apply, chain_forward, init_chain, merge, reconstruct_dense  # noqa: E402
from cdvft.checkpoint import load_checkpoint, save_checkpoint  # noqa: E402
from cdvft.complexity import (  # noqa: E402
    FLOP_RATIO_CONFLICT,
    AdapterConfig,
    Method,
    calibration_rows,
    count_flops,
    count_params,
)
from cdvft.factors import CirculantFactor, circ_backward, circ_backward_shifted  # noqa: E402
from cdvft.fft_core import count_ops  # noqa: E402
from cdvft.gradcheck import DEFAULT_TOL, check_chain, random_chain  # noqa: E402
from cdvft.trainer import RECOVERY_TARGET, ToyTask, default_config, run_matrix_recovery  # noqa: E402

# Configuration - trial counts per section (full, quick)
TRIALS = {
    'oracle': (1000, 100),
    'gradient': (50, 10),
    'conjugate': (100, 20),
    'merge': (20, 5),
}
ORACLE_TOL = 1e-10
MERGE_TOL = 1e-9
NON_SQUARE = [(24, 40, 8), (40, 24, 8), (12, 20, 5), (7, 13, 4), (64, 32, 16), (30, 30, 7)]


def print_header(title):
    """Print a section header."""
    print()
    print('=' * 100)
    print(f'  {title}')
    print('=' * 100)


def print_divider():
    """Print a divider line."""
    print('-' * 100)


def random_shape(rng):
    """(d_out, d_in, m, p): square with p = d, or one of the blocked triples."""
    if rng.random() < 0.5:
        d = int(rng.integers(4, 65))
        m = int(rng.integers(1, 5))
        return d, d, m, (d if m > 1 else None)
    d_out, d_in, p = NON_SQUARE[int(rng.integers(len(NON_SQUARE)))]
    return d_out, d_in, int(rng.integers(2, 5)), p


def max_relative(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


# ========== SECTION CHECKS ==========

def check_oracle(rng, trials):
    worst = 0.0
    for _ in range(trials):
        d_out, d_in, m, p = random_shape(rng)
        ch = random_chain(rng, d_in, d_out, m, p)
        x = rng.standard_normal(d_in)
        fast, _ = chain_forward(ch, x)
        worst = max(worst, max_relative(fast, reconstruct_dense(ch) @ x))
    return worst <= ORACLE_TOL, f'{trials} chains, max rel. error {worst:.2e} (limit {ORACLE_TOL:.0e})'


def check_gradients(rng, trials):
    worst = 0.0
    for trial in range(trials):
        d_out, d_in, m, p = random_shape(rng)
        d_out, d_in = min(d_out, 24), min(d_in, 24)
        p = None if m == 1 else min(p or max(d_out, d_in), max(d_out, d_in))
        if m == 1:
            d_in = d_out
        ch = random_chain(rng, d_in, d_out, m, p)
        errors = check_chain(ch, rng, batch=None if trial % 2 else 3)
        worst = max(worst, *errors.values())
    return worst <= DEFAULT_TOL, f'{trials} configs, max rel. error {worst:.2e} (limit {DEFAULT_TOL:.0e})'


def check_conjugate(rng, trials):
    worst = 0.0
    for trial in range(trials):
        p = int(rng.integers(2, 65))
        f = CirculantFactor(rng.standard_normal(p))
        shape = (p,) if trial % 2 == 0 else (p, 3)
        x, g = rng.standard_normal(shape), rng.standard_normal(shape)
        a, b = circ_backward(f, x, g), circ_backward_shifted(f, x, g)
        worst = max(worst, max_relative(a.d_params, b.d_params), max_relative(a.d_input, b.d_input))
    return worst <= ORACLE_TOL, f'{trials} circulants, max difference {worst:.2e} (limit {ORACLE_TOL:.0e})'


def check_param_counts():
    cdvft = count_params(AdapterConfig(Method.CDVFT, d_out=768, d_in=768, L_t=24, m=2, p=768))
    lora = count_params(AdapterConfig(Method.LORA, d_out=768, d_in=768, L_t=24, r=8))
    ratio = lora / cdvft
    ok = cdvft == 55_296 and lora == 294_912 and abs(ratio - 5.33) < 0.005
    return ok, f'CDVFT {cdvft:,}  LoRA r=8 {lora:,}  ratio {ratio:.2f}x'


def check_calibration():
    rows = [r for r in calibration_rows() if r['tolerance'] is not None]
    for r in rows:
        mark = 'ok' if r['within_tolerance'] else 'OUT'
        print(f'    {r["label"]:<50} {r["flops"]:>16,} {r["flops_deviation"]:>+8.1%}  '
              f'(tol {r["tolerance"]:.0%}) {mark}')
    print(f'    note: {FLOP_RATIO_CONFLICT}')
    outside = [r['label'] for r in rows if not r['within_tolerance']]
    return not outside, f'{len(rows) - len(outside)}/{len(rows)} figures within tolerance'


def check_recovery(seed):
    cfg = default_config(32, 32, m=2)
    task = ToyTask('matrix_recovery', 32, 32, steps=2000, seed=seed, log_every=0)
    start = time.perf_counter()
    first = run_matrix_recovery(cfg, task)
    elapsed = time.perf_counter() - start
    short = ToyTask('matrix_recovery', 32, 32, steps=50, seed=seed, log_every=0)
    deterministic = run_matrix_recovery(cfg, short).losses == run_matrix_recovery(cfg, short).losses
    ok = first.final_relative_error < RECOVERY_TARGET and deterministic
    return ok, (f'relative error {first.final_relative_error:.2e} (limit {RECOVERY_TARGET:.0e}), '
                f'{elapsed:.1f}s, deterministic: {"yes" if deterministic else "NO"}')


def check_merge(rng, trials):
    worst, exact = 0.0, True
    with tempfile.TemporaryDirectory() as tmp:
        for trial in range(trials):
            d_out, d_in, m, p = random_shape(rng)
            ch = random_chain(rng, d_in, d_out, m, p)
            ch.seed = trial
            path = os.path.join(tmp, f'adapter_{trial}.cdvf')
            save_checkpoint(ch, path)
            loaded = load_checkpoint(path)
            exact &= all(np.array_equal(a, b) for a, b in zip(ch.parameters(), loaded.parameters()))
            exact &= loaded.alpha == ch.alpha

            W = rng.standard_normal((d_out, d_in))
            x = rng.standard_normal((d_in, 4))
            worst = max(worst, max_relative(merge(W, loaded) @ x, adapter_apply(W, ch, x)))
    ok = exact and worst <= MERGE_TOL
    return ok, f'{trials} checkpoints, merge error {worst:.2e}, bit-exact round trip: {"yes" if exact else "NO"}'


def check_counters(rng):
    mismatches = []
    for d in (8, 16, 64, 100, 768):
        for m in (1, 2, 3):
            cfg = AdapterConfig(Method.CDVFT, d_out=d, d_in=d, m=m, p=d if m > 1 else None)
            ch = init_chain(cfg, int(rng.integers(2**31)))
            x = rng.standard_normal(d)
            with count_ops() as counter:
                chain_forward(ch, x)
            if counter.flops != count_flops(cfg):
                mismatches.append(f'd={d} m={m}: counted {counter.flops}, model {count_flops(cfg)}')
    for item in mismatches:
        print(f'    [X] {item}')
    return not mismatches, f'15 square configs, {len(mismatches)} mismatch(es)'


def main():
    """Main verification routine."""
    parser = argparse.ArgumentParser(description='CDVFT acceptance verification')
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--quick', action='store_true', help='Reduced trial counts')
    args = parser.parse_args()

    column = 1 if args.quick else 0
    trials = {name: counts[column] for name, counts in TRIALS.items()}
    rng = np.random.default_rng(args.seed)

    print()
    print_header('CDVFT - ACCEPTANCE VERIFICATION REPORT')
    print(f'  Report Date: {datetime.now().strftime("%Y-%m-%d %H:%M")}')
    print(f'  Seed: {args.seed}{"  (quick)" if args.quick else ""}')
    print('=' * 100)

    sections = [
        ('SECTION 1: FFT PATH VS DENSE RECONSTRUCTION', lambda: check_oracle(rng, trials['oracle'])),
        ('SECTION 2: GRADIENTS VS FINITE DIFFERENCES', lambda: check_gradients(rng, trials['gradient'])),
        ('SECTION 3: CONJUGATE VS SHIFTED-VECTOR BACKWARD', lambda: check_conjugate(rng, trials['conjugate'])),
        ('SECTION 4: TRAINABLE PARAMETER COUNTS', check_param_counts),
        ('SECTION 5: FLOP MODEL CALIBRATION', check_calibration),
        ('SECTION 6: MATRIX RECOVERY', lambda: check_recovery(args.seed)),
        ('SECTION 7: MERGE AND CHECKPOINT ROUND TRIP', lambda: check_merge(rng, trials['merge'])),
        ('SECTION 8: OPERATION COUNTERS VS FLOP MODEL', lambda: check_counters(rng)),
    ]

    results = []
    for title, check in sections:
        print_header(title)
        print_divider()
        start = time.perf_counter()
        try:
            ok, detail = check()
        except Exception as e:
            ok, detail = False, f'raised {type(e).__name__}: {e}'
        print(f'  {"PASS" if ok else "FAIL":<6} {detail}')
        print(f'  ({time.perf_counter() - start:.1f}s)')
        results.append((title, ok))

    # ========== SUMMARY ==========
    print_header('VERIFICATION SUMMARY')
    print_divider()
    for title, ok in results:
        print(f'  {title.split(": ", 1)[1]:<50} {"PASS" if ok else "FAIL":>6}')
    print_divider()

    failed = [title for title, ok in results if not ok]
    if failed:
        print(f'STATUS: {len(failed)} SECTION(S) FAILED - Review required')
        return 1
    print('STATUS: ALL CRITERIA MET')
    return 0


if __name__ == '__main__':
    sys.exit(main())
