import json

import numpy as np
import pytest

from cdvft.chain import merge, reconstruct_dense
from cdvft.checkpoint import load_checkpoint, load_dense, save_dense
from cdvft.cli import cli_dispatch


def records(text):
    return [json.loads(line) for line in text.splitlines() if line.startswith('{')]


def run(capsys, *argv):
    code = cli_dispatch(list(argv))
    out = capsys.readouterr().out
    return code, out, records(out)


# ===== bench =====

def test_bench_vit_parameter_count(capsys):
    code, out, recs = run(capsys, 'bench', '--method', 'cdvft', '--d', '768', '--m', '2', '--p', '768', '--layers', '24')
    assert code == 0
    assert '55,296' in out
    assert recs[0]['record'] == 'complexity'
    assert recs[0]['trainable_params'] == 55_296


def test_bench_layer_set_with_ratio_note(capsys):
    code, out, recs = run(capsys, '--format', 'jsonl', 'bench', '--layer-set', 'vit', '--method', 'cdvft',
                          '--method', 'fourierft', '--n-coeffs', '3000', '--p', '768')
    assert code == 0
    assert [r['record'] for r in recs] == ['complexity', 'complexity', 'flop_ratio']
    assert '518' in recs[-1]['note']
    assert all(line.startswith('{') for line in out.splitlines())


def test_bench_repeated_block_sizes(capsys):
    code, _, recs = run(capsys, '--format', 'jsonl', 'bench', '--layer-set', 'llama-qv', '--p', '2048', '--p', '4096')
    assert code == 0
    assert [r['trainable_params'] for r in recs] == [1_048_576, 786_432]


def test_bench_calibration(capsys):
    code, out, recs = run(capsys, 'bench', '--calibration')
    assert code == 0
    calibration = [r for r in recs if r['record'] == 'calibration']
    assert all(r['within_tolerance'] in (True, None) for r in calibration)


def test_bench_missing_rank_is_config_error(capsys):
    code, _, recs = run(capsys, 'bench', '--method', 'lora')
    assert code == 1
    assert recs[-1] == {'record': 'error', 'category': 'config', 'message': recs[-1]['message']}


def test_bench_output_is_reproducible(capsys):
    argv = ['--format', 'jsonl', 'bench', '--method', 'vera', '--method', 'lora', '--r', '16', '--layers', '24']
    first = run(capsys, *argv)[1]
    second = run(capsys, *argv)[1]
    assert first == second


# ===== usage errors =====

@pytest.mark.parametrize('argv', [
    ['serve'],
    ['bench', '--frobnicate'],
    ['gradcheck', '--d', 'sixteen'],
    [],
    ['--format', 'xml', 'bench'],
])
def test_usage_errors_exit_2(capsys, argv):
    code, _, recs = run(capsys, *argv)
    assert code == 2
    assert recs[-1]['category'] == 'usage'


def test_help_exits_cleanly(capsys):
    assert cli_dispatch(['--help']) == 0
    assert 'gradcheck' in capsys.readouterr().out


# ===== gradcheck =====

def test_gradcheck_passes(capsys):
    code, out, recs = run(capsys, 'gradcheck', '--d', '16', '--m', '2', '--seed', '1')
    assert code == 0
    assert 'FAIL' not in out
    assert {r['kind'] for r in recs} == {'diagonal', 'circulant', 'block-circulant', 'chain'}
    assert all(r['passed'] and r['max_rel_error'] < 1e-5 for r in recs)


def test_gradcheck_non_square(capsys):
    code, _, _ = run(capsys, 'gradcheck', '--d-out', '6', '--d-in', '10', '--p', '4', '--trials', '2')
    assert code == 0


# ===== train / merge / export-dense =====

def test_train_recovery_reaches_target(capsys, tmp_path):
    code, _, recs = run(capsys, '--format', 'jsonl', 'train', '--task', 'matrix-recovery', '--d', '32',
                        '--steps', '2000', '--output-dir', str(tmp_path))
    assert code == 0
    (record,) = recs
    assert record['final_relative_error'] < 1e-2
    assert record['succeeded']
    assert (tmp_path / 'matrix_recovery_adapter.cdvf').exists()
    saved = json.loads((tmp_path / 'train_matrix_recovery_latest.json').read_text())
    assert len(saved['losses']) == 2000
    assert 'export_date' in saved


def test_train_output_is_reproducible(capsys, tmp_path):
    argv = ['--format', 'jsonl', 'train', '--d', '8', '--steps', '20', '--output-dir', str(tmp_path)]
    assert run(capsys, *argv)[1] == run(capsys, *argv)[1]


def test_train_from_config_file(capsys, tmp_path):
    config = tmp_path / 'run.json'
    config.write_text(json.dumps({
        'command': 'train',
        'output_dir': str(tmp_path),
        'task': {'kind': 'frozen_linear_regression', 'd_out': 12, 'd_in': 8, 'steps': 30, 'log_every': 0},
    }))
    code, _, recs = run(capsys, '--format', 'jsonl', 'train', '--config', str(config))
    assert code == 0
    assert recs[0]['kind'] == 'frozen_linear_regression'
    assert recs[0]['final_test_loss'] is not None


def test_train_config_with_unknown_key(capsys, tmp_path):
    config = tmp_path / 'run.json'
    config.write_text(json.dumps({'command': 'train', 'momentum': 0.9}))
    code, _, recs = run(capsys, 'train', '--config', str(config))
    assert code == 1
    assert recs[-1]['category'] == 'config'


def test_merge_and_export_dense(capsys, tmp_path, rng):
    checkpoint = tmp_path / 'adapter.cdvf'
    assert run(capsys, 'train', '--d-out', '12', '--d-in', '8', '--p', '4', '--steps', '30',
               '--output-dir', str(tmp_path), '--checkpoint', str(checkpoint))[0] == 0
    ch = load_checkpoint(checkpoint)

    weights = tmp_path / 'w.dense'
    W = rng.standard_normal((12, 8))
    save_dense(W, weights)
    merged_path = tmp_path / 'merged.dense'
    code, _, recs = run(capsys, '--format', 'jsonl', 'merge', '--checkpoint', str(checkpoint),
                        '--weights', str(weights), '--output', str(merged_path))
    assert code == 0
    assert recs[0]['check_error'] <= 1e-9
    np.testing.assert_array_equal(load_dense(merged_path), merge(W, ch))

    exported = tmp_path / 'delta.dense'
    code, _, _ = run(capsys, 'export-dense', '--checkpoint', str(checkpoint), '--output', str(exported))
    assert code == 0
    np.testing.assert_array_equal(load_dense(exported), reconstruct_dense(ch))


def test_merge_missing_checkpoint_is_io_error(capsys, tmp_path):
    code, _, recs = run(capsys, 'merge', '--checkpoint', str(tmp_path / 'none.cdvf'),
                        '--weights', str(tmp_path / 'w.dense'))
    assert code == 1
    assert recs[-1]['category'] == 'io'


def test_merge_shape_mismatch(capsys, tmp_path, rng):
    checkpoint = tmp_path / 'adapter.cdvf'
    run(capsys, 'train', '--d', '8', '--steps', '5', '--output-dir', str(tmp_path), '--checkpoint', str(checkpoint))
    save_dense(rng.standard_normal((8, 9)), tmp_path / 'w.dense')
    code, _, recs = run(capsys, 'merge', '--checkpoint', str(checkpoint), '--weights', str(tmp_path / 'w.dense'),
                        '--output-dir', str(tmp_path))
    assert code == 1
    assert recs[-1]['category'] == 'shape'


# ===== compare =====

def test_compare_table(capsys):
    code, out, recs = run(capsys, 'compare', '--dims', '8', '16', '--repeats', '2')
    assert code == 0
    assert [r['record'] for r in recs] == ['compare', 'compare', 'crossover']
    assert 'crossover' in out
