import pytest

from cdvft.chain import chain_forward, init_chain
from cdvft.complexity import (
    FLOP_RATIO_CONFLICT,
    AdapterConfig,
    Method,
    calibration_rows,
    count_flops,
    count_params,
    flop_ratio_note,
    format_table,
    layer_set_report,
    make_report,
    short_count,
    sweep_report,
)
from cdvft.errors import ConfigError, SweepError
from cdvft.fft_core import count_ops
from cdvft.layer_sets import get_layer_set


def vit_cdvft(**overrides):
    fields = dict(method=Method.CDVFT, d_out=768, d_in=768, L_t=24, m=2, p=768)
    fields.update(overrides)
    return AdapterConfig(**fields)


# ===== parameter counts =====

def test_cdvft_vit_parameter_count():
    assert count_params(vit_cdvft()) == 55_296


def test_lora_saving_ratio():
    lora = count_params(AdapterConfig(Method.LORA, d_out=768, d_in=768, L_t=24, r=8))
    assert lora == 294_912
    assert round(lora / count_params(vit_cdvft()), 2) == 5.33


@pytest.mark.parametrize('d, m', [(16, 1), (16, 2), (64, 3), (768, 4)])
def test_square_cdvft_is_2m_minus_1_d(d, m):
    cfg = AdapterConfig(Method.CDVFT, d_out=d, d_in=d, L_t=5, m=m, p=d if m > 1 else None)
    assert count_params(cfg) == (2 * m - 1) * d * 5


def test_parameter_count_matches_built_chain():
    for d_out, d_in, m, p in [(24, 40, 2, 8), (40, 24, 3, 8), (5, 3, 2, 4), (11008, 4096, 2, 4096)]:
        cfg = AdapterConfig(Method.CDVFT, d_out=d_out, d_in=d_in, m=m, p=p)
        assert count_params(cfg) == init_chain(cfg, 0).num_params()


def test_block_size_trades_parameters():
    counts = [count_params(vit_cdvft(p=p)) for p in (96, 192, 384, 768)]
    assert counts == sorted(counts, reverse=True)


def test_llama_qv_block_sizes():
    p2048 = layer_set_report(vit_cdvft(p=2048), 'llama2-7b-qv')
    p4096 = layer_set_report(vit_cdvft(p=4096), 'llama2-7b-qv')
    assert p2048.trainable_params == 1_048_576
    assert p4096.trainable_params == 786_432


def test_lora_llama_qv_counts():
    r8 = layer_set_report(AdapterConfig(Method.LORA, d_out=1, d_in=1, r=8), 'alpaca')
    r64 = layer_set_report(AdapterConfig(Method.LORA, d_out=1, d_in=1, r=64), 'alpaca')
    assert r8.trainable_params == 4_194_304
    # the published 33.55M corresponds to r * layers = 4096
    assert r64.trainable_params == 33_554_432


def test_dense_baseline():
    cfg = AdapterConfig(Method.FF, d_out=30, d_in=20, L_t=3)
    assert count_params(cfg) == 30 * 20 * 3
    assert count_flops(cfg) == 2 * 30 * 20 * 3


def test_other_methods():
    assert count_params(AdapterConfig(Method.VERA, d_out=768, d_in=768, r=256)) == 256 + 768
    assert count_params(AdapterConfig(Method.FOURIERFT, d_out=768, d_in=768, n_coeffs=3000)) == 3000


# ===== FLOP counts =====

def test_diagonal_only_flops():
    assert count_flops(AdapterConfig(Method.CDVFT, d_out=4, d_in=4, m=1)) == 4


def test_vit_calibration():
    assert count_flops(vit_cdvft()) == pytest.approx(2.72e6, rel=0.15)
    fourier = AdapterConfig(Method.FOURIERFT, d_out=768, d_in=768, L_t=24, n_coeffs=3000)
    assert count_flops(fourier) == pytest.approx(1.41e9, rel=0.15)


@pytest.mark.parametrize('p, published, amortize, layer_set', [
    (2048, 0.06e9, False, 'llama2-7b-qv'),
    (4096, 0.05e9, False, 'llama2-7b-qv'),
    (2048, 0.22e9, True, 'llama2-7b-mhsa-ffn'),
    (4096, 0.17e9, True, 'llama2-7b-mhsa-ffn'),
])
def test_llama_calibration(p, published, amortize, layer_set):
    report = layer_set_report(vit_cdvft(p=p, amortize_spectra=amortize), layer_set)
    assert report.flops_per_token == pytest.approx(published, rel=0.30)


def test_calibration_rows_within_tolerance():
    rows = calibration_rows()
    checked = [r for r in rows if r['tolerance'] is not None]
    assert len(checked) >= 6
    assert all(r['within_tolerance'] for r in checked), [r['label'] for r in checked]


def test_amortizing_spectra_is_cheaper():
    assert count_flops(vit_cdvft(amortize_spectra=True)) < count_flops(vit_cdvft())


DIVISORS_768 = [p for p in range(1, 769) if 768 % p == 0]


@pytest.mark.parametrize('m', [2, 3])
def test_flops_nonincreasing_over_dividing_block_sizes(m):
    flops = [count_flops(AdapterConfig(Method.CDVFT, d_out=768, d_in=768, m=m, p=p)) for p in DIVISORS_768]
    assert flops == sorted(flops, reverse=True)


def test_padded_block_size_can_cost_more():
    # p=65 pads 768 up to 780
    def square(p):
        return count_flops(AdapterConfig(Method.CDVFT, d_out=768, d_in=768, m=2, p=p))
    assert square(64) == 396_288
    assert square(65) == 403_644


def test_amortized_full_block_is_not_cheapest():
    def amortized(p):
        return count_flops(AdapterConfig(Method.CDVFT, d_out=768, d_in=768, m=2, p=p, amortize_spectra=True))
    assert amortized(384) < amortized(768)


def test_fourierft_ratio_grows_with_dimension():
    ratios = []
    for d in (64, 128, 256, 512, 1024, 2048, 4096):
        cdvft = count_flops(AdapterConfig(Method.CDVFT, d_out=d, d_in=d, m=2, p=d))
        fourier = count_flops(AdapterConfig(Method.FOURIERFT, d_out=d, d_in=d, n_coeffs=1000))
        ratios.append(fourier / cdvft)
    assert all(a < b for a, b in zip(ratios, ratios[1:]))
    assert ratios[0] == pytest.approx(40.5, abs=0.1)


@pytest.mark.parametrize('d', [4, 8, 16, 100, 768])
@pytest.mark.parametrize('m', [1, 2, 3])
def test_counter_matches_model_square(rng, d, m):
    cfg = AdapterConfig(Method.CDVFT, d_out=d, d_in=d, m=m, p=d if m > 1 else None)
    ch = init_chain(cfg, 0)
    with count_ops() as counter:
        chain_forward(ch, rng.standard_normal(d))
    assert counter.flops == count_flops(cfg)


@pytest.mark.parametrize('d_out, d_in, m, p', [(24, 40, 2, 8), (40, 24, 3, 8), (5, 3, 2, 4)])
def test_counter_matches_model_blocked(rng, d_out, d_in, m, p):
    cfg = AdapterConfig(Method.CDVFT, d_out=d_out, d_in=d_in, m=m, p=p)
    ch = init_chain(cfg, 0)
    with count_ops() as counter:
        chain_forward(ch, rng.standard_normal(d_in))
    assert counter.flops == count_flops(cfg)


def test_counter_matches_amortized_model(rng):
    cfg = AdapterConfig(Method.CDVFT, d_out=64, d_in=64, m=3, p=64, amortize_spectra=True)
    ch = init_chain(cfg, 0)
    for circ in ch.circulants:
        circ.spectrum()
    with count_ops() as counter:
        chain_forward(ch, rng.standard_normal(64))
    assert counter.flops == count_flops(cfg)


# ===== validation and reports =====

def test_missing_fields_are_config_errors():
    with pytest.raises(ConfigError):
        count_params(AdapterConfig(Method.LORA, d_out=8, d_in=8))
    with pytest.raises(ConfigError):
        count_params(AdapterConfig(Method.FOURIERFT, d_out=8, d_in=8))
    with pytest.raises(ConfigError):
        AdapterConfig('dora', d_out=8, d_in=8)
    with pytest.raises(ConfigError):
        count_params(AdapterConfig(Method.CDVFT, d_out=8, d_in=8, m=2))


def test_sweep_keeps_order_and_reports_bad_index():
    configs = [vit_cdvft(), AdapterConfig(Method.LORA, d_out=768, d_in=768, L_t=24, r=8)]
    reports = sweep_report(configs)
    assert [r.method for r in reports] == ['cdvft', 'lora']

    with pytest.raises(SweepError) as info:
        sweep_report(configs + [AdapterConfig(Method.VERA, d_out=8, d_in=8)])
    assert info.value.index == 2
    assert info.value.category == 'config'


def test_empty_sweep_is_rejected():
    with pytest.raises(ConfigError):
        sweep_report([])


def test_layer_set_report_sums_groups():
    template = AdapterConfig(Method.FF, d_out=1, d_in=1)
    report = layer_set_report(template, 'gsm8k')
    expected = sum(d_out * d_in * n for d_out, d_in, n in get_layer_set('gsm8k'))
    assert report.trainable_params == expected


def test_format_table_sorted_with_thousands():
    reports = sweep_report([
        AdapterConfig(Method.LORA, d_out=768, d_in=768, L_t=24, r=8),
        vit_cdvft(),
    ])
    table = format_table(reports)
    lines = table.splitlines()
    assert '55,296' in lines[2]
    assert '294,912' in lines[3]


def test_flop_ratio_note_carries_conflict():
    reports = sweep_report([
        vit_cdvft(),
        AdapterConfig(Method.FOURIERFT, d_out=768, d_in=768, L_t=24, n_coeffs=3000),
    ])
    note = flop_ratio_note(reports)
    assert note['note'] == FLOP_RATIO_CONFLICT
    (ratio,) = note['ratios'].values()
    assert 400 < ratio < 600
    assert flop_ratio_note(reports[:1]) is None


def test_short_count():
    assert short_count(55_296) == '0.06M'
    assert short_count(1_386_000_000) == '1.39G'
    assert short_count(512) == '512'


def test_report_record_is_json_friendly():
    record = make_report(vit_cdvft()).to_record()
    assert record['config']['method'] == 'cdvft'
    assert record['trainable_params'] == 55_296
    assert isinstance(record['flops_per_token'], int)
