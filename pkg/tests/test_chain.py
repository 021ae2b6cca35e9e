import numpy as np
import pytest
from numpy.testing import assert_allclose

from cdvft.chain import (
    FactorChain,
    adapter_apply,
    build_chain,
    chain_backward,
    chain_forward,
    init_chain,
    merge,
    reconstruct_dense,
    rescale_alpha,
)
from cdvft.complexity import AdapterConfig, Method
from cdvft.errors import ConfigError, InvalidTapeError, ShapeError
from cdvft.factors import BlockCirculantFactor, CirculantFactor, DiagonalFactor
from cdvft.fft_core import count_ops
from cdvft.gradcheck import check_chain, random_chain

SHAPES = [
    # (d_out, d_in, m, p)
    (8, 8, 1, None),
    (8, 8, 2, 8),
    (16, 16, 3, 16),
    (12, 12, 4, 12),
    (16, 16, 2, 4),
    (24, 40, 2, 8),
    (40, 24, 3, 8),
    (5, 3, 2, 4),
    (6, 10, 2, 4),
]


def cdvft_config(d_out, d_in, m=2, p=None, alpha=1.0):
    return AdapterConfig(Method.CDVFT, d_out=d_out, d_in=d_in, m=m, p=p, alpha=alpha)


# ===== forward =====

def test_single_diagonal_chain(rng):
    a, x = rng.standard_normal(6), rng.standard_normal(6)
    ch = FactorChain([DiagonalFactor(a)], [], 1.0, 6, 6)
    delta_h, _ = chain_forward(ch, x)
    assert_allclose(delta_h, a * x)


def test_zero_last_diagonal_gives_zero(rng):
    ch = FactorChain(
        [DiagonalFactor(np.ones(4)), DiagonalFactor(np.zeros(4))],
        [CirculantFactor([1, 0, 0, 0])], 1.0, 4, 4,
    )
    for _ in range(5):
        delta_h, _ = chain_forward(ch, rng.standard_normal(4))
        assert np.all(delta_h == 0)


@pytest.mark.parametrize('d_out, d_in, m, p', SHAPES)
def test_forward_matches_dense_reconstruction(rng, d_out, d_in, m, p):
    for _ in range(20):
        ch = random_chain(rng, d_in, d_out, m, p)
        x = rng.standard_normal(d_in)
        delta_h, _ = chain_forward(ch, x)
        expected = reconstruct_dense(ch) @ x
        assert delta_h.shape == (d_out,)
        assert np.max(np.abs(delta_h - expected)) <= 1e-10 * max(1.0, np.max(np.abs(expected)))


def test_forward_batch_matches_columns(rng):
    ch = random_chain(rng, 10, 6, 3, 4)
    X = rng.standard_normal((10, 5))
    batch, _ = chain_forward(ch, X)
    for j in range(5):
        assert_allclose(batch[:, j], chain_forward(ch, X[:, j])[0], atol=1e-12)


@pytest.mark.parametrize('d_out, d_in, m, p', SHAPES)
def test_forward_is_linear_in_input(rng, d_out, d_in, m, p):
    ch = random_chain(rng, d_in, d_out, m, p)
    x, y = rng.standard_normal(d_in), rng.standard_normal(d_in)
    a, b = rng.standard_normal(2)
    expected = a * chain_forward(ch, x)[0] + b * chain_forward(ch, y)[0]
    combined, _ = chain_forward(ch, a * x + b * y)
    assert np.max(np.abs(combined - expected)) <= 1e-10 * max(1.0, np.max(np.abs(expected)))


@pytest.mark.parametrize('alpha', [0.5, 3.0, -2.0])
def test_delta_h_scales_exactly_with_alpha(rng, alpha):
    ch = random_chain(rng, 24, 40, 3, 8, alpha=1.0)
    x = rng.standard_normal((24, 4))
    base, _ = chain_forward(ch, x)
    ch.alpha = alpha
    scaled, _ = chain_forward(ch, x)
    assert np.array_equal(scaled, alpha * base)


@pytest.mark.parametrize('m', [2, 3, 4])
def test_transform_calls_per_circulant(rng, m):
    ch = random_chain(rng, 16, 16, m, 16)
    x = rng.standard_normal(16)
    with count_ops() as forward:
        delta_h, tape = chain_forward(ch, x)
    with count_ops() as backward:
        chain_backward(ch, tape, np.ones_like(delta_h))
    circulants = m - 1
    # forward: generator + input transforms, one inverse
    assert (forward.fft_calls, forward.ifft_calls) == (2 * circulants, circulants)
    # backward reuses both taped spectra: upstream transform, two inverses
    assert (backward.fft_calls, backward.ifft_calls) == (circulants, 2 * circulants)


def test_blocked_chain_shapes():
    ch = build_chain(d_in=40, d_out=24, m=3, p=8)
    assert isinstance(ch.circulants[0], BlockCirculantFactor)
    assert ch.diagonals[0].dim == 40
    assert ch.d_work == 24
    assert [d.dim for d in ch.diagonals[1:]] == [24, 24]
    assert ch.circulants[1].p == 24


def test_square_chain_uses_plain_circulant():
    ch = build_chain(d_in=16, d_out=16, m=2, p=16)
    assert isinstance(ch.circulants[0], CirculantFactor)


# ===== adapter_apply / reconstruct / merge =====

def test_adapter_apply_zero_init_is_frozen_output(rng):
    ch = init_chain(cdvft_config(8, 8, p=8), 3)
    W, x = rng.standard_normal((8, 8)), rng.standard_normal(8)
    assert_allclose(adapter_apply(W, ch, x), W @ x)


def test_adapter_apply_with_zero_weights(rng):
    ch = random_chain(rng, 8, 8, 2, 8)
    x = rng.standard_normal(8)
    assert_allclose(adapter_apply(np.zeros((8, 8)), ch, x), chain_forward(ch, x)[0])


def test_adapter_apply_matches_merged_matrix(rng):
    ch = random_chain(rng, 8, 8, 2, 8)
    W, x = rng.standard_normal((8, 8)), rng.standard_normal(8)
    assert_allclose(adapter_apply(W, ch, x), (W + reconstruct_dense(ch)) @ x, atol=1e-10)


def test_adapter_apply_rejects_wrong_weights(rng):
    ch = random_chain(rng, 8, 8, 2, 8)
    with pytest.raises(ShapeError):
        adapter_apply(np.zeros((8, 7)), ch, np.zeros(8))


def test_reconstruct_identity_and_zero():
    ch = FactorChain([DiagonalFactor(np.ones(5))], [], 1.0, 5, 5)
    assert_allclose(reconstruct_dense(ch), np.eye(5))
    zero = init_chain(cdvft_config(6, 6, p=6), 0)
    assert np.all(reconstruct_dense(zero) == 0)


def test_reconstruct_is_self_consistent(rng):
    ch = random_chain(rng, 8, 8, 2, 8)
    M = reconstruct_dense(ch)
    for _ in range(100):
        x = rng.standard_normal(8)
        assert_allclose(M @ x, chain_forward(ch, x)[0], atol=1e-10)


def test_merge_properties(rng):
    W = rng.standard_normal((8, 8))
    assert_allclose(merge(W, init_chain(cdvft_config(8, 8, p=8), 1)), W)

    ch = random_chain(rng, 8, 8, 2, 8)
    assert_allclose(merge(np.zeros((8, 8)), ch), reconstruct_dense(ch))

    merged = merge(W, ch)
    for _ in range(100):
        x = rng.standard_normal(8)
        assert np.max(np.abs(merged @ x - adapter_apply(W, ch, x))) <= 1e-9


# ===== backward =====

def test_single_diagonal_backward(rng):
    a, x, g = rng.standard_normal(5), rng.standard_normal(5), rng.standard_normal(5)
    ch = FactorChain([DiagonalFactor(a)], [], 2.5, 5, 5)
    _, tape = chain_forward(ch, x)
    grads = chain_backward(ch, tape, g)
    assert_allclose(grads.diagonals[0], 2.5 * g * x)
    assert_allclose(grads.d_input, 2.5 * g * a)
    assert grads.circulants == []


@pytest.mark.parametrize('d_out, d_in, m, p', SHAPES)
def test_backward_matches_finite_differences(rng, d_out, d_in, m, p):
    ch = random_chain(rng, d_in, d_out, m, p)
    errors = check_chain(ch, rng)
    assert max(errors.values()) < 1e-5, errors
    errors = check_chain(ch, rng, batch=3)
    assert max(errors.values()) < 1e-5, errors


def test_gradient_shapes_follow_parameters(rng):
    ch = random_chain(rng, 40, 24, 3, 8)
    _, tape = chain_forward(ch, rng.standard_normal(40))
    grads = chain_backward(ch, tape, rng.standard_normal(24))
    assert [g.shape for g in grads.ordered()] == [p.shape for p in ch.parameters()]
    assert grads.d_input.shape == (40,)


def test_tape_is_single_use(rng):
    ch = random_chain(rng, 8, 8, 2, 8)
    _, tape = chain_forward(ch, rng.standard_normal(8))
    chain_backward(ch, tape, rng.standard_normal(8))
    with pytest.raises(InvalidTapeError):
        chain_backward(ch, tape, rng.standard_normal(8))


def test_stale_tape_is_rejected(rng):
    ch = random_chain(rng, 8, 8, 2, 8)
    _, tape = chain_forward(ch, rng.standard_normal(8))
    values = ch.parameters()
    values[0] = values[0] + 1.0
    ch.assign_parameters(values)
    with pytest.raises(InvalidTapeError):
        chain_backward(ch, tape, rng.standard_normal(8))


# ===== construction =====

def test_init_chain_zero_delta_and_determinism(rng):
    cfg = cdvft_config(24, 40, m=3, p=8)
    first, second = init_chain(cfg, 11), init_chain(cfg, 11)
    for a, b in zip(first.parameters(), second.parameters()):
        assert np.array_equal(a, b)
    delta_h, _ = chain_forward(first, rng.standard_normal((40, 4)))
    assert np.all(delta_h == 0)


def test_init_chain_parameter_count():
    ch = init_chain(cdvft_config(768, 768, p=768), 0)
    assert ch.num_params() == 3 * 768


def test_init_chain_rejects_invalid_config():
    with pytest.raises(ConfigError):
        init_chain(cdvft_config(8, 8, m=2, p=0), 0)
    with pytest.raises(ConfigError):
        init_chain(cdvft_config(8, 8, m=2, p=16), 0)
    with pytest.raises(ConfigError):
        init_chain(cdvft_config(4, 8, m=1), 0)


def test_chain_validates_factor_shapes():
    with pytest.raises(ShapeError):
        FactorChain([DiagonalFactor(np.ones(4)), DiagonalFactor(np.ones(5))],
                    [CirculantFactor(np.ones(4))], 1.0, 4, 4)
    with pytest.raises(ConfigError):
        FactorChain([DiagonalFactor(np.ones(4))], [CirculantFactor(np.ones(4))], 1.0, 4, 4)


def test_rescale_alpha_keeps_function(rng):
    ch = random_chain(rng, 10, 6, 3, 4, alpha=1.0)
    doubled = rescale_alpha(ch, 2.0)
    assert doubled.alpha == 2.0
    x = rng.standard_normal((10, 3))
    assert_allclose(chain_forward(doubled, x)[0], chain_forward(ch, x)[0], atol=1e-12)
