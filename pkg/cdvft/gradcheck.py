"""
=============================================================================
FINITE-DIFFERENCE GRADIENT CHECKS
=============================================================================

PURPOSE:
    Compare every analytic gradient in the library with central finite
    differences of a scalar projection L = v . output.

    The chain is linear in each single coordinate (every factor appears
    once), so central differences are exact up to round-off and a tight
    tolerance is meaningful.

HOW TO USE:
    rows = run_suite(d_out=16, d_in=16, m=2, p=16, seed=1, trials=5)
    for row in rows:
        print(row['kind'], row['max_rel_error'])
"""

# =============================================================================
# IMPORTS
# =============================================================================
import logging
import math

import numpy as np

from cdvft.chain import build_chain, chain_backward, chain_forward
from cdvft.factors import (
    BlockCirculantFactor,
    CirculantFactor,
    DiagonalFactor,
    block_circ_backward,
    block_circ_forward,
    circ_backward,
    circ_forward,
    diag_backward,
    diag_forward,
)

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIGURATION CONSTANTS
# =============================================================================
FD_STEP = 1e-6
REL_FLOOR = 1e-3
DEFAULT_TOL = 1e-5


# =============================================================================
# PRIMITIVES
# =============================================================================

def central_difference(fun, x, step=FD_STEP):
    """Per-coordinate central difference of a scalar function at x."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        f_plus = fun(x)
        flat[i] = original - step
        f_minus = fun(x)
        flat[i] = original
        out[i] = 0.5 * (f_plus - f_minus) / step
    return grad


def relative_error(analytic, numeric, floor=REL_FLOOR):
    """
    max_i |a_i - n_i| / max(|a_i|, |n_i|, floor * scale)

    scale = max(1, max|a|, max|n|), so coordinates whose gradient is tiny
    next to the rest of the array are compared in absolute terms.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(n))))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * scale)
    return float(np.max(np.abs(a - n) / denom))


# =============================================================================
# FACTOR CHECKS
# =============================================================================

def _random_array(rng, n, batch):
    shape = (n,) if batch is None else (n, batch)
    return rng.standard_normal(shape)


def check_factor(factor, rng, batch=None):
    """{'params': err, 'input': err} for one factor under a random projection."""
    if isinstance(factor, DiagonalFactor):
        forward, backward, d_in = diag_forward, diag_backward, factor.dim
    elif isinstance(factor, CirculantFactor):
        forward, backward, d_in = circ_forward, circ_backward, factor.p
    else:
        forward, backward, d_in = block_circ_forward, block_circ_backward, factor.d_in
    d_out = factor.shape[0]

    x = _random_array(rng, d_in, batch)
    v = _random_array(rng, d_out, batch)
    grads = backward(factor, x, v)

    original = np.array(factor.params)

    def loss_of_params(values):
        factor.assign(values)
        return float(np.sum(v * forward(factor, x)))

    numeric_params = central_difference(loss_of_params, original)
    factor.assign(original)
    numeric_input = central_difference(lambda z: float(np.sum(v * forward(factor, z))), x)
    return {
        'params': relative_error(grads.d_params, numeric_params),
        'input': relative_error(grads.d_input, numeric_input),
    }


def _factor_name(factor, k):
    return f"{'a' if isinstance(factor, DiagonalFactor) else 'c'}_{k + 1}"


def check_loss_gradient(ch, loss, grads, rng, coordinates=None):
    """
    Compare `grads` (one array per factor, chain order) with central
    differences of the scalar loss() over the chain's parameters.

    coordinates: if given, only that many randomly sampled coordinates per
    parameter array are perturbed (spot check). Parameters are restored
    before returning. Returns {factor name: max relative error}.
    """
    errors = {}
    values = [np.array(p) for p in ch.parameters()]
    for k, factor in enumerate(ch.factors()):
        flat = values[k].reshape(-1)
        picks = np.arange(flat.size)
        if coordinates is not None and coordinates < flat.size:
            picks = np.sort(rng.choice(flat.size, size=coordinates, replace=False))
        numeric = np.zeros(picks.size)
        for slot, i in enumerate(picks):
            original = flat[i]
            flat[i] = original + FD_STEP
            factor.assign(values[k])
            f_plus = loss()
            flat[i] = original - FD_STEP
            factor.assign(values[k])
            f_minus = loss()
            flat[i] = original
            factor.assign(values[k])
            numeric[slot] = 0.5 * (f_plus - f_minus) / FD_STEP
        errors[_factor_name(factor, k)] = relative_error(np.asarray(grads[k]).reshape(-1)[picks], numeric)
    return errors


def check_chain(ch, rng, batch=None, coordinates=None):
    """
    Max relative error per parameter group of a chain plus the input,
    under the projection loss v . delta_h.
    """
    x = _random_array(rng, ch.d_in, batch)
    v = _random_array(rng, ch.d_out, batch)
    _, tape = chain_forward(ch, x)
    result = chain_backward(ch, tape, v)

    def projected_loss():
        delta_h, _ = chain_forward(ch, x)
        return float(np.sum(v * delta_h))

    errors = check_loss_gradient(ch, projected_loss, result.ordered(), rng, coordinates)
    numeric_input = central_difference(
        lambda z: float(np.sum(v * chain_forward(ch, z)[0])), x
    )
    errors['input'] = relative_error(result.d_input, numeric_input)
    return errors


# =============================================================================
# SUITE
# =============================================================================

def random_chain(rng, d_in, d_out, m, p=None, alpha=None):
    """Chain of the given shape with every parameter drawn at random."""
    alpha = float(rng.uniform(0.5, 2.0)) if alpha is None else alpha
    ch = build_chain(d_in, d_out, m, p, alpha)
    ch.assign_parameters([rng.standard_normal(v.shape) for v in ch.parameters()])
    return ch


def run_suite(d_out, d_in, m, p, seed, trials=3):
    """
    One row per factor kind: diagonal, circulant, block-circulant, chain.

    Returns a list of {'kind', 'trials', 'max_rel_error'} dicts.
    """
    rng = np.random.default_rng(seed)
    d = max(d_out, d_in)
    p = p or d
    block_p = p if (p < d or d_out != d_in) else max(1, d // 2)
    results = {'diagonal': 0.0, 'circulant': 0.0, 'block-circulant': 0.0, 'chain': 0.0}

    for trial in range(trials):
        batch = None if trial % 2 == 0 else 3
        diag = DiagonalFactor(rng.standard_normal(d_in))
        results['diagonal'] = max(results['diagonal'], *check_factor(diag, rng, batch).values())

        circ = CirculantFactor(rng.standard_normal(d))
        results['circulant'] = max(results['circulant'], *check_factor(circ, rng, batch).values())

        q1, q2 = math.ceil(d_out / block_p), math.ceil(d_in / block_p)
        block = BlockCirculantFactor(rng.standard_normal((q1, q2, block_p)), d_out, d_in)
        results['block-circulant'] = max(results['block-circulant'], *check_factor(block, rng, batch).values())

        ch = random_chain(rng, d_in, d_out, m, p)
        results['chain'] = max(results['chain'], *check_chain(ch, rng, batch).values())
        logger.debug(f"gradcheck trial {trial}: {results}")

    return [{'kind': kind, 'trials': trials, 'max_rel_error': err} for kind, err in results.items()]
