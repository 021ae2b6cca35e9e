"""
=============================================================================
CDVFT FACTOR CHAIN
=============================================================================

PURPOSE:
    The full adapter. A chain with m diagonals represents

        dW = A_{2m-1} C_{2m-2} ... A_3 C_2 A_1

    and applies it right to left without ever forming dW:

        h' = W x + alpha * dW x

SHAPES:
    A_1            length d_in, acts on the raw input
    C_2            square circulant of size p when d_in == d_out == p,
                   otherwise a block-circulant d_in -> d_work, d_work = q1 * p
    A_3 .. C_{2m-2}, A_{2m-1}
                   all at d_work
    output         truncated from d_work to d_out

    With p = d on a square layer every factor is d x d.

WHAT IT DOES:
    chain_forward      factor-by-factor forward, records a ChainTape
    chain_backward     walks the tape back, reusing forward spectra
    adapter_apply      W x + delta_h
    reconstruct_dense  materialize alpha * dW (tests and merge)
    merge              W + alpha * dW
    init_chain         seeded initialization with dW = 0
"""

# =============================================================================
# IMPORTS
# =============================================================================
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from cdvft.errors import ConfigError, InvalidTapeError, ShapeError
from cdvft.factors import (
    BlockCirculantFactor,
    CirculantFactor,
    DiagonalFactor,
    SpectrumTrace,
    factor_backward,
    factor_forward,
)

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIGURATION CONSTANTS
# =============================================================================
INTERIOR_INITS = ('ones', 'normal')


# =============================================================================
# TYPES
# =============================================================================

@dataclass(eq=False)
class FactorChain:
    diagonals: list
    circulants: list
    alpha: float
    d_in: int
    d_out: int
    seed: int = None

    def __post_init__(self):
        self.alpha = float(self.alpha)
        m = len(self.diagonals)
        if m < 1:
            raise ConfigError("a chain needs at least one diagonal factor")
        if len(self.circulants) != m - 1:
            raise ConfigError(f"{m} diagonals need {m - 1} circulants, got {len(self.circulants)}")
        if self.diagonals[0].dim != self.d_in:
            raise ShapeError(f"A_1 has length {self.diagonals[0].dim}, d_in is {self.d_in}")
        if m == 1:
            if self.d_in != self.d_out:
                raise ConfigError("a single-diagonal chain must be square")
            return

        first = self.circulants[0]
        if first.shape[1] != self.d_in:
            raise ShapeError(f"first circulant takes {first.shape[1]} inputs, d_in is {self.d_in}")
        d_work = first.shape[0]
        if d_work < self.d_out:
            raise ShapeError(f"working dimension {d_work} is smaller than d_out {self.d_out}")
        for circ in self.circulants[1:]:
            if not isinstance(circ, CirculantFactor) or circ.p != d_work:
                raise ShapeError(f"interior circulants must be square of size {d_work}")
        for diag in self.diagonals[1:]:
            if diag.dim != d_work:
                raise ShapeError(f"interior diagonals must have length {d_work}, got {diag.dim}")
        if m > d_work:
            raise ConfigError(f"m={m} exceeds the working dimension {d_work}")

    @property
    def m(self):
        return len(self.diagonals)

    @property
    def d_work(self):
        if self.m == 1:
            return self.d_in
        return self.circulants[0].shape[0]

    @property
    def p(self):
        if self.m == 1:
            return self.d_in
        return self.circulants[0].p

    def factors(self):
        """Right-to-left application order: A_1, C_2, A_3, ..., A_{2m-1}."""
        ordered = [self.diagonals[0]]
        for circ, diag in zip(self.circulants, self.diagonals[1:]):
            ordered.extend([circ, diag])
        return ordered

    def parameters(self):
        return [f.params for f in self.factors()]

    def assign_parameters(self, values):
        factors = self.factors()
        if len(values) != len(factors):
            raise ShapeError(f"expected {len(factors)} parameter arrays, got {len(values)}")
        for factor, value in zip(factors, values):
            factor.assign(value)

    def versions(self):
        return tuple(f.version for f in self.factors())

    def num_params(self):
        return int(sum(p.size for p in self.parameters()))


@dataclass(eq=False)
class ChainTape:
    """y_0 = x, y_1, ..., y_{2m-1} and the spectra used at each circulant."""
    intermediates: list
    traces: list
    versions: tuple
    consumed: bool = False


@dataclass
class ChainGradients:
    diagonals: list
    circulants: list
    d_input: np.ndarray

    def ordered(self):
        """Same order as FactorChain.parameters()."""
        ordered = [self.diagonals[0]]
        for circ, diag in zip(self.circulants, self.diagonals[1:]):
            ordered.extend([circ, diag])
        return ordered


# =============================================================================
# CONSTRUCTION
# =============================================================================

def build_chain(d_in, d_out, m, p=None, alpha=1.0):
    """Chain of the right shapes with all-zero parameters."""
    if m < 1:
        raise ConfigError(f"m must be >= 1, got {m}")
    if m == 1:
        return FactorChain([DiagonalFactor(np.zeros(d_in))], [], alpha, d_in, d_out)

    p = p or max(d_in, d_out)
    if p < 1 or p > max(d_in, d_out):
        raise ConfigError(f"block size p={p} must be in [1, {max(d_in, d_out)}]")
    if d_in == d_out == p:
        first = CirculantFactor(np.zeros(p))
    else:
        first = BlockCirculantFactor.zeros(math.ceil(d_out / p) * p, d_in, p)
    d_work = first.shape[0]

    diagonals = [DiagonalFactor(np.zeros(d_in))]
    diagonals += [DiagonalFactor(np.zeros(d_work)) for _ in range(m - 1)]
    circulants = [first] + [CirculantFactor(np.zeros(d_work)) for _ in range(m - 2)]
    return FactorChain(diagonals, circulants, alpha, d_in, d_out)


def init_chain(cfg, rng_seed, interior_init='ones', zero_last=True):
    """
    Seeded initialization.

    a_1 = 1, interior diagonals = 1 (or N(1, 1) with interior_init='normal'),
    circulant generators ~ N(0, 1/p), a_{2m-1} = 0 so that dW = 0.
    """
    cfg.validate()
    if interior_init not in INTERIOR_INITS:
        raise ConfigError(f"interior_init must be one of {INTERIOR_INITS}, got {interior_init!r}")

    rng = np.random.default_rng(rng_seed)
    ch = build_chain(cfg.d_in, cfg.d_out, cfg.m, cfg.p, cfg.alpha)
    factors = ch.factors()
    values = []
    for k, factor in enumerate(factors):
        shape = factor.params.shape
        if isinstance(factor, DiagonalFactor):
            if interior_init == 'normal' and k > 0:
                values.append(1.0 + rng.standard_normal(shape))
            else:
                values.append(np.ones(shape))
        else:
            values.append(rng.normal(0.0, 1.0 / math.sqrt(factor.p), size=shape))

    last = factors[-1].params.shape
    if zero_last:
        values[-1] = np.zeros(last)
    elif interior_init == 'normal':
        values[-1] = rng.standard_normal(last)

    ch.assign_parameters(values)
    ch.seed = int(rng_seed)
    logger.debug(f"init_chain: m={cfg.m} d_in={cfg.d_in} d_out={cfg.d_out} p={ch.p} seed={rng_seed}")
    return ch


def rescale_alpha(ch, new_alpha):
    """Copy of ch with scale new_alpha computing the same delta_h."""
    if new_alpha == 0:
        raise ConfigError("alpha must be non-zero to rescale")
    ratio = ch.alpha / float(new_alpha)
    out = build_chain(ch.d_in, ch.d_out, ch.m, ch.p, new_alpha)
    values = [np.array(v) for v in ch.parameters()]
    values[-1] = values[-1] * ratio
    out.assign_parameters(values)
    out.seed = ch.seed
    return out


# =============================================================================
# FORWARD / BACKWARD
# =============================================================================

def chain_forward(ch, x):
    """delta_h = alpha * A_{2m-1}(C_{2m-2}(... C_2(A_1 x))), plus its tape."""
    intermediates = [np.asarray(x, dtype=np.float64)]
    traces = []
    y = intermediates[0]
    for factor in ch.factors():
        if isinstance(factor, DiagonalFactor):
            y = factor_forward(factor, y)
        else:
            trace = SpectrumTrace()
            y = factor_forward(factor, y, trace)
            traces.append(trace)
        intermediates.append(y)

    delta_h = ch.alpha * y[:ch.d_out]
    tape = ChainTape(intermediates=intermediates, traces=traces, versions=ch.versions())
    return delta_h, tape


def chain_backward(ch, tape, d_delta_h):
    """All parameter gradients and dL/dx for an upstream gradient on delta_h."""
    if tape.consumed:
        raise InvalidTapeError("tape was already used by a backward pass")
    if tape.versions != ch.versions():
        raise InvalidTapeError("chain parameters changed since the forward pass")
    tape.consumed = True

    g = np.asarray(d_delta_h, dtype=np.float64)
    if g.shape[0] != ch.d_out or g.shape[1:] != tape.intermediates[-1].shape[1:]:
        raise ShapeError(f"d_delta_h has shape {g.shape}, expected ({ch.d_out}, ...)")
    g = ch.alpha * g
    if ch.d_work != ch.d_out:
        padded = np.zeros((ch.d_work,) + g.shape[1:])
        padded[:ch.d_out] = g
        g = padded

    factors = ch.factors()
    traces = list(tape.traces)
    grads = [None] * len(factors)
    for k in range(len(factors) - 1, -1, -1):
        factor = factors[k]
        trace = None if isinstance(factor, DiagonalFactor) else traces.pop()
        result = factor_backward(factor, tape.intermediates[k], g, trace)
        grads[k] = result.d_params
        g = result.d_input

    return ChainGradients(diagonals=grads[0::2], circulants=grads[1::2], d_input=g)


def adapter_apply(W, ch, x):
    """h' = W x + alpha * dW x."""
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (ch.d_out, ch.d_in):
        raise ShapeError(f"W has shape {W.shape}, adapter is {ch.d_out}x{ch.d_in}")
    delta_h, _ = chain_forward(ch, x)
    return W @ np.asarray(x, dtype=np.float64) + delta_h


# =============================================================================
# DENSE RECONSTRUCTION / MERGE
# =============================================================================

def reconstruct_dense(ch):
    """alpha * dW as a d_out x d_in matrix."""
    M = ch.diagonals[0].dense()
    for factor in ch.factors()[1:]:
        M = factor.dense() @ M
    return ch.alpha * M[:ch.d_out]


def merge(W, ch):
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (ch.d_out, ch.d_in):
        raise ShapeError(f"W has shape {W.shape}, adapter is {ch.d_out}x{ch.d_in}")
    return W + reconstruct_dense(ch)
