"""
=============================================================================
FFT CORE
=============================================================================

PURPOSE:
    Length-n forward/inverse discrete Fourier transforms used by every
    circulant kernel, plus the symmetry helpers the backward pass relies on.

CONVENTION:
    fft(v)[p]  = sum_q v[q] * exp(-2j*pi*p*q/n)          (no normalization)
    ifft(V)[p] = (1/n) * sum_q V[q] * exp(+2j*pi*p*q/n)

    numpy.fft uses exactly this convention and handles every n >= 1
    (mixed radix, Bluestein for large prime factors), so 768, 2048, 11008
    and odd test sizes all go through the same code path.

OPERATION COUNTING:
    with count_ops() as ops:
        ...                       # every fft/ifft and kernel multiply is tallied
    ops.flops, ops.fft_calls, ops.ifft_calls

    The counter lives in a context variable, so concurrent threads each see
    their own (or none).
"""

# =============================================================================
# IMPORTS
# =============================================================================
import contextvars
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from cdvft.errors import InvalidInputError, NumericalCorruptionError

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIGURATION CONSTANTS
# =============================================================================
# Flop convention shared with cdvft.complexity
FFT_FLOPS_PER_POINT = 5          # 5 n log2(n) per length-n transform
COMPLEX_MUL_FLOPS = 6
COMPLEX_ADD_FLOPS = 2

# Default tolerance for imaginary residue of mathematically real results
REAL_PART_TOL = 1e-9


# =============================================================================
# OPERATION COUNTER
# =============================================================================

@dataclass
class OpCounter:
    """Tally of transforms and flops under the declared convention."""
    fft_calls: int = 0
    ifft_calls: int = 0
    real_muls: int = 0
    complex_muls: int = 0
    complex_adds: int = 0
    flops: int = 0

    def to_dict(self):
        return {
            'fft_calls': self.fft_calls,
            'ifft_calls': self.ifft_calls,
            'real_muls': self.real_muls,
            'complex_muls': self.complex_muls,
            'complex_adds': self.complex_adds,
            'flops': self.flops,
        }


_active_counter = contextvars.ContextVar('cdvft_op_counter', default=None)


@contextmanager
def count_ops():
    """Count operations for everything run inside the block."""
    counter = OpCounter()
    token = _active_counter.set(counter)
    try:
        yield counter
    finally:
        _active_counter.reset(token)


def fft_flops(n):
    """Flops charged for one length-n transform: round(5 n log2 n)."""
    if n <= 1:
        return 0
    return int(round(FFT_FLOPS_PER_POINT * n * math.log2(n)))


def _record_transform(arr, axis, inverse):
    counter = _active_counter.get()
    if counter is None:
        return
    n = arr.shape[axis]
    lanes = arr.size // n
    if inverse:
        counter.ifft_calls += lanes
    else:
        counter.fft_calls += lanes
    counter.flops += lanes * fft_flops(n)


def record_real_mul(count):
    counter = _active_counter.get()
    if counter is not None:
        counter.real_muls += count
        counter.flops += count


def record_complex_mul(count):
    counter = _active_counter.get()
    if counter is not None:
        counter.complex_muls += count
        counter.flops += COMPLEX_MUL_FLOPS * count


def record_complex_add(count):
    counter = _active_counter.get()
    if counter is not None:
        counter.complex_adds += count
        counter.flops += COMPLEX_ADD_FLOPS * count


# =============================================================================
# TRANSFORMS
# =============================================================================

def _checked(v, axis, name):
    arr = np.asarray(v)
    if arr.ndim == 0 or arr.shape[axis] < 1:
        raise InvalidInputError(f"{name}: transform length must be >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: input contains NaN or Inf")
    return arr


def fft(v, axis=0):
    """Unnormalized forward DFT along `axis` (each lane counted once)."""
    arr = _checked(v, axis, 'fft')
    _record_transform(arr, axis, inverse=False)
    return np.fft.fft(arr, axis=axis)


def ifft(V, axis=0):
    """Inverse DFT with 1/n normalization along `axis`."""
    arr = _checked(V, axis, 'ifft')
    _record_transform(arr, axis, inverse=True)
    return np.fft.ifft(arr, axis=axis)


def real_part_strict(V, tol=REAL_PART_TOL):
    """
    Real part of a result that must be real.

    The residue bound is tol * max(1, max|V|); anything larger means a
    kernel produced a genuinely complex result.
    """
    arr = np.asarray(V)
    if not np.iscomplexobj(arr):
        return arr.astype(np.float64, copy=False)
    residue = float(np.max(np.abs(arr.imag))) if arr.size else 0.0
    scale = max(1.0, float(np.max(np.abs(arr.real)))) if arr.size else 1.0
    if residue > tol * scale:
        raise NumericalCorruptionError(
            f"imaginary residue {residue:.3e} exceeds tolerance {tol * scale:.3e}"
        )
    return np.ascontiguousarray(arr.real)


# =============================================================================
# REFERENCE FORMS AND SYMMETRIES
# =============================================================================

def dft_reference(v):
    """Brute-force O(n^2) DFT, same convention as fft(). Test oracle."""
    arr = _checked(v, 0, 'dft_reference')
    n = arr.shape[0]
    k = np.arange(n)
    twiddle = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return twiddle @ arr


def shift_reindex(v, axis=0):
    """Reindex (0, 1, ..., n-1) -> (0, n-1, ..., 1): out[k] = v[-k mod n]."""
    arr = np.asarray(v)
    return np.roll(np.flip(arr, axis=axis), 1, axis=axis)
