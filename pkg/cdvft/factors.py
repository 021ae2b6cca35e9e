"""
=============================================================================
FACTOR PRIMITIVES
=============================================================================

PURPOSE:
    The two building blocks of a CDVFT chain, each a linear operator with a
    forward matvec and analytic gradients:

    - DiagonalFactor        diag(a) x      = a * x
    - CirculantFactor       circ(c) x      = IFFT(FFT(c) * FFT(x))
    - BlockCirculantFactor  q1 x q2 grid of length-p circulant blocks for
                            non-square maps; input zero-extended to q2*p,
                            output truncated to d_out

    circ(c) has c as its first column: circ(c)[r, k] = c[(r - k) mod p].

BATCHES:
    Every forward/backward takes a vector of shape (n,) or a batch of
    columns (n, B). Parameter gradients are summed over the batch.

SPECTRUM REUSE:
    Forward fills an optional SpectrumTrace with FFT(input) and FFT(params);
    backward reuses both, so a square circulant costs 2 FFT + 1 IFFT forward
    and 1 FFT + 2 IFFT backward. Parameter spectra are cached on the factor
    until the next assign().
"""

# =============================================================================
# IMPORTS
# =============================================================================
import logging
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from cdvft.errors import InvalidInputError, InvalidTapeError, ShapeError
from cdvft.fft_core import (
    fft,
    ifft,
    real_part_strict,
    record_complex_add,
    record_complex_mul,
    record_real_mul,
    shift_reindex,
)

logger = logging.getLogger(__name__)


# =============================================================================
# HELPERS
# =============================================================================

def _columns(x, n, name):
    """Return (2-D column view, was_vector)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == n:
        return arr[:, None], True
    if arr.ndim == 2 and arr.shape[0] == n:
        return arr, False
    raise ShapeError(f"{name}: expected length {n} (or ({n}, B)), got shape {arr.shape}")


def _restore(cols, was_vector):
    return cols[:, 0] if was_vector else cols


def _parameter_array(values, name, shape=None):
    arr = np.array(values, dtype=np.float64)
    if arr.size == 0:
        raise ShapeError(f"{name}: parameter vector must not be empty")
    if shape is not None and arr.shape != tuple(shape):
        raise ShapeError(f"{name}: expected shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: parameters contain NaN or Inf")
    return arr


def _same_batch(cols, grads):
    if cols.shape[1] != grads.shape[1]:
        raise ShapeError(f"batch mismatch: input has {cols.shape[1]} columns, gradient has {grads.shape[1]}")


# =============================================================================
# TYPES
# =============================================================================

@dataclass
class FactorGradients:
    d_params: np.ndarray
    d_input: np.ndarray


@dataclass
class SpectrumTrace:
    """Spectra taken during one forward call, reused by its backward."""
    input_spectrum: np.ndarray = None
    param_spectrum: np.ndarray = None
    version: int = None


@dataclass(eq=False)
class DiagonalFactor:
    a: np.ndarray
    version: int = 0

    def __post_init__(self):
        self.a = _parameter_array(self.a, 'a')
        if self.a.ndim != 1:
            raise ShapeError(f"a: expected a vector, got shape {self.a.shape}")

    @property
    def dim(self):
        return self.a.shape[0]

    @property
    def shape(self):
        return (self.dim, self.dim)

    @property
    def params(self):
        return self.a

    def assign(self, values):
        self.a = _parameter_array(values, 'a', self.a.shape)
        self.version += 1

    def dense(self):
        return diagonal_dense(self.a)


class _SpectralFactor:
    """Shared spectrum cache for circulant generators (FFT on the last axis)."""

    def spectrum(self):
        with self._lock:
            if self._spectrum is None:
                self._spectrum = fft(self.c, axis=-1)
            return self._spectrum

    @property
    def has_cached_spectrum(self):
        return self._spectrum is not None

    @property
    def params(self):
        return self.c

    def assign(self, values):
        new_c = _parameter_array(values, 'c', self.c.shape)
        with self._lock:
            self.c = new_c
            self._spectrum = None
            self.version += 1


@dataclass(eq=False)
class CirculantFactor(_SpectralFactor):
    c: np.ndarray
    version: int = 0
    _spectrum: np.ndarray = field(default=None, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        self.c = _parameter_array(self.c, 'c')
        if self.c.ndim != 1:
            raise ShapeError(f"c: expected a vector, got shape {self.c.shape}")

    @property
    def p(self):
        return self.c.shape[0]

    @property
    def shape(self):
        return (self.p, self.p)

    def dense(self):
        return circulant_dense(self.c)


@dataclass(eq=False)
class BlockCirculantFactor(_SpectralFactor):
    """
    c[i, j] is the generator of block C_{i,j}; shape (q1, q2, p) with
    q1 = ceil(d_out / p) and q2 = ceil(d_in / p).
    """
    c: np.ndarray
    d_out: int
    d_in: int
    version: int = 0
    _spectrum: np.ndarray = field(default=None, init=False, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        self.c = _parameter_array(self.c, 'c')
        if self.c.ndim != 3:
            raise ShapeError(f"c: expected a (q1, q2, p) grid, got shape {self.c.shape}")
        q1, q2, p = self.c.shape
        if q1 != math.ceil(self.d_out / p) or q2 != math.ceil(self.d_in / p):
            raise ShapeError(
                f"block grid {q1}x{q2} with p={p} does not cover {self.d_out}x{self.d_in}"
            )

    @classmethod
    def zeros(cls, d_out, d_in, p):
        q1, q2 = math.ceil(d_out / p), math.ceil(d_in / p)
        return cls(np.zeros((q1, q2, p)), d_out, d_in)

    @property
    def q1(self):
        return self.c.shape[0]

    @property
    def q2(self):
        return self.c.shape[1]

    @property
    def p(self):
        return self.c.shape[2]

    @property
    def shape(self):
        return (self.d_out, self.d_in)

    def dense(self):
        return block_circulant_dense(self.c, self.d_out, self.d_in)


# =============================================================================
# DENSE BUILDERS (oracles, reconstruction, merge)
# =============================================================================

def diagonal_dense(a):
    return np.diag(np.asarray(a, dtype=np.float64))


def circulant_dense(c):
    """circ(c) with c as first column: M[r, k] = c[(r - k) mod p]."""
    c = np.asarray(c, dtype=np.float64)
    p = c.shape[0]
    idx = (np.arange(p)[:, None] - np.arange(p)[None, :]) % p
    return c[idx]


def block_circulant_dense(c, d_out, d_in):
    """Assemble the (q1 p) x (q2 p) block matrix and keep the top-left d_out x d_in."""
    c = np.asarray(c, dtype=np.float64)
    q1, q2, _ = c.shape
    full = np.block([[circulant_dense(c[i, j]) for j in range(q2)] for i in range(q1)])
    return full[:d_out, :d_in]


# =============================================================================
# DIAGONAL
# =============================================================================

def diag_forward(f, x):
    cols, was_vector = _columns(x, f.dim, 'x')
    record_real_mul(cols.size)
    return _restore(f.a[:, None] * cols, was_vector)


def diag_backward(f, x, d_out):
    cols, _ = _columns(x, f.dim, 'x')
    grads, was_vector = _columns(d_out, f.dim, 'd_out')
    _same_batch(cols, grads)
    d_params = np.sum(grads * cols, axis=1)
    d_input = f.a[:, None] * grads
    return FactorGradients(d_params=d_params, d_input=_restore(d_input, was_vector))


# =============================================================================
# SQUARE CIRCULANT
# =============================================================================

def _reused_spectra(f, trace):
    """(param_spectrum, input_spectrum) from a trace, or (None, None)."""
    if trace is None or trace.version is None:
        return None, None
    if trace.version != f.version:
        raise InvalidTapeError(
            f"spectra were taken at factor version {trace.version}, factor is now at {f.version}"
        )
    return trace.param_spectrum, trace.input_spectrum


def circ_forward(f, x, trace=None):
    cols, was_vector = _columns(x, f.p, 'x')
    F_c = f.spectrum()
    F_x = fft(cols, axis=0)
    product = F_c[:, None] * F_x
    record_complex_mul(product.size)
    y = real_part_strict(ifft(product, axis=0))
    if trace is not None:
        trace.input_spectrum = F_x
        trace.param_spectrum = F_c
        trace.version = f.version
    return _restore(y, was_vector)


def circ_backward(f, x, d_out, trace=None):
    """
    Conjugate form of the circulant gradient:

        d_input = IFFT(conj(F_c) * F_y)
        d_c     = IFFT(conj(F_x) * F_y)   (summed over the batch)
    """
    cols, _ = _columns(x, f.p, 'x')
    grads, was_vector = _columns(d_out, f.p, 'd_out')
    _same_batch(cols, grads)

    F_c, F_x = _reused_spectra(f, trace)
    if F_c is None:
        F_c = f.spectrum()
    if F_x is None:
        F_x = fft(cols, axis=0)
    F_y = fft(grads, axis=0)

    input_spectrum = np.conj(F_c)[:, None] * F_y
    param_spectrum = np.sum(np.conj(F_x) * F_y, axis=1)
    record_complex_mul(2 * F_y.size)
    record_complex_add(F_y.size - F_y.shape[0])

    d_input = real_part_strict(ifft(input_spectrum, axis=0))
    d_params = real_part_strict(ifft(param_spectrum, axis=0))
    return FactorGradients(d_params=d_params, d_input=_restore(d_input, was_vector))


def circ_backward_shifted(f, x, d_out):
    """
    Shifted-vector form of the same gradient, transforming reindexed copies
    (0, p-1, ..., 1) of c and x instead of conjugating their spectra.
    """
    cols, _ = _columns(x, f.p, 'x')
    grads, was_vector = _columns(d_out, f.p, 'd_out')
    _same_batch(cols, grads)

    F_y = fft(grads, axis=0)
    F_c_hat = fft(shift_reindex(f.c))
    F_x_hat = fft(shift_reindex(cols, axis=0), axis=0)

    d_input = real_part_strict(ifft(F_c_hat[:, None] * F_y, axis=0))
    d_params = real_part_strict(ifft(np.sum(F_x_hat * F_y, axis=1), axis=0))
    return FactorGradients(d_params=d_params, d_input=_restore(d_input, was_vector))


# =============================================================================
# BLOCK CIRCULANT
# =============================================================================

def block_circ_forward(f, x, trace=None):
    """h_i = IFFT(sum_j FFT(c_ij) * FFT(x_j)), one IFFT per output block row."""
    cols, was_vector = _columns(x, f.d_in, 'x')
    q1, q2, p = f.c.shape
    batch = cols.shape[1]

    padded = np.zeros((q2 * p, batch))
    padded[:f.d_in] = cols
    X = fft(padded.reshape(q2, p, batch), axis=1)
    C = f.spectrum()

    H = np.einsum('ijk,jkb->ikb', C, X)
    record_complex_mul(q1 * q2 * p * batch)
    record_complex_add(q1 * (q2 - 1) * p * batch)

    h = real_part_strict(ifft(H, axis=1)).reshape(q1 * p, batch)[:f.d_out]
    if trace is not None:
        trace.input_spectrum = X
        trace.param_spectrum = C
        trace.version = f.version
    return _restore(np.ascontiguousarray(h), was_vector)


def block_circ_backward(f, x, d_out, trace=None):
    """
    Blockwise conjugate form. With g zero-extended to q1*p:

        d_c[i, j] = IFFT(conj(FFT(x_j)) * FFT(g_i))
        d_x_j     = sum_i IFFT(conj(FFT(c_ij)) * FFT(g_i))

    Generator entries whose rows are truncated away get exactly the
    contribution of the surviving rows.
    """
    cols, _ = _columns(x, f.d_in, 'x')
    grads, was_vector = _columns(d_out, f.d_out, 'd_out')
    _same_batch(cols, grads)
    q1, q2, p = f.c.shape
    batch = cols.shape[1]

    C, X = _reused_spectra(f, trace)
    if C is None:
        C = f.spectrum()
    if X is None:
        padded = np.zeros((q2 * p, batch))
        padded[:f.d_in] = cols
        X = fft(padded.reshape(q2, p, batch), axis=1)

    g_padded = np.zeros((q1 * p, batch))
    g_padded[:f.d_out] = grads
    G = fft(g_padded.reshape(q1, p, batch), axis=1)

    param_spectrum = np.einsum('jkb,ikb->ijk', np.conj(X), G)
    input_spectrum = np.einsum('ijk,ikb->jkb', np.conj(C), G)
    record_complex_mul(2 * q1 * q2 * p * batch)
    record_complex_add(q1 * q2 * p * (batch - 1) + (q1 - 1) * q2 * p * batch)

    d_params = real_part_strict(ifft(param_spectrum, axis=2))
    d_input = real_part_strict(ifft(input_spectrum, axis=1)).reshape(q2 * p, batch)[:f.d_in]
    return FactorGradients(
        d_params=d_params,
        d_input=_restore(np.ascontiguousarray(d_input), was_vector),
    )


# =============================================================================
# DISPATCH
# =============================================================================

def factor_forward(f, x, trace=None):
    if isinstance(f, DiagonalFactor):
        return diag_forward(f, x)
    if isinstance(f, CirculantFactor):
        return circ_forward(f, x, trace)
    if isinstance(f, BlockCirculantFactor):
        return block_circ_forward(f, x, trace)
    raise TypeError(f"not a factor: {type(f).__name__}")


def factor_backward(f, x, d_out, trace=None):
    if isinstance(f, DiagonalFactor):
        return diag_backward(f, x, d_out)
    if isinstance(f, CirculantFactor):
        return circ_backward(f, x, d_out, trace)
    if isinstance(f, BlockCirculantFactor):
        return block_circ_backward(f, x, d_out, trace)
    raise TypeError(f"not a factor: {type(f).__name__}")
