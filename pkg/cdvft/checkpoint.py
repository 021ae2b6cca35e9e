"""
=============================================================================
CHECKPOINT AND DENSE MATRIX FILES
=============================================================================

CHECKPOINT LAYOUT (all little-endian):
    bytes 0-3     magic "CDVF"
    u32           format version
    u32 x 6       method tag (1 = CDVFT), d_in, d_out, p, m, seed
    f64           alpha
    f64 x N       parameters in factor order: a_1, c_2 (blocks row-major),
                  a_3, c_4, ..., a_{2m-1}

    N must equal count_params() of the header's config; anything else is a
    payload-length error.

DENSE MATRIX LAYOUT (for `merge` and `export-dense`):
    u32 rows, u32 cols, then rows * cols f64 in row-major order
"""

# =============================================================================
# IMPORTS
# =============================================================================
import logging
import struct
from pathlib import Path

import numpy as np

from cdvft.chain import build_chain
from cdvft.complexity import AdapterConfig, Method, count_params
from cdvft.errors import (
    BadMagicError,
    CheckpointIOError,
    ConfigError,
    NonFiniteParameterError,
    PayloadLengthError,
    UnsupportedVersionError,
)

logger = logging.getLogger(__name__)

# =============================================================================
# CONFIGURATION CONSTANTS
# =============================================================================
MAGIC = b'CDVF'
FORMAT_VERSION = 1
METHOD_TAGS = {Method.CDVFT: 1}

PREFIX = struct.Struct('<4sI')
HEADER = struct.Struct('<4sI6Id')
DENSE_HEADER = struct.Struct('<II')
FLOAT = np.dtype('<f8')
U32_MAX = 2**32 - 1


# =============================================================================
# FILE HELPERS
# =============================================================================

def _write_bytes(path, data):
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as e:
        raise CheckpointIOError(path, e) from e
    logger.info(f"Saved: {path}")
    return path


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise CheckpointIOError(path, e) from e


# =============================================================================
# CHECKPOINTS
# =============================================================================

def save_checkpoint(ch, path):
    seed = 0 if ch.seed is None else ch.seed
    header_ints = (METHOD_TAGS[Method.CDVFT], ch.d_in, ch.d_out, ch.p, ch.m, seed)
    if any(v < 0 or v > U32_MAX for v in header_ints):
        raise ConfigError(f"header values {header_ints} do not fit in u32")

    payload = np.concatenate([np.asarray(p, dtype=np.float64).reshape(-1) for p in ch.parameters()])
    data = HEADER.pack(MAGIC, FORMAT_VERSION, *header_ints, ch.alpha) + payload.astype(FLOAT).tobytes()
    return _write_bytes(path, data)


def load_checkpoint(path):
    data = _read_bytes(path)
    if len(data) < PREFIX.size:
        raise BadMagicError(f"{path}: file too short to be a checkpoint")
    magic, version = PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    if len(data) < HEADER.size:
        raise PayloadLengthError(f"{path}: truncated header ({len(data)} bytes)")

    _, _, tag, d_in, d_out, p, m, seed, alpha = HEADER.unpack_from(data)
    if tag != METHOD_TAGS[Method.CDVFT]:
        raise ConfigError(f"{path}: unknown method tag {tag}")
    if not np.isfinite(alpha):
        raise NonFiniteParameterError(f"{path}: alpha is {alpha}")

    cfg = AdapterConfig(Method.CDVFT, d_out=d_out, d_in=d_in, m=m,
                        p=p if m > 1 else None, alpha=alpha)
    expected = count_params(cfg)
    payload_bytes = len(data) - HEADER.size
    if payload_bytes != expected * FLOAT.itemsize:
        raise PayloadLengthError(
            f"{path}: payload has {payload_bytes} bytes, header implies {expected} parameters "
            f"({expected * FLOAT.itemsize} bytes)"
        )

    values = np.frombuffer(data, dtype=FLOAT, offset=HEADER.size).astype(np.float64)
    if not np.all(np.isfinite(values)):
        bad = int(np.argmax(~np.isfinite(values)))
        raise NonFiniteParameterError(f"{path}: parameter {bad} is {values[bad]}")

    ch = build_chain(d_in, d_out, m, p if m > 1 else None, alpha)
    arrays, offset = [], 0
    for param in ch.parameters():
        arrays.append(values[offset:offset + param.size].reshape(param.shape))
        offset += param.size
    ch.assign_parameters(arrays)
    ch.seed = seed
    logger.info(f"Loaded: {path} (m={m}, {d_out}x{d_in}, p={ch.p}, {expected} parameters)")
    return ch


# =============================================================================
# DENSE MATRICES
# =============================================================================

def save_dense(matrix, path):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ConfigError(f"dense matrix must be 2-D, got shape {matrix.shape}")
    rows, cols = matrix.shape
    data = DENSE_HEADER.pack(rows, cols) + np.ascontiguousarray(matrix).astype(FLOAT).tobytes()
    return _write_bytes(path, data)


def load_dense(path):
    data = _read_bytes(path)
    if len(data) < DENSE_HEADER.size:
        raise PayloadLengthError(f"{path}: file too short for a dense matrix header")
    rows, cols = DENSE_HEADER.unpack_from(data)
    expected = rows * cols * FLOAT.itemsize
    if len(data) - DENSE_HEADER.size != expected:
        raise PayloadLengthError(
            f"{path}: {rows}x{cols} matrix needs {expected} bytes, found {len(data) - DENSE_HEADER.size}"
        )
    matrix = np.frombuffer(data, dtype=FLOAT, offset=DENSE_HEADER.size).astype(np.float64)
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteParameterError(f"{path}: dense matrix contains NaN or Inf")
    return matrix.reshape(rows, cols)
