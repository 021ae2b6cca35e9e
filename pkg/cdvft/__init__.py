"""
=============================================================================
CDVFT
=============================================================================
Circulant-diagonal adapters: a weight update dW stored as an interleaved
product of diagonal and circulant factors and applied with 1D FFTs.

    from cdvft import AdapterConfig, Method, init_chain, adapter_apply

    cfg = AdapterConfig(Method.CDVFT, d_out=768, d_in=768, m=2, p=768)
    ch = init_chain(cfg, rng_seed=0)
    h = adapter_apply(W, ch, x)
"""

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
from cdvft.checkpoint import load_checkpoint, load_dense, save_checkpoint, save_dense
from cdvft.complexity import AdapterConfig, Method, count_flops, count_params, sweep_report
from cdvft.errors import CdvftError

__version__ = '0.1.0'

__all__ = [
    'AdapterConfig',
    'CdvftError',
    'FactorChain',
    'Method',
    'adapter_apply',
    'build_chain',
    'chain_backward',
    'chain_forward',
    'count_flops',
    'count_params',
    'init_chain',
    'load_checkpoint',
    'load_dense',
    'merge',
    'reconstruct_dense',
    'rescale_alpha',
    'save_checkpoint',
    'save_dense',
    'sweep_report',
]
