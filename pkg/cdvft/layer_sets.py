"""
=============================================================================
ADAPTED LAYER SETS LOOKUP
=============================================================================
Named sets of weight matrices that an adapter is attached to, as groups of
(d_out, d_in, count). Used by the complexity accountant and the `bench`
command so that every method is costed over the same layers.
"""

from cdvft.errors import ConfigError

# Layer set name to its shape groups
LAYER_SETS = {
    'roberta-base-qv': {
        'description': 'RoBERTa-base, query and value of 12 blocks',
        'groups': [(768, 768, 24)],
    },
    'vit-base-qv': {
        'description': 'ViT-base, query and value of 12 blocks',
        'groups': [(768, 768, 24)],
    },
    'llama2-7b-qv': {
        'description': 'LLaMA2-7B, query and value of 32 blocks',
        'groups': [(4096, 4096, 64)],
    },
    'llama2-7b-mhsa-ffn': {
        'description': 'LLaMA2-7B, q/k/v/o plus gate/up/down of 32 blocks',
        'groups': [
            (4096, 4096, 128),      # q, k, v, o
            (11008, 4096, 64),      # gate, up
            (4096, 11008, 32),      # down
        ],
    },
}

# Short aliases accepted on the command line
LAYER_SET_ALIASES = {
    'roberta': 'roberta-base-qv',
    'vit': 'vit-base-qv',
    'llama-qv': 'llama2-7b-qv',
    'alpaca': 'llama2-7b-qv',
    'llama-all': 'llama2-7b-mhsa-ffn',
    'gsm8k': 'llama2-7b-mhsa-ffn',
}


def get_layer_set(name):
    """
    Resolve a layer set name or alias to its shape groups.

    Args:
        name: full name ('vit-base-qv') or alias ('vit')

    Returns:
        list of (d_out, d_in, count) tuples

    Examples:
        >>> get_layer_set('vit')
        [(768, 768, 24)]
        >>> sum(n for _, _, n in get_layer_set('llama2-7b-mhsa-ffn'))
        224
    """
    key = LAYER_SET_ALIASES.get(name, name)
    if key not in LAYER_SETS:
        known = ', '.join(sorted(LAYER_SETS))
        raise ConfigError(f"unknown layer set {name!r} (known: {known})")
    return list(LAYER_SETS[key]['groups'])


def canonical_name(name):
    return LAYER_SET_ALIASES.get(name, name)
