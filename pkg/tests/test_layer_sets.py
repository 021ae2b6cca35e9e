import pytest

from cdvft.errors import ConfigError
from cdvft.layer_sets import LAYER_SET_ALIASES, LAYER_SETS, canonical_name, get_layer_set


def test_aliases_resolve():
    for alias, name in LAYER_SET_ALIASES.items():
        assert name in LAYER_SETS
        assert get_layer_set(alias) == get_layer_set(name)
        assert canonical_name(alias) == name


def test_llama_full_set_counts():
    groups = get_layer_set('gsm8k')
    assert sum(n for _, _, n in groups) == 224
    assert (11008, 4096, 64) in groups


def test_returns_a_copy():
    get_layer_set('vit').append((1, 1, 1))
    assert get_layer_set('vit') == [(768, 768, 24)]


def test_unknown_layer_set():
    with pytest.raises(ConfigError):
        get_layer_set('bert-large')
