import pytest
from hypothesis import given, strategies as st

from vbid.config import (
    as_bool, as_float, as_int_list, child_seed, config_hash, format_config, parse_config,
)
from vbid.errors import InvalidConfig


def test_parse_basic():
    text = "# comment\n\nEpochs = 200\nshare=0.05  # trailing\nhidden_units = 128, 64\n"
    assert parse_config(text) == {"epochs": "200", "share": "0.05", "hidden_units": "128, 64"}


@pytest.mark.parametrize("text", ["epochs 200\n", " = 3\n", "a = 1\nA = 2\n"])
def test_parse_rejects(text):
    with pytest.raises(InvalidConfig):
        parse_config(text)


keys = st.from_regex(r"[a-z][a-z0-9_]{0,10}", fullmatch=True)
values = st.from_regex(r"[A-Za-z0-9_.,\-]{1,12}", fullmatch=True)


@given(st.dictionaries(keys, values, max_size=8))
def test_format_parse_round_trip(d):
    assert parse_config(format_config(d)) == d


@given(st.dictionaries(keys, values, max_size=8))
def test_hash_is_order_independent(d):
    assert config_hash(dict(reversed(list(d.items())))) == config_hash(d)


def test_converters():
    assert as_float("1e-3", "lr") == 1e-3
    assert as_bool("Yes", "x") is True and as_bool("off", "x") is False
    assert as_int_list("[128, 64,32]", "h") == [128, 64, 32]
    for fn, v in [(as_float, "abc"), (as_bool, "maybe"), (as_int_list, "1,x")]:
        with pytest.raises(InvalidConfig):
            fn(v, "k")


def test_child_seed_stable():
    assert child_seed(7, "a") == child_seed(7, "a")
    assert child_seed(7, "a") != child_seed(7, "b")
    assert child_seed(7, "a") != child_seed(8, "a")
    assert 0 <= child_seed(123, "x") < 2**32
