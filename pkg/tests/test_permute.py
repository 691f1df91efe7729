"""Keyed permutation properties."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tlens.permute import ID_BITS, KEY_BYTES, KeyedPermutation

KEY_A = bytes(range(KEY_BYTES))
KEY_B = bytes(KEY_BYTES)


def test_key_length_enforced():
    with pytest.raises(ValueError):
        KeyedPermutation(b"short")
    with pytest.raises(TypeError):
        KeyedPermutation("not-bytes" * 4)


def test_deterministic_per_key():
    a1 = KeyedPermutation(KEY_A)
    a2 = KeyedPermutation(KEY_A)
    values = [0, 1, 2**32, 2**64 - 1, 2**127 + 5]
    assert [a1.apply(v) for v in values] == [a2.apply(v) for v in values]


def test_keys_give_different_mappings():
    a = KeyedPermutation(KEY_A)
    b = KeyedPermutation(KEY_B)
    sample = range(64)
    assert [a.apply(v) for v in sample] != [b.apply(v) for v in sample]


def test_output_range():
    perm = KeyedPermutation(KEY_A)
    for v in (0, 7, 2**64, 2**128 - 1):
        assert 0 <= perm.apply(v) < (1 << ID_BITS)


def test_out_of_range_rejected():
    perm = KeyedPermutation(KEY_A)
    with pytest.raises(ValueError):
        perm.apply(-1)
    with pytest.raises(ValueError):
        perm.apply(1 << ID_BITS)


def test_injective_on_sample():
    """100k distinct inputs map to 100k distinct outputs."""
    perm = KeyedPermutation(KEY_A)
    outputs = {perm.apply(v) for v in range(100_000)}
    assert len(outputs) == 100_000


def test_apply_many_matches_apply():
    perm = KeyedPermutation(KEY_A)
    values = [3, 1, 4, 1, 5]
    assert perm.apply_many(values) == [perm.apply(v) for v in values]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**128 - 1), st.integers(0, 2**128 - 1))
def test_distinct_inputs_distinct_outputs(a, b):
    perm = KeyedPermutation(KEY_A)
    if a != b:
        assert perm.apply(a) != perm.apply(b)
    else:
        assert perm.apply(a) == perm.apply(b)
