from collections import Counter

from hypothesis import given, strategies as st

from cjscan.model import (
    Outpoint, distinct_input_scripts, distinct_output_scripts, output_value_histogram, script_id,
)
from helpers import mktx


def test_script_id_identity():
    assert script_id(b"\x00\x14" + b"a" * 20) == script_id(b"\x00\x14" + b"a" * 20)
    assert script_id(b"\x51") != script_id(b"\x52")
    assert len(script_id(b"")) == 32


def test_distinct_input_scripts():
    assert distinct_input_scripts(mktx([1, 2, 3], [5], in_scripts="AAA")) == 1
    assert distinct_input_scripts(mktx([1, 2, 3], [5], in_scripts="ABC")) == 3
    assert distinct_input_scripts(mktx([1] * 5, [4], in_scripts="AABCC")) == 3


def test_distinct_output_scripts():
    assert distinct_output_scripts(mktx([10], [1, 2], out_scripts="AA")) == 1
    assert distinct_output_scripts(mktx([10], [1, 2, 3, 4], out_scripts="ABCD")) == 4
    assert distinct_output_scripts(mktx([10], [1, 2, 3], out_scripts="ABB")) == 2


def test_output_value_histogram():
    assert output_value_histogram(mktx([100], [10, 10, 3])) == {10: 2, 3: 1}
    assert output_value_histogram(mktx([100], [5])) == {5: 1}
    assert output_value_histogram(mktx([100], [7, 7, 7, 7])) == {7: 4}


def test_fee_and_values():
    tx = mktx([60, 40], [50, 45])
    assert (tx.value_in, tx.value_out, tx.fee) == (100, 95, 5)


def test_outpoint_key_roundtrip():
    op = Outpoint(bytes(range(32)), 70000)
    assert len(op.key()) == 36
    assert Outpoint.from_key(op.key()) == op


@given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 5)), min_size=1, max_size=40),
       st.lists(st.integers(0, 5), min_size=1, max_size=20))
def test_count_invariants(outs, in_scripts):
    values = [v for v, _ in outs]
    scripts = [s for _, s in outs]
    tx = mktx([1] * len(in_scripts), values, in_scripts=in_scripts, out_scripts=scripts)
    hist = output_value_histogram(tx)
    assert sum(hist.values()) == len(tx.outputs)
    assert hist == dict(Counter(values))
    assert distinct_output_scripts(tx) <= len(tx.outputs)
    assert (distinct_output_scripts(tx) == len(tx.outputs)) == (len(set(scripts)) == len(scripts))
    assert distinct_input_scripts(tx) <= len(tx.inputs)
