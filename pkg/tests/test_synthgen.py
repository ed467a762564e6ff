import io
import json
from fractions import Fraction

import pytest

from cjscan.config import DetectorConfig
from cjscan.detectors import Label, classify
from cjscan.synthgen import (
    NEGATIVE_SHAPES, PROTOCOL_LABEL, PROTOCOLS, CorpusFormatError, InvalidSpec, RoundSpec, dump_corpus,
    expected_fee, gen_joinmarket, gen_negative, gen_wasabi1, gen_wasabi11, gen_wasabi2, gen_whirlpool_mix,
    gen_whirlpool_tx0, generate, greedy_decompose, random_spec, tx_from_json, tx_to_json,
)


@pytest.mark.parametrize("protocol", PROTOCOLS)
def test_generated_rounds_are_detected(protocol):
    for seed in range(150):
        spec = random_spec(protocol, seed)
        tx = generate(spec)
        assert PROTOCOL_LABEL[protocol] in classify(tx).labels, (protocol, seed)
        assert tx.fee == expected_fee(spec)


@pytest.mark.parametrize("protocol", PROTOCOLS)
def test_deterministic(protocol):
    spec = random_spec(protocol, 7)
    assert generate(spec) == generate(spec)
    assert generate(spec) != generate(random_spec(protocol, 8))


def test_joinmarket_without_change():
    tx = gen_joinmarket(RoundSpec("joinmarket", n=3, d=1_000_000, changes=0))
    assert len(tx.outputs) == 3 and Label.JOINMARKET in classify(tx).labels


def test_joinmarket_needs_three():
    with pytest.raises(InvalidSpec):
        gen_joinmarket(RoundSpec("joinmarket", n=2, d=1_000_000))


def test_wasabi1_invalid():
    with pytest.raises(InvalidSpec):
        gen_wasabi1(RoundSpec("wasabi1", n=1, d=10_000_000))
    with pytest.raises(InvalidSpec):
        gen_wasabi1(RoundSpec("wasabi1", n=4, d=10_000_000, max_inputs=8))
    with pytest.raises(InvalidSpec):
        gen_wasabi1(RoundSpec("wasabi1", n=4, d=10_000_000, changes=4))


def test_wasabi1_outside_band_not_detected():
    tx = gen_wasabi1(RoundSpec("wasabi1", n=4, d=50_000_000, f=10_000))
    assert Label.WASABI1_0 not in classify(tx).labels


def test_wasabi11_base_only_equals_wasabi1():
    spec = RoundSpec("wasabi11", n=5, d=9_900_000, f=20_000, seed=3)
    assert gen_wasabi11(spec) == gen_wasabi1(spec)


def test_wasabi11_level_needs_two_participants():
    with pytest.raises(InvalidSpec):
        gen_wasabi11(RoundSpec("wasabi11", n=3, d=9_900_000, levels=(0, 0, 1)))


def test_wasabi11_levels_present():
    tx = gen_wasabi11(RoundSpec("wasabi11", n=4, d=9_900_000, levels=(2, 2, 1, 0), changes=0))
    values = sorted(t.value for t in tx.outputs)
    assert values == sorted([9_900_000] * 4 + [19_800_000] * 3 + [39_600_000] * 2)


def test_greedy_decompose():
    assert greedy_decompose(15_000, [5_000, 10_000]) == ([10_000, 5_000], 0)
    assert greedy_decompose(15_001, [5_000, 10_000]) == ([10_000, 5_000], 1)
    assert greedy_decompose(4_999, [5_000]) == ([], 4_999)


def test_wasabi2_exact_decomposition_has_no_change():
    cfg = DetectorConfig(wasabi2_v_min=1, wasabi2_denoms=tuple(2**k for k in range(41)))
    tx = gen_wasabi2(RoundSpec("wasabi2", n=10, inputs_total=50, max_inputs=10), cfg)
    assert all(t.value in cfg.denomination_set for t in tx.outputs)


def test_wasabi2_below_target():
    with pytest.raises(InvalidSpec):
        gen_wasabi2(RoundSpec("wasabi2", n=5, inputs_total=10, max_inputs=10))


def test_tx0_invalid():
    base = dict(d=1_000_000, f=50_000, epsilon=5_000, n0=5)
    gen_whirlpool_tx0(RoundSpec("whirlpool_tx0", **base))
    for bad in ({"n0": 71}, {"n0": 0}, {"epsilon": 99}, {"epsilon": 100_001}, {"f": 1},
                {"fee_factor": Fraction(4)}):
        with pytest.raises(InvalidSpec):
            gen_whirlpool_tx0(RoundSpec("whirlpool_tx0", **{**base, **bad}))


def test_mix_invalid():
    for k in (0, 5):
        with pytest.raises(InvalidSpec):
            gen_whirlpool_mix(RoundSpec("whirlpool_mix", d=100_000, premix_inputs=k, epsilon=975))
    with pytest.raises(InvalidSpec):
        gen_whirlpool_mix(RoundSpec("whirlpool_mix", d=123, premix_inputs=2, epsilon=975))


def test_unknown_protocol():
    with pytest.raises(InvalidSpec):
        generate(RoundSpec("nope"))


@pytest.mark.parametrize("shape", list(NEGATIVE_SHAPES))
def test_negative_shapes(shape):
    for seed in range(50):
        tx = gen_negative(seed, shape=shape)
        assert tx.value_in > tx.value_out
        if shape == "sweep":
            assert len(tx.inputs) == len(tx.outputs) == 1
        if shape == "consolidation":
            assert len(tx.inputs) >= 10 and len(tx.outputs) == 1


def test_negative_unknown_shape():
    with pytest.raises(InvalidSpec):
        gen_negative(0, shape="mystery")


def test_json_roundtrip():
    scripts = {}
    tx = generate(random_spec("whirlpool_tx0", 1), scripts=scripts)
    assert all(t.script in scripts for t in (*tx.inputs, *tx.outputs))
    assert tx_from_json(json.loads(json.dumps(tx_to_json(tx, "x")))) == tx
    buf = io.StringIO()
    assert dump_corpus([("a", tx), (None, tx)], buf) == 2
    assert len(buf.getvalue().splitlines()) == 2


@pytest.mark.parametrize("obj", [
    [], {"inputs": [], "outputs": []}, {"inputs": [[1, "zz"]], "outputs": [[1, "00" * 32]]},
    {"inputs": [], "outputs": [[-1, "00" * 32]]}, {"inputs": [], "outputs": [[1, "00" * 31]]},
    {"inputs": [], "outputs": [[True, "00" * 32]]}, {"outputs": [[1, "00" * 32]]},
])
def test_json_schema_violations(obj):
    with pytest.raises(CorpusFormatError):
        tx_from_json(obj)
