"""Synthetic CoinJoin rounds and payment-like negatives.

Each generator builds the transaction a protocol round would put on chain,
from a ``RoundSpec`` and a seed. They stand in for a labelled dataset: a
detector must accept everything its own generator produces.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Any, Callable, Iterable

from cjscan.config import DetectorConfig
from cjscan.detectors import DEFAULT_CONFIG, WASABI_BASE, Label
from cjscan.model import ResolvedTransaction, Txo, script_id

PROTOCOLS = ("joinmarket", "wasabi1", "wasabi11", "wasabi2", "whirlpool_tx0", "whirlpool_mix")

PROTOCOL_LABEL = {
    "joinmarket": Label.JOINMARKET,
    "wasabi1": Label.WASABI1_0,
    "wasabi11": Label.WASABI1_1,
    "wasabi2": Label.WASABI2_0,
    "whirlpool_tx0": Label.WHIRLPOOL_TX0,
    "whirlpool_mix": Label.WHIRLPOOL_MIX,
}

DUST = 546


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class RoundSpec:
    """Parameters of one synthetic round.

    ``theta`` is the network fee paid by each participant. Protocol extras:
    ``levels`` (Wasabi 1.1, top mixing level of each participant),
    ``inputs_total`` (Wasabi 2.0), ``n0``/``fee_factor`` (Whirlpool Tx0),
    ``premix_inputs`` (Whirlpool mix), ``epsilon`` (Whirlpool surplus over d).
    ``changes`` fixes how many participants get change; None draws it.
    """

    protocol: str
    n: int = 1
    d: int = 0
    f: int = 0
    theta: int = 1000
    seed: int = 0
    height: int = 0
    max_inputs: int = 3
    changes: int | None = None
    levels: tuple[int, ...] = ()
    inputs_total: int | None = None
    n0: int = 0
    epsilon: int = 0
    fee_factor: Fraction = Fraction(1)
    premix_inputs: int = 0


class ScriptFactory:
    """Deterministic fresh scripts: fake P2WPKH programs derived from a seeded counter."""

    def __init__(self, tag: str, registry: dict[bytes, bytes] | None = None):
        self._prefix = hashlib.sha256(tag.encode()).digest()
        self._counter = 0
        self.registry = registry

    def raw(self) -> bytes:
        self._counter += 1
        program = hashlib.sha256(self._prefix + self._counter.to_bytes(8, "little")).digest()[:20]
        return b"\x00\x14" + program

    def fresh(self) -> bytes:
        raw = self.raw()
        sid = script_id(raw)
        if self.registry is not None:
            self.registry[sid] = raw
        return sid

    def data_carrier(self) -> bytes:
        raw = b"\x6a\x20" + hashlib.sha256(self._prefix + b"data" + self._counter.to_bytes(8, "little")).digest()
        self._counter += 1
        sid = script_id(raw)
        if self.registry is not None:
            self.registry[sid] = raw
        return sid


def _rng(tag: str, seed: int) -> random.Random:
    return random.Random(f"{tag}:{seed}")


def _split(rng: random.Random, total: int, parts: int) -> list[int]:
    """Split ``total`` into ``parts`` positive integers."""
    if parts <= 1:
        return [total]
    if total < parts:
        raise InvalidSpec(f"cannot split {total} sats into {parts} inputs")
    cuts = sorted(rng.sample(range(1, total), parts - 1))
    bounds = [0, *cuts, total]
    return [b - a for a, b in zip(bounds, bounds[1:])]


def _log_uniform(rng: random.Random, lo: float, hi: float) -> int:
    return int(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def _synthetic_txid(inputs, outputs, tag: str) -> bytes:
    h = hashlib.sha256(tag.encode())
    for t in (*inputs, *outputs):
        h.update(t.value.to_bytes(8, "little"))
        h.update(t.script)
    return hashlib.sha256(h.digest()).digest()


def _participant_inputs(rng, scripts: ScriptFactory, total: int, count: int, reuse: float = 0.3) -> list[Txo]:
    own = scripts.fresh()
    out = []
    for i, value in enumerate(_split(rng, total, count)):
        if i and rng.random() >= reuse:
            own = scripts.fresh()
        out.append(Txo(value, own))
    return out


def _finish(rng, inputs: list[Txo], outputs: list[Txo], spec: RoundSpec, tag: str) -> ResolvedTransaction:
    rng.shuffle(inputs)
    rng.shuffle(outputs)
    txid = _synthetic_txid(inputs, outputs, tag)
    return ResolvedTransaction(txid, spec.height, tuple(inputs), tuple(outputs), False)


def _distinct_values(rng, count: int, avoid: Callable[[int], bool], lo: int, hi: int) -> list[int]:
    """``count`` pairwise-distinct values in [lo, hi] rejected by none of ``avoid``."""
    seen: set[int] = set()
    out = []
    while len(out) < count:
        v = _log_uniform(rng, lo, hi)
        if v in seen or avoid(v):
            continue
        seen.add(v)
        out.append(v)
    return out


def expected_fee(spec: RoundSpec) -> int:
    """Network fee the generated transaction pays (v_in - v_out)."""
    if spec.protocol == "whirlpool_mix":
        return spec.premix_inputs * spec.epsilon
    if spec.protocol == "whirlpool_tx0":
        return spec.theta
    return spec.n * spec.theta


def gen_joinmarket(spec: RoundSpec, cfg: DetectorConfig = DEFAULT_CONFIG,
                   scripts: dict | None = None) -> ResolvedTransaction:
    if spec.n < 3:
        raise InvalidSpec("JoinMarket needs at least 3 participants")
    if spec.d <= 0 or spec.max_inputs < 1 or spec.theta < 0:
        raise InvalidSpec("bad denomination, input bound or fee")
    n_change = spec.changes
    if n_change is not None and not 0 <= n_change <= spec.n:
        raise InvalidSpec("changes must be within [0, n]")
    rng = _rng("joinmarket", spec.seed)
    sf = ScriptFactory(f"joinmarket:{spec.seed}", scripts)
    if n_change is None:
        n_change = rng.randint(0, spec.n)
    changes = _distinct_values(rng, n_change, lambda v: v == spec.d, DUST, max(2 * spec.d, 10 * DUST))
    changes += [0] * (spec.n - n_change)
    rng.shuffle(changes)

    inputs, outputs = [], []
    for change in changes:
        total = spec.d + change + spec.theta
        inputs += _participant_inputs(rng, sf, total, rng.randint(1, spec.max_inputs))
        outputs.append(Txo(spec.d, sf.fresh()))
        if change:
            outputs.append(Txo(change, sf.fresh()))
    return _finish(rng, inputs, outputs, spec, f"joinmarket:{spec.seed}")


def _zerolink(spec: RoundSpec, cfg: DetectorConfig, scripts: dict | None) -> ResolvedTransaction:
    """Wasabi 1.x round; levels all zero gives a single-denomination round."""
    if spec.n < 2:
        raise InvalidSpec("a Wasabi round needs at least 2 participants")
    if spec.d <= 0 or spec.theta < 0 or spec.f < 0:
        raise InvalidSpec("bad denomination or fees")
    if not 1 <= spec.max_inputs <= cfg.wasabi1_a_max:
        raise InvalidSpec(f"max_inputs must be within [1, {cfg.wasabi1_a_max}]")
    levels = spec.levels or (0,) * spec.n
    if len(levels) != spec.n:
        raise InvalidSpec("need one top level per participant")
    if min(levels) < 0 or max(levels) > cfg.wasabi11_max_level:
        raise InvalidSpec(f"levels must lie in [0, {cfg.wasabi11_max_level}]")
    for i in range(1, max(levels) + 1):
        if sum(1 for j in levels if j >= i) < 2:
            raise InvalidSpec(f"level {i} is used by fewer than two participants")
    # at least one participant ends without change
    n_change = spec.changes
    if n_change is not None and not 0 <= n_change <= spec.n - 1:
        raise InvalidSpec("changes must be within [0, n - 1]")

    rng = _rng("wasabi", spec.seed)
    sf = ScriptFactory(f"wasabi:{spec.seed}", scripts)
    if n_change is None:
        n_change = rng.randint(0, spec.n - 1)
    level_values = {spec.d << i for i in range(max(levels) + 1)}
    changes = _distinct_values(
        rng, n_change, lambda v: v in level_values or v == spec.f, DUST, 4 * spec.d
    )
    changes += [0] * (spec.n - n_change)
    rng.shuffle(changes)

    inputs, outputs = [], []
    for k, (change, top) in enumerate(zip(changes, levels)):
        mixed = [spec.d << i for i in range(top + 1)]
        total = sum(mixed) + change + spec.theta + (spec.f if k == 0 else 0)
        inputs += _participant_inputs(rng, sf, total, rng.randint(1, spec.max_inputs))
        outputs += [Txo(v, sf.fresh()) for v in mixed]
        if change:
            outputs.append(Txo(change, sf.fresh()))
    if spec.f:
        outputs.append(Txo(spec.f, sf.fresh()))
    return _finish(rng, inputs, outputs, spec, f"wasabi:{spec.seed}")


def gen_wasabi1(spec: RoundSpec, cfg: DetectorConfig = DEFAULT_CONFIG,
                scripts: dict | None = None) -> ResolvedTransaction:
    if any(spec.levels):
        raise InvalidSpec("Wasabi 1.0 rounds have no mixing levels")
    return _zerolink(spec, cfg, scripts)


def gen_wasabi11(spec: RoundSpec, cfg: DetectorConfig = DEFAULT_CONFIG,
                 scripts: dict | None = None) -> ResolvedTransaction:
    return _zerolink(spec, cfg, scripts)


def greedy_decompose(amount: int, denoms: Iterable[int]) -> tuple[list[int], int]:
    """Largest-first decomposition of ``amount``; returns (parts, remainder)."""
    parts = []
    for d in sorted(denoms, reverse=True):
        if d <= amount:
            k = amount // d
            parts += [d] * k
            amount -= k * d
    return parts, amount


def gen_wasabi2(spec: RoundSpec, cfg: DetectorConfig = DEFAULT_CONFIG,
                scripts: dict | None = None) -> ResolvedTransaction:
    a_max = min(spec.max_inputs, cfg.wasabi2_a_max)
    if spec.n < 1 or a_max < 1 or spec.theta < 0 or spec.f < 0:
        raise InvalidSpec("bad participant count, input bound or fees")
    rng = _rng("wasabi2", spec.seed)
    sf = ScriptFactory(f"wasabi2:{spec.seed}", scripts)
    lo_total, hi_total = max(cfg.wasabi2_target_p, spec.n), spec.n * a_max
    n_inputs = spec.inputs_total
    if n_inputs is None:
        if lo_total > hi_total:
            raise InvalidSpec(f"{spec.n} participants with {a_max} inputs each cannot reach p={cfg.wasabi2_target_p}")
        n_inputs = rng.randint(lo_total, hi_total)
    if n_inputs < cfg.wasabi2_target_p:
        raise InvalidSpec(f"{n_inputs} inputs is below the target p={cfg.wasabi2_target_p}")
    if not spec.n <= n_inputs <= hi_total:
        raise InvalidSpec("inputs_total must lie in [n, n * a_max]")

    # inputs per participant: one each, the rest spread without exceeding a_max
    counts = [1] * spec.n
    for _ in range(n_inputs - spec.n):
        k = rng.choice([i for i, c in enumerate(counts) if c < a_max])
        counts[k] += 1

    denoms = cfg.wasabi2_denoms
    smallest = denoms[0]
    v_min = cfg.wasabi2_v_min
    inputs, outputs = [], []
    for k, count in enumerate(counts):
        fee_share = spec.theta + (spec.f if k == 0 else 0)
        values = [_log_uniform(rng, max(v_min, 1), 50_000_000) for _ in range(count)]
        # enough left after fees for at least one standard output
        values[0] = max(values[0], smallest + fee_share)
        own = sf.fresh()
        for i, v in enumerate(values):
            if i and rng.random() >= 0.3:
                own = sf.fresh()
            inputs.append(Txo(v, own))
        parts, rest = greedy_decompose(sum(values) - fee_share, denoms)
        outputs += [Txo(v, sf.fresh()) for v in parts]
        if rest:
            outputs.append(Txo(rest, sf.fresh()))
    if spec.f:
        outputs.append(Txo(spec.f, sf.fresh()))
    return _finish(rng, inputs, outputs, spec, f"wasabi2:{spec.seed}")


def _pool_fee(spec: RoundSpec, cfg: DetectorConfig) -> int:
    lo, hi = math.ceil(cfg.eta1 * spec.f), math.floor(cfg.eta2 * spec.f)
    return min(max(round(spec.fee_factor * spec.f), lo), hi)


def gen_whirlpool_tx0(spec: RoundSpec, cfg: DetectorConfig = DEFAULT_CONFIG,
                      scripts: dict | None = None) -> ResolvedTransaction:
    if (spec.d, spec.f) not in cfg.whirlpool_pools:
        raise InvalidSpec(f"({spec.d}, {spec.f}) is not a configured pool")
    if not 1 <= spec.n0 <= cfg.whirlpool_a_max:
        raise InvalidSpec(f"n0 must lie in [1, {cfg.whirlpool_a_max}]")
    if not cfg.epsilon_min <= spec.epsilon <= cfg.epsilon_max:
        raise InvalidSpec("epsilon outside [epsilon_min, epsilon_max]")
    if not cfg.eta1 <= Fraction(spec.fee_factor) <= cfg.eta2:
        raise InvalidSpec("fee_factor outside [eta1, eta2]")
    if spec.changes not in (None, 0, 1) or spec.max_inputs < 1 or spec.theta < 0:
        raise InvalidSpec("bad change flag, input bound or fee")
    rng = _rng("tx0", spec.seed)
    sf = ScriptFactory(f"tx0:{spec.seed}", scripts)
    premix = spec.d + spec.epsilon
    fee = _pool_fee(spec, cfg)
    fee_lo, fee_hi = cfg.eta1 * spec.f, cfg.eta2 * spec.f
    bands = [(d + cfg.epsilon_min, d + cfg.epsilon_max) for d, _ in cfg.whirlpool_pools]

    def clashes(v: int) -> bool:
        return v == premix or fee_lo <= v <= fee_hi or any(a <= v <= b for a, b in bands)

    has_change = rng.random() < 0.7 if spec.changes is None else bool(spec.changes)
    change = _distinct_values(rng, 1, clashes, DUST, 10 * spec.d)[0] if has_change else 0

    total = spec.n0 * premix + fee + change + spec.theta
    inputs = _participant_inputs(rng, sf, total, rng.randint(1, spec.max_inputs), reuse=0.5)
    outputs = [Txo(premix, sf.fresh()) for _ in range(spec.n0)]
    outputs.append(Txo(fee, sf.fresh()))
    outputs.append(Txo(0, sf.data_carrier()))
    if change:
        outputs.append(Txo(change, sf.fresh()))
    return _finish(rng, inputs, outputs, spec, f"tx0:{spec.seed}")


def gen_whirlpool_mix(spec: RoundSpec, cfg: DetectorConfig = DEFAULT_CONFIG,
                      scripts: dict | None = None) -> ResolvedTransaction:
    if spec.d not in {d for d, _ in cfg.whirlpool_pools}:
        raise InvalidSpec(f"{spec.d} is not a configured pool denomination")
    if not 1 <= spec.premix_inputs <= 4:
        raise InvalidSpec("a mix takes between 1 and 4 premix inputs")
    if not 1 <= spec.epsilon <= cfg.epsilon_max:
        raise InvalidSpec("premix surplus must lie in [1, epsilon_max]")
    rng = _rng("mix", spec.seed)
    sf = ScriptFactory(f"mix:{spec.seed}", scripts)
    k = spec.premix_inputs
    inputs = [Txo(spec.d + spec.epsilon, sf.fresh()) for _ in range(k)]
    inputs += [Txo(spec.d, sf.fresh()) for _ in range(5 - k)]
    outputs = [Txo(spec.d, sf.fresh()) for _ in range(5)]
    return _finish(rng, inputs, outputs, replace(spec, n=5), f"mix:{spec.seed}")


GENERATORS: dict[str, Callable[..., ResolvedTransaction]] = {
    "joinmarket": gen_joinmarket,
    "wasabi1": gen_wasabi1,
    "wasabi11": gen_wasabi11,
    "wasabi2": gen_wasabi2,
    "whirlpool_tx0": gen_whirlpool_tx0,
    "whirlpool_mix": gen_whirlpool_mix,
}


def generate(spec: RoundSpec, cfg: DetectorConfig = DEFAULT_CONFIG, scripts: dict | None = None) -> ResolvedTransaction:
    try:
        gen = GENERATORS[spec.protocol]
    except KeyError:
        raise InvalidSpec(f"unknown protocol {spec.protocol!r}") from None
    return gen(spec, cfg, scripts)


def random_spec(protocol: str, seed: int, cfg: DetectorConfig = DEFAULT_CONFIG) -> RoundSpec:
    """A valid randomized RoundSpec for ``protocol``."""
    rng = _rng(f"spec:{protocol}", seed)
    theta = rng.randint(100, 5000)
    if protocol == "joinmarket":
        d = _log_uniform(rng, 100_000, 500_000_000)
        if rng.random() < 0.5:
            d = int(float(f"{d:.2g}"))
        return RoundSpec(protocol, n=rng.randint(3, 12), d=d, theta=theta, seed=seed,
                         max_inputs=rng.randint(1, 4))
    if protocol in ("wasabi1", "wasabi11"):
        n = rng.randint(2, 60)
        d = WASABI_BASE - rng.randint(0, cfg.wasabi_epsilon)
        levels: tuple[int, ...] = ()
        if protocol == "wasabi11":
            top = rng.randint(0, min(3, cfg.wasabi11_max_level))
            lv = [rng.randint(0, top) for _ in range(n)]
            for i in rng.sample(range(n), 2):
                lv[i] = top
            levels = tuple(lv)
        return RoundSpec(protocol, n=n, d=d, f=rng.randint(5_000, 500_000), theta=theta, seed=seed,
                         max_inputs=rng.randint(1, cfg.wasabi1_a_max), levels=levels)
    if protocol == "wasabi2":
        a_max = cfg.wasabi2_a_max
        n = rng.randint(max(1, -(-cfg.wasabi2_target_p // a_max)), 40)
        hi = min(n * a_max, 150)
        lo = max(cfg.wasabi2_target_p, n)
        return RoundSpec(protocol, n=n, f=rng.choice([0, rng.randint(1000, 200_000)]), theta=theta,
                         seed=seed, max_inputs=a_max, inputs_total=rng.randint(lo, max(lo, hi)))
    if protocol == "whirlpool_tx0":
        d, f = rng.choice(cfg.whirlpool_pools)
        factor = Fraction(rng.randint(int(cfg.eta1 * 100), int(cfg.eta2 * 100)), 100)
        return RoundSpec(protocol, d=d, f=f, theta=theta, seed=seed, max_inputs=rng.randint(1, 3),
                         n0=rng.randint(1, cfg.whirlpool_a_max),
                         epsilon=rng.randint(cfg.epsilon_min, cfg.epsilon_max), fee_factor=factor)
    if protocol == "whirlpool_mix":
        d, f = rng.choice(cfg.whirlpool_pools)
        return RoundSpec(protocol, n=5, d=d, f=f, seed=seed, premix_inputs=rng.randint(1, 4),
                         epsilon=rng.randint(max(1, cfg.epsilon_min), cfg.epsilon_max))
    raise InvalidSpec(f"unknown protocol {protocol!r}")


NEGATIVE_SHAPES = {"payment": 0.7, "sweep": 0.1, "consolidation": 0.1, "batch": 0.1}


def _payment_value(rng: random.Random) -> int:
    v = _log_uniform(rng, 10_000, 1_000_000_000)
    if rng.random() < 0.3:
        v = int(float(f"{v:.2g}"))
    return v


def gen_negative(seed: int, shapes: dict[str, float] | None = None, height: int = 0,
                 scripts: dict | None = None, shape: str | None = None) -> ResolvedTransaction:
    """Payment-like transaction: payment, sweep, consolidation or batch payout."""
    rng = _rng("negative", seed)
    sf = ScriptFactory(f"negative:{seed}", scripts)
    if shape is None:
        weights = shapes or NEGATIVE_SHAPES
        shape = rng.choices(list(weights), weights=list(weights.values()))[0]
    fee = rng.randint(200, 20_000)
    if shape == "payment":
        paid = [_payment_value(rng), _payment_value(rng)]
        n_in = rng.randint(1, 3)
    elif shape == "sweep":
        paid = [_payment_value(rng)]
        n_in = 1
    elif shape == "consolidation":
        paid = [_payment_value(rng)]
        n_in = rng.randint(10, 100)
    elif shape == "batch":
        paid = _distinct_values(rng, rng.randint(3, 50), lambda v: False, 10_000, 100_000_000)
        n_in = rng.randint(1, 2)
    else:
        raise InvalidSpec(f"unknown negative shape {shape!r}")
    total = sum(paid) + fee
    inputs = _participant_inputs(rng, sf, total, n_in, reuse=0.5)
    outputs = [Txo(v, sf.fresh()) for v in paid]
    return _finish(rng, inputs, outputs, RoundSpec("negative", height=height), f"negative:{seed}")


def corpus(protocols: Iterable[str] = PROTOCOLS, count: int = 1000, cfg: DetectorConfig = DEFAULT_CONFIG,
           start_seed: int = 0) -> Iterable[tuple[str, ResolvedTransaction]]:
    for protocol in protocols:
        for seed in range(start_seed, start_seed + count):
            yield protocol, generate(random_spec(protocol, seed, cfg), cfg)


def tx_to_json(tx: ResolvedTransaction, label: str | None = None) -> dict[str, Any]:
    return {
        "txid": tx.txid_hex,
        "height": tx.height,
        "inputs": [[t.value, t.script.hex()] for t in tx.inputs],
        "outputs": [[t.value, t.script.hex()] for t in tx.outputs],
        "label": label,
    }


class CorpusFormatError(ValueError):
    pass


def tx_from_json(obj: Any) -> ResolvedTransaction:
    """Inverse of ``tx_to_json``; raises CorpusFormatError on schema violations."""
    if not isinstance(obj, dict):
        raise CorpusFormatError("transaction must be a JSON object")
    for key in ("inputs", "outputs"):
        if not isinstance(obj.get(key), list):
            raise CorpusFormatError(f"'{key}' must be a list of [value, script-id] pairs")

    def txos(key: str) -> tuple[Txo, ...]:
        out = []
        for i, item in enumerate(obj[key]):
            if not (isinstance(item, list) and len(item) == 2):
                raise CorpusFormatError(f"{key}[{i}] must be [value, script-id]")
            value, sid = item
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise CorpusFormatError(f"{key}[{i}] value must be a non-negative integer")
            try:
                raw = bytes.fromhex(sid)
            except (TypeError, ValueError):
                raise CorpusFormatError(f"{key}[{i}] script-id must be hex") from None
            if len(raw) != 32:
                raise CorpusFormatError(f"{key}[{i}] script-id must be 32 bytes")
            out.append(Txo(value, raw))
        return tuple(out)

    inputs, outputs = txos("inputs"), txos("outputs")
    if not outputs:
        raise CorpusFormatError("a transaction needs at least one output")
    txid_hex = obj.get("txid")
    if txid_hex is None:
        txid = _synthetic_txid(inputs, outputs, "json")
    else:
        try:
            txid = bytes.fromhex(txid_hex)[::-1]
        except (TypeError, ValueError):
            raise CorpusFormatError("txid must be hex") from None
    height = obj.get("height", 0)
    if not isinstance(height, int):
        raise CorpusFormatError("height must be an integer")
    return ResolvedTransaction(txid, height, inputs, outputs, not inputs)


def dump_corpus(items: Iterable[tuple[str | None, ResolvedTransaction]], fh) -> int:
    n = 0
    for label, tx in items:
        fh.write(json.dumps(tx_to_json(tx, label)) + "\n")
        n += 1
    return n
