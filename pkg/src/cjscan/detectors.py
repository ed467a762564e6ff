"""Structural CoinJoin heuristics for JoinMarket, Wasabi 1.0/1.1/2.0 and Whirlpool.

Every predicate is a pure function of a resolved transaction and a
``DetectorConfig``. Thresholds of the form ``x >= y / k`` are evaluated as
``k * x >= y`` so no integer division is involved.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from cjscan.config import DetectorConfig
from cjscan.model import ResolvedTransaction

WASABI_BASE = 10_000_000  # 0.1 BTC
WHIRLPOOL_MIX_SIZE = 5

DEFAULT_CONFIG = DetectorConfig()


class Label(str, enum.Enum):
    JOINMARKET = "JoinMarket"
    WASABI1_0 = "Wasabi1_0"
    WASABI1_1 = "Wasabi1_1"
    WASABI2_0 = "Wasabi2_0"
    WHIRLPOOL_TX0 = "WhirlpoolTx0"
    WHIRLPOOL_MIX = "WhirlpoolMix"


LABEL_ORDER = tuple(Label)


class EmptyCandidates(ValueError):
    pass


@dataclass(frozen=True)
class PoolEstimate:
    """Whirlpool Tx0 estimate: premix value, matched pool and fee surplus."""

    premix_value: int
    denomination: int
    fee: int

    @property
    def epsilon(self) -> int:
        return self.premix_value - self.denomination


@dataclass(frozen=True)
class Classification:
    labels: frozenset[Label] = frozenset()
    estimated_n: int | None = None
    estimated_d: int | None = None
    estimated_pool: tuple[int, int] | None = None
    estimated_epsilon: int | None = None

    def has(self, label: Label) -> bool:
        return label in self.labels

    def to_dict(self) -> dict:
        return {
            "labels": [l.value for l in LABEL_ORDER if l in self.labels],
            "n_hat": self.estimated_n,
            "d_hat": self.estimated_d,
            "pool": list(self.estimated_pool) if self.estimated_pool else None,
            "epsilon": self.estimated_epsilon,
        }


def estimate_n(tx: ResolvedTransaction) -> int:
    """Largest multiplicity among output values (anonymity-set estimate)."""
    hist = tx.histogram
    return max(hist.values()) if hist else 0


def denomination_candidates(tx: ResolvedTransaction, n_hat: int | None = None) -> list[int]:
    """Output values whose multiplicity equals ``n_hat``, ascending."""
    if n_hat is None:
        n_hat = estimate_n(tx)
    return sorted(v for v, c in tx.histogram.items() if c == n_hat)


def closest_to_base(candidates) -> int:
    """Candidate nearest 0.1 BTC; ties go to the smaller value."""
    if not candidates:
        raise EmptyCandidates("no denomination candidates")
    return min(candidates, key=lambda v: (abs(v - WASABI_BASE), v))


def estimate_base_denom(tx: ResolvedTransaction, n_hat: int | None = None) -> int:
    return closest_to_base(denomination_candidates(tx, n_hat))


def detect_joinmarket(tx: ResolvedTransaction, cfg: DetectorConfig = DEFAULT_CONFIG) -> bool:
    if tx.is_coinbase or not tx.outputs:
        return False
    n_out = len(tx.outputs)
    if tx.n_scripts_out != n_out:
        return False
    n = estimate_n(tx)
    return 2 * n >= n_out and 3 <= n <= tx.n_scripts_in


def _wasabi1_common(tx: ResolvedTransaction, cfg: DetectorConfig) -> tuple[int, int] | None:
    """Checks shared by Wasabi 1.0 and 1.1: denomination band, input bounds, distinct outputs.

    Returns (n_hat, d_hat) when they all hold.
    """
    if tx.is_coinbase or not tx.outputs:
        return None
    if tx.n_scripts_out != len(tx.outputs):
        return None
    n = estimate_n(tx)
    if not n <= tx.n_scripts_in <= len(tx.inputs) <= cfg.wasabi1_a_max * n:
        return None
    d = estimate_base_denom(tx, n)
    if abs(d - WASABI_BASE) > cfg.wasabi_epsilon:
        return None
    return n, d


def detect_wasabi1(tx: ResolvedTransaction, cfg: DetectorConfig = DEFAULT_CONFIG) -> bool:
    common = _wasabi1_common(tx, cfg)
    if common is None:
        return False
    n, _ = common
    return 2 * n >= len(tx.outputs) - 1


def level_band_count(tx: ResolvedTransaction, epsilon: int, max_level: int) -> int:
    """Outputs falling in [2^i (0.1 - eps), 2^i (0.1 + eps)], summed over levels 0..max_level."""
    total = 0
    for value, count in tx.histogram.items():
        for i in range(max_level + 1):
            scale = 1 << i
            lo = scale * (WASABI_BASE - epsilon)
            if value < lo:
                break  # bands only move upward with i
            if value <= scale * (WASABI_BASE + epsilon):
                total += count
    return total


def detect_wasabi11(tx: ResolvedTransaction, cfg: DetectorConfig = DEFAULT_CONFIG) -> bool:
    common = _wasabi1_common(tx, cfg)
    if common is None:
        return False
    n, _ = common
    bands = level_band_count(tx, cfg.wasabi_epsilon, cfg.wasabi11_max_level)
    return bands >= len(tx.outputs) - n - 1


def detect_wasabi2(tx: ResolvedTransaction, cfg: DetectorConfig = DEFAULT_CONFIG) -> bool:
    if tx.is_coinbase or not tx.inputs:
        return False
    n_in = len(tx.inputs)
    if n_in < cfg.wasabi2_target_p:
        return False
    n_out = len(tx.outputs)
    if tx.n_scripts_out != n_out:
        return False
    if min(t.value for t in tx.inputs) < cfg.wasabi2_v_min:
        return False
    denoms = cfg.denomination_set
    standard = sum(c for v, c in tx.histogram.items() if v in denoms)
    return 2 * standard >= n_out - 1 and standard * cfg.wasabi2_a_max >= n_in


def estimate_pool(tx: ResolvedTransaction, cfg: DetectorConfig = DEFAULT_CONFIG) -> PoolEstimate | None:
    """Guess the Tx0 premix value and its pool.

    Premix candidates are output values within [d + epsilon_min,
    d + epsilon_max] of some pool denomination d. The most frequent one wins,
    ties going to the higher value; the pool is the one with the nearest
    denomination not above it.
    """
    pools = cfg.whirlpool_pools
    lo, hi = cfg.epsilon_min, cfg.epsilon_max
    best_value, best_count = None, 0
    for value, count in tx.histogram.items():
        if count < best_count or (count == best_count and value < best_value):
            continue
        if any(d + lo <= value <= d + hi for d, _ in pools):
            best_value, best_count = value, count
    if best_value is None:
        return None
    below = [(d, f) for d, f in pools if d <= best_value]
    d, f = min(below, key=lambda p: best_value - p[0])
    return PoolEstimate(best_value, d, f)


def detect_whirlpool_tx0(tx: ResolvedTransaction, cfg: DetectorConfig = DEFAULT_CONFIG,
                         estimate: PoolEstimate | None = None) -> bool:
    if tx.is_coinbase:
        return False
    hist = tx.histogram
    if hist.get(0, 0) != 1:
        return False
    est = estimate or estimate_pool(tx, cfg)
    if est is None or not cfg.epsilon_min <= est.epsilon <= cfg.epsilon_max:
        return False
    premix = hist[est.premix_value]
    if premix < 1 or premix < len(tx.outputs) - 3 or premix > cfg.whirlpool_a_max:
        return False
    lo, hi = cfg.eta1 * est.fee, cfg.eta2 * est.fee
    fee_like = sum(c for v, c in hist.items() if lo <= v <= hi)
    return fee_like == 1


def whirlpool_mix_pool(tx: ResolvedTransaction, cfg: DetectorConfig = DEFAULT_CONFIG) -> tuple[int, int] | None:
    """Pool of a Whirlpool mix, or None when the transaction is not one."""
    if tx.is_coinbase:
        return None
    if not (len(tx.inputs) == tx.n_scripts_in == tx.n_scripts_out == len(tx.outputs) == WHIRLPOOL_MIX_SIZE):
        return None
    hist = tx.histogram
    if len(hist) != 1:
        return None
    (value,) = hist
    for d, f in cfg.whirlpool_pools:
        if value != d:
            continue
        top = d + cfg.epsilon_max
        if not all(d <= t.value <= top for t in tx.inputs):
            continue
        premix = sum(1 for t in tx.inputs if t.value > d)
        if 1 <= premix <= WHIRLPOOL_MIX_SIZE - 1:
            return d, f
    return None


def detect_whirlpool_mix(tx: ResolvedTransaction, cfg: DetectorConfig = DEFAULT_CONFIG) -> bool:
    return whirlpool_mix_pool(tx, cfg) is not None


def classify(tx: ResolvedTransaction, cfg: DetectorConfig = DEFAULT_CONFIG) -> Classification:
    """Run every heuristic; no precedence between labels is applied here."""
    if tx.is_coinbase or not tx.outputs:
        return Classification()
    labels = set()
    if detect_joinmarket(tx, cfg):
        labels.add(Label.JOINMARKET)
    if detect_wasabi1(tx, cfg):
        labels.add(Label.WASABI1_0)
    if detect_wasabi11(tx, cfg):
        labels.add(Label.WASABI1_1)
    if detect_wasabi2(tx, cfg):
        labels.add(Label.WASABI2_0)
    pool, eps = None, None
    est = estimate_pool(tx, cfg)
    if est is not None and detect_whirlpool_tx0(tx, cfg, est):
        labels.add(Label.WHIRLPOOL_TX0)
        pool, eps = (est.denomination, est.fee), est.epsilon
    mix = whirlpool_mix_pool(tx, cfg)
    if mix is not None:
        labels.add(Label.WHIRLPOOL_MIX)
        pool = pool or mix

    n_hat = estimate_n(tx)
    return Classification(
        labels=frozenset(labels),
        estimated_n=n_hat,
        estimated_d=estimate_base_denom(tx, n_hat),
        estimated_pool=pool,
        estimated_epsilon=eps,
    )
