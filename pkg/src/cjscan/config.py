"""Detector parameters, their defaults and the JSON config file format.

All amounts are integer satoshis. Ratios (``eta1``, ``eta2``) are exact
fractions; in the config file they may be numbers or strings such as ``"1/2"``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any

from cjscan.model import SATS_PER_BTC

MAX_MONEY = 2_099_999_997_690_000


class ConfigError(ValueError):
    pass


def btc_to_sats(amount: str | Decimal) -> int:
    sats = Decimal(amount) * SATS_PER_BTC
    if sats != sats.to_integral_value():
        raise ConfigError(f"{amount} BTC is not a whole number of satoshis")
    return int(sats)


# Samourai Whirlpool pools: (denomination, coordinator fee) in BTC.
WHIRLPOOL_POOLS_BTC = (
    ("0.001", "0.00005"),
    ("0.01", "0.0005"),
    ("0.05", "0.00175"),
    ("0.5", "0.0175"),
)
DEFAULT_POOLS = tuple((btc_to_sats(d), btc_to_sats(f)) for d, f in WHIRLPOOL_POOLS_BTC)


def default_denomination_family(v_min: int, v_max: int = MAX_MONEY) -> tuple[int, ...]:
    """Powers of 2 and 3, twice the powers of 3, and 1-2-5 times powers of 10.

    Not taken from the detection heuristics themselves; it mirrors how the
    Wasabi 2.0 client builds its standard denominations. Clipped to
    ``[v_min, v_max]``.
    """
    out: set[int] = set()

    def powers(base: int, mult: int = 1) -> None:
        v = mult
        while v <= v_max:
            if v >= v_min:
                out.add(v)
            v *= base

    powers(2)
    powers(3)
    powers(3, 2)
    powers(10)
    powers(10, 2)
    powers(10, 5)
    return tuple(sorted(out))


def _fraction(value: Any) -> Fraction:
    try:
        return Fraction(str(value))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a rational number: {value!r}") from exc


@dataclass(frozen=True)
class DetectorConfig:
    wasabi_epsilon: int = 2_000_000
    wasabi1_a_max: int = 7
    wasabi11_max_level: int = 10
    wasabi2_a_max: int = 10
    wasabi2_target_p: int = 50
    wasabi2_v_min: int = 5000
    wasabi2_denoms: tuple[int, ...] | None = None
    whirlpool_pools: tuple[tuple[int, int], ...] = DEFAULT_POOLS
    whirlpool_a_max: int = 70
    eta1: Fraction = Fraction(1, 2)
    eta2: Fraction = Fraction(3)
    epsilon_min: int = 100
    epsilon_max: int = 100_000

    _denom_set: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        set_ = object.__setattr__
        set_(self, "eta1", _fraction(self.eta1))
        set_(self, "eta2", _fraction(self.eta2))
        set_(self, "whirlpool_pools", tuple((int(d), int(f)) for d, f in self.whirlpool_pools))
        if self.wasabi2_denoms is None:
            set_(self, "wasabi2_denoms", default_denomination_family(self.wasabi2_v_min))
        else:
            set_(self, "wasabi2_denoms", tuple(int(v) for v in self.wasabi2_denoms))
        self._validate()
        set_(self, "_denom_set", frozenset(self.wasabi2_denoms))

    def _validate(self) -> None:
        for f in fields(self):
            if f.name.startswith("_"):
                continue
            v = getattr(self, f.name)
            if isinstance(v, (int, Fraction)) and not isinstance(v, bool) and v < 0:
                raise ConfigError(f"{f.name} must be non-negative, got {v}")
        if not self.eta1 <= 1 <= self.eta2:
            raise ConfigError(f"need eta1 <= 1 <= eta2, got {self.eta1}, {self.eta2}")
        if self.epsilon_min > self.epsilon_max:
            raise ConfigError("epsilon_min exceeds epsilon_max")
        denoms = [d for d, _ in self.whirlpool_pools]
        if len(set(denoms)) != len(denoms):
            raise ConfigError("whirlpool pools must have distinct denominations")
        d = self.wasabi2_denoms
        if any(a >= b for a, b in zip(d, d[1:])):
            raise ConfigError("wasabi2_denoms must be strictly ascending")
        if d and d[0] < self.wasabi2_v_min:
            raise ConfigError("wasabi2_denoms must all be >= wasabi2_v_min")
        for name in ("wasabi1_a_max", "wasabi2_a_max", "whirlpool_a_max"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")

    @property
    def denomination_set(self) -> frozenset:
        return self._denom_set

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            if f.name.startswith("_"):
                continue
            v = getattr(self, f.name)
            if isinstance(v, Fraction):
                v = str(v)
            elif f.name == "whirlpool_pools":
                v = [list(p) for p in v]
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DetectorConfig":
        known = {f.name for f in fields(cls) if not f.name.startswith("_")}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kwargs = dict(data)
        for name in ("eta1", "eta2"):
            if name in kwargs:
                kwargs[name] = _fraction(kwargs[name])
        for name in known - {"eta1", "eta2", "wasabi2_denoms", "whirlpool_pools"}:
            if name in kwargs and (not isinstance(kwargs[name], int) or isinstance(kwargs[name], bool)):
                raise ConfigError(f"{name} must be an integer, got {kwargs[name]!r}")
        try:
            if kwargs.get("whirlpool_pools") is not None:
                kwargs["whirlpool_pools"] = tuple((int(d), int(f)) for d, f in kwargs["whirlpool_pools"])
            if kwargs.get("wasabi2_denoms") is not None:
                kwargs["wasabi2_denoms"] = tuple(int(v) for v in kwargs["wasabi2_denoms"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad list value: {exc}") from exc
        return cls(**kwargs)

    def with_(self, **changes: Any) -> "DetectorConfig":
        return replace(self, **changes)


def load_config(path: str | os.PathLike | None) -> DetectorConfig:
    """Read a JSON config file; missing keys take their defaults."""
    if path is None:
        return DetectorConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return DetectorConfig.from_dict(data)


def standard_denominations(cfg: DetectorConfig) -> tuple[int, ...]:
    return cfg.wasabi2_denoms
