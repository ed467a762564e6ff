"""Transaction and TXO types shared by the index, the detectors and the generators."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

SATS_PER_BTC = 100_000_000
NULL_TXID = bytes(32)
COINBASE_VOUT = 0xFFFFFFFF


def script_id(script: bytes) -> bytes:
    """32-byte identity of a locking script. Equal iff the raw scripts are equal."""
    return hashlib.sha256(script).digest()


class Outpoint(NamedTuple):
    txid: bytes
    vout: int

    def key(self) -> bytes:
        return self.txid + self.vout.to_bytes(4, "little")

    @classmethod
    def from_key(cls, key: bytes) -> "Outpoint":
        return cls(bytes(key[:32]), int.from_bytes(key[32:36], "little"))

    def __str__(self) -> str:
        return f"{self.txid[::-1].hex()}:{self.vout}"


class Txo(NamedTuple):
    """A transaction output: value in satoshis and the hash of its locking script."""

    value: int
    script: bytes


@dataclass(frozen=True)
class ResolvedTransaction:
    """A transaction whose inputs are the Txos they spend.

    Derived quantities are cached on first access; instances must not be
    mutated after construction.
    """

    txid: bytes
    height: int
    inputs: tuple[Txo, ...]
    outputs: tuple[Txo, ...]
    is_coinbase: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.inputs, tuple):
            object.__setattr__(self, "inputs", tuple(self.inputs))
        if not isinstance(self.outputs, tuple):
            object.__setattr__(self, "outputs", tuple(self.outputs))

    @property
    def value_in(self) -> int:
        return sum(t.value for t in self.inputs)

    @property
    def value_out(self) -> int:
        return sum(t.value for t in self.outputs)

    @property
    def fee(self) -> int:
        """Network fee (zero for coinbase)."""
        return 0 if self.is_coinbase else self.value_in - self.value_out

    @cached_property
    def histogram(self) -> Counter:
        return Counter(t.value for t in self.outputs)

    @cached_property
    def n_scripts_in(self) -> int:
        return len({t.script for t in self.inputs})

    @cached_property
    def n_scripts_out(self) -> int:
        return len({t.script for t in self.outputs})

    @property
    def txid_hex(self) -> str:
        return self.txid[::-1].hex()


def distinct_input_scripts(tx: ResolvedTransaction) -> int:
    return tx.n_scripts_in


def distinct_output_scripts(tx: ResolvedTransaction) -> int:
    return tx.n_scripts_out


def output_value_histogram(tx: ResolvedTransaction) -> dict[int, int]:
    """Multiplicity of every output value, in satoshis."""
    return dict(tx.histogram)
