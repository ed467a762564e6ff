"""Outpoint -> Txo store used to resolve transaction inputs during a chain scan."""

from __future__ import annotations

import hashlib
import os
import struct
from pathlib import Path

from cjscan.blockfile import Transaction
from cjscan.model import Outpoint, ResolvedTransaction, Txo, script_id

MAGIC = b"CJTXOIDX"
FORMAT_VERSION = 1
KEY_SIZE = 36
VALUE_SIZE = 40
NO_HEIGHT = 0xFFFFFFFF  # stored in place of -1 (nothing applied yet)

_HEAD = struct.Struct("<8sHIQ")
_VALUE = struct.Struct("<Q")


class MissingOutpoint(KeyError):
    def __init__(self, outpoint: Outpoint):
        self.outpoint = outpoint
        super().__init__(f"outpoint {outpoint} not in index")


class CorruptSnapshot(ValueError):
    pass


class ValueConservationError(ValueError):
    pass


def _pack(value: int, script: bytes) -> bytes:
    return _VALUE.pack(value) + script


def _unpack(record: bytes) -> Txo:
    return Txo(_VALUE.unpack_from(record)[0], record[8:40])


class TxoIndex:
    """In-memory hash table of fixed-width records with deterministic snapshots.

    Keys are ``txid || vout`` (36 bytes LE), values ``value || script_id``
    (40 bytes). With ``prune`` on, spent outputs are deleted so the table
    tracks the UTXO set.
    """

    def __init__(self, prune: bool = True):
        self.prune = prune
        self.height = -1
        self.inserts = 0
        self.lookups = 0
        self.deletes = 0
        self._store: dict[bytes, bytes] = {}

    def __len__(self) -> int:
        return len(self._store)

    def __contains__(self, outpoint: Outpoint) -> bool:
        return outpoint.key() in self._store

    def get(self, outpoint: Outpoint) -> Txo:
        self.lookups += 1
        try:
            return _unpack(self._store[outpoint.key()])
        except KeyError:
            raise MissingOutpoint(outpoint) from None

    def put(self, outpoint: Outpoint, txo: Txo) -> None:
        self._store[outpoint.key()] = _pack(txo.value, txo.script)
        self.inserts += 1

    def apply_transaction(self, tx: Transaction, height: int) -> ResolvedTransaction:
        """Spend the inputs of ``tx``, add its outputs, and return it resolved.

        Transactions must be applied in chain order. Inputs are all looked up
        before anything is deleted, so a failed resolution leaves the index
        untouched.
        """
        store = self._store
        inputs: list[Txo] = []
        coinbase = tx.is_coinbase
        if not coinbase:
            keys = []
            for txin in tx.inputs:
                key = txin.prevout.txid + txin.prevout.vout.to_bytes(4, "little")
                record = store.get(key)
                if record is None:
                    raise MissingOutpoint(txin.prevout)
                keys.append(key)
                inputs.append(_unpack(record))
            self.lookups += len(keys)
            if len(set(keys)) != len(keys):
                seen = set()
                dup = next(k for k in keys if k in seen or seen.add(k))
                raise MissingOutpoint(Outpoint.from_key(dup))
            if self.prune:
                for key in keys:
                    del store[key]
                self.deletes += len(keys)

        outputs = [Txo(o.value, script_id(o.script)) for o in tx.outputs]
        txid = tx.txid
        for vout, txo in enumerate(outputs):
            store[txid + vout.to_bytes(4, "little")] = _pack(txo.value, txo.script)
        self.inserts += len(outputs)

        resolved = ResolvedTransaction(txid, height, tuple(inputs), tuple(outputs), coinbase)
        if not coinbase and resolved.value_in < resolved.value_out:
            raise ValueConservationError(
                f"tx {resolved.txid_hex} spends {resolved.value_in} but creates {resolved.value_out}"
            )
        return resolved

    def finish_block(self, height: int) -> None:
        self.height = height

    def snapshot_bytes(self) -> bytes:
        height = NO_HEIGHT if self.height < 0 else self.height
        body = bytearray(_HEAD.pack(MAGIC, FORMAT_VERSION, height, len(self._store)))
        store = self._store
        for key in sorted(store):
            body += key
            body += store[key]
        body += hashlib.sha256(body).digest()
        return bytes(body)

    def checkpoint(self, path: str | os.PathLike) -> None:
        """Write a snapshot atomically (temp file + rename)."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.snapshot_bytes())
        os.replace(tmp, path)

    @classmethod
    def from_snapshot(cls, data: bytes, prune: bool = True) -> "TxoIndex":
        if len(data) < _HEAD.size + 32:
            raise CorruptSnapshot("snapshot too short")
        body, digest = data[:-32], data[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise CorruptSnapshot("checksum mismatch")
        magic, version, height, count = _HEAD.unpack_from(body)
        if magic != MAGIC:
            raise CorruptSnapshot(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise CorruptSnapshot(f"unsupported format version {version}")
        width = KEY_SIZE + VALUE_SIZE
        if len(body) != _HEAD.size + count * width:
            raise CorruptSnapshot("record count does not match size")
        index = cls(prune=prune)
        index.height = -1 if height == NO_HEIGHT else height
        pos = _HEAD.size
        store = index._store
        for _ in range(count):
            store[body[pos:pos + KEY_SIZE]] = body[pos + KEY_SIZE:pos + width]
            pos += width
        index.inserts = count
        return index

    @classmethod
    def restore(cls, path: str | os.PathLike, prune: bool = True) -> "TxoIndex":
        return cls.from_snapshot(Path(path).read_bytes(), prune=prune)
