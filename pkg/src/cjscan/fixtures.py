"""Turn synthetic resolved transactions into a small regtest-style block chain.

Every block's coinbase creates the outputs that the next block's
transactions spend, so the chain resolves cleanly against a fresh TXO
index. No proof of work or consensus rule is honoured beyond structure.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from cjscan.blockfile import (
    REGTEST_MAGIC, RawBlock, Transaction, TxIn, TxOut, build_block, write_block_file,
)
from cjscan.model import COINBASE_VOUT, NULL_TXID, Outpoint, ResolvedTransaction
from cjscan.synthgen import PROTOCOLS, PROTOCOL_LABEL, gen_negative, generate, random_spec


@dataclass
class FixtureTx:
    height: int
    txid: bytes
    label: str | None
    resolved: ResolvedTransaction


def _coinbase(height: int, outputs: list[TxOut]) -> Transaction:
    script_sig = bytes([4]) + height.to_bytes(4, "little") + b"cjscan"
    if not outputs:
        outputs = [TxOut(50 * 100_000_000, b"\x51")]
    return Transaction(1, [TxIn(Outpoint(NULL_TXID, COINBASE_VOUT), script_sig)], outputs)


def build_chain(groups: Sequence[Sequence[tuple[str | None, ResolvedTransaction]]],
                scripts: dict[bytes, bytes]) -> tuple[list[RawBlock], list[FixtureTx]]:
    """Block 0 funds ``groups[0]``; block h + 1 carries ``groups[h]`` and funds ``groups[h + 1]``.

    ``scripts`` maps script ids back to raw script bytes (as collected by the
    generators' ``scripts`` argument). Every other transaction is written
    with a witness so both encodings appear in the file.
    """
    blocks: list[RawBlock] = []
    placed: list[FixtureTx] = []
    prev = NULL_TXID
    funded: list[tuple[str | None, ResolvedTransaction, list[Outpoint]]] = []
    for height in range(len(groups) + 1):
        spends = [_spend(tx, refs, scripts, witness=i % 2 == 1) for i, (_, tx, refs) in enumerate(funded)]
        upcoming = groups[height] if height < len(groups) else ()
        coinbase = _coinbase(height, [TxOut(t.value, scripts[t.script]) for _, tx in upcoming for t in tx.inputs])
        block = build_block(prev, [coinbase, *spends], time=1_600_000_000 + 600 * height, nonce=height)
        blocks.append(block)
        placed += [FixtureTx(height, raw.txid, label, tx) for raw, (label, tx, _) in zip(spends, funded)]

        funded, vout = [], 0
        for label, tx in upcoming:
            refs = [Outpoint(coinbase.txid, vout + i) for i in range(len(tx.inputs))]
            vout += len(tx.inputs)
            funded.append((label, tx, refs))
        prev = block.block_hash
    return blocks, placed


def _spend(tx: ResolvedTransaction, refs: list[Outpoint], scripts: dict[bytes, bytes],
           witness: bool) -> Transaction:
    inputs = []
    for ref in refs:
        wit = (hashlib.sha256(ref.key()).digest() * 2 + b"\x01",) if witness else ()
        inputs.append(TxIn(ref, b"" if witness else b"\x00", 0xFFFFFFFD, wit))
    outputs = [TxOut(t.value, scripts[t.script]) for t in tx.outputs]
    return Transaction(2, inputs, outputs, 0, witness)


def e2e_fixture(negatives: int = 50, seed: int = 0, blocks: int = 5):
    """One generated round per protocol plus ``negatives`` payment-like transactions.

    Negatives that happen to trip a heuristic are skipped so the fixture holds
    exactly six positives. Returns (blocks, placed transactions).
    """
    from cjscan.detectors import classify

    scripts: dict[bytes, bytes] = {}
    items: list[tuple[str | None, ResolvedTransaction]] = []
    for protocol in PROTOCOLS:
        tx = generate(random_spec(protocol, seed), scripts=scripts)
        items.append((PROTOCOL_LABEL[protocol].value, tx))
    s = seed
    while len(items) < len(PROTOCOLS) + negatives:
        tx = gen_negative(s, scripts=scripts)
        s += 1
        if not classify(tx).labels:
            items.append((None, tx))
    n_groups = blocks - 1
    groups: list[list] = [[] for _ in range(n_groups)]
    for i, item in enumerate(items):
        groups[i % n_groups].append(item)
    return build_chain(groups, scripts)


def write_fixture(directory: str | Path, blocks: Sequence[RawBlock], magic: bytes = REGTEST_MAGIC,
                  files: int = 2, padding: int = 4096) -> list[Path]:
    """Write blocks across ``files`` blk files, out of height order, with zero padding."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    order = list(reversed(blocks))
    per = -(-len(order) // files)
    paths = []
    for i in range(files):
        chunk = order[i * per:(i + 1) * per]
        if not chunk:
            continue
        path = directory / f"blk{i:05d}.dat"
        path.write_bytes(write_block_file(chunk, magic, padding) + bytes(padding))
        paths.append(path)
    return paths
