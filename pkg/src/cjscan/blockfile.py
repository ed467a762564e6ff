"""Bitcoin Core ``blk*.dat`` parsing, main-chain reconstruction and transaction streaming."""

from __future__ import annotations

import hashlib
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence

from cjscan.model import COINBASE_VOUT, NULL_TXID, Outpoint

logger = logging.getLogger(__name__)

MAINNET_MAGIC = bytes.fromhex("f9beb4d9")
REGTEST_MAGIC = bytes.fromhex("fabfb5da")
HEADER_SIZE = 80
MAX_VARINT = 2**53

_U32 = struct.Struct("<I")
_I32 = struct.Struct("<i")
_U64 = struct.Struct("<Q")


class ParseError(ValueError):
    pass


class TruncatedTransaction(ParseError):
    pass


class VarintOverflow(ParseError):
    pass


class MalformedBlock(ParseError):
    def __init__(self, offset: int, reason: str = "", source: str | None = None):
        self.offset = offset
        self.reason = reason
        self.source = source
        where = f"{source}:{offset}" if source else str(offset)
        super().__init__(f"malformed block at {where}: {reason}")


class MissingGenesis(ValueError):
    pass


def sha256d(data: bytes) -> bytes:
    return hashlib.sha256(hashlib.sha256(data).digest()).digest()


def read_varint(data: bytes, pos: int) -> tuple[int, int]:
    """Decode a CompactSize integer at ``pos``; returns (value, new position)."""
    if pos >= len(data):
        raise TruncatedTransaction(f"varint past end at {pos}")
    prefix = data[pos]
    if prefix < 0xFD:
        return prefix, pos + 1
    width = {0xFD: 2, 0xFE: 4, 0xFF: 8}[prefix]
    end = pos + 1 + width
    if end > len(data):
        raise TruncatedTransaction(f"varint past end at {pos}")
    value = int.from_bytes(data[pos + 1:end], "little")
    if value > MAX_VARINT:
        raise VarintOverflow(f"varint {value} at {pos}")
    return value, end


def encode_varint(n: int) -> bytes:
    if n < 0xFD:
        return bytes([n])
    if n <= 0xFFFF:
        return b"\xfd" + n.to_bytes(2, "little")
    if n <= 0xFFFFFFFF:
        return b"\xfe" + n.to_bytes(4, "little")
    return b"\xff" + n.to_bytes(8, "little")


@dataclass(slots=True)
class TxIn:
    prevout: Outpoint
    script_sig: bytes = b""
    sequence: int = 0xFFFFFFFF
    witness: tuple[bytes, ...] = ()


@dataclass(slots=True)
class TxOut:
    value: int
    script: bytes


@dataclass(slots=True)
class Transaction:
    """A transaction as serialized on chain; inputs are still references."""

    version: int
    inputs: list[TxIn]
    outputs: list[TxOut]
    locktime: int = 0
    segwit: bool = False
    txid: bytes = b""

    @property
    def is_coinbase(self) -> bool:
        if len(self.inputs) != 1:
            return False
        prev = self.inputs[0].prevout
        return prev.txid == NULL_TXID and prev.vout == COINBASE_VOUT


def _need(data: bytes, pos: int, n: int) -> None:
    if pos + n > len(data):
        raise TruncatedTransaction(f"need {n} bytes at {pos}, have {len(data) - pos}")


def parse_transaction(data: bytes, offset: int = 0) -> tuple[Transaction, int]:
    """Parse one serialized transaction starting at ``offset``.

    Returns the transaction (txid filled in) and the number of bytes consumed.
    """
    pos = offset
    _need(data, pos, 4)
    (version,) = _I32.unpack_from(data, pos)
    pos += 4
    segwit = False
    if pos + 1 < len(data) and data[pos] == 0 and data[pos + 1] == 1:
        segwit = True
        pos += 2
    body_start = pos

    n_in, pos = read_varint(data, pos)
    inputs = []
    for _ in range(n_in):
        _need(data, pos, 36)
        prev_txid = bytes(data[pos:pos + 32])
        (vout,) = _U32.unpack_from(data, pos + 32)
        pos += 36
        slen, pos = read_varint(data, pos)
        _need(data, pos, slen + 4)
        script_sig = bytes(data[pos:pos + slen])
        pos += slen
        (sequence,) = _U32.unpack_from(data, pos)
        pos += 4
        inputs.append(TxIn(Outpoint(prev_txid, vout), script_sig, sequence))

    n_out, pos = read_varint(data, pos)
    outputs = []
    for _ in range(n_out):
        _need(data, pos, 8)
        (value,) = _U64.unpack_from(data, pos)
        pos += 8
        slen, pos = read_varint(data, pos)
        _need(data, pos, slen)
        outputs.append(TxOut(value, bytes(data[pos:pos + slen])))
        pos += slen
    body_end = pos

    if segwit:
        for txin in inputs:
            n_items, pos = read_varint(data, pos)
            items = []
            for _ in range(n_items):
                ilen, pos = read_varint(data, pos)
                _need(data, pos, ilen)
                items.append(bytes(data[pos:pos + ilen]))
                pos += ilen
            txin.witness = tuple(items)

    _need(data, pos, 4)
    (locktime,) = _U32.unpack_from(data, pos)
    pos += 4

    if segwit:
        stripped = (
            bytes(data[offset:offset + 4]) + bytes(data[body_start:body_end]) + bytes(data[pos - 4:pos])
        )
    else:
        stripped = bytes(data[offset:pos])
    tx = Transaction(version, inputs, outputs, locktime, segwit, sha256d(stripped))
    return tx, pos - offset


def serialize_transaction(tx: Transaction, include_witness: bool = True) -> bytes:
    parts = [_I32.pack(tx.version)]
    with_witness = include_witness and tx.segwit
    if with_witness:
        parts.append(b"\x00\x01")
    parts.append(encode_varint(len(tx.inputs)))
    for txin in tx.inputs:
        parts.append(txin.prevout.txid)
        parts.append(_U32.pack(txin.prevout.vout))
        parts.append(encode_varint(len(txin.script_sig)))
        parts.append(txin.script_sig)
        parts.append(_U32.pack(txin.sequence))
    parts.append(encode_varint(len(tx.outputs)))
    for txout in tx.outputs:
        parts.append(_U64.pack(txout.value))
        parts.append(encode_varint(len(txout.script)))
        parts.append(txout.script)
    if with_witness:
        for txin in tx.inputs:
            parts.append(encode_varint(len(txin.witness)))
            for item in txin.witness:
                parts.append(encode_varint(len(item)))
                parts.append(item)
    parts.append(_U32.pack(tx.locktime))
    return b"".join(parts)


def compute_txid(tx: Transaction) -> bytes:
    """Double SHA-256 of the witness-stripped serialization, internal byte order."""
    return sha256d(serialize_transaction(tx, include_witness=False))


def txid_hex(txid: bytes) -> str:
    return txid[::-1].hex()


@dataclass(frozen=True, slots=True)
class FilePosition:
    path: str
    offset: int  # offset of the block payload, after magic and length
    length: int


@dataclass(slots=True)
class RawBlock:
    header: bytes
    transactions: list[Transaction]
    block_hash: bytes
    position: FilePosition | None = None

    @property
    def prev_hash(self) -> bytes:
        return self.header[4:36]

    @property
    def merkle_root(self) -> bytes:
        return self.header[36:68]

    @property
    def time(self) -> int:
        return _U32.unpack_from(self.header, 68)[0]


@dataclass(frozen=True, slots=True)
class BlockLocation:
    """Header-only view of a block inside a blk file."""

    block_hash: bytes
    prev_hash: bytes
    position: FilePosition


def parse_block(data: bytes, offset: int = 0, length: int | None = None) -> tuple[RawBlock, int]:
    """Parse a block (header + transactions); returns the block and bytes consumed."""
    end = len(data) if length is None else offset + length
    if offset + HEADER_SIZE > end:
        raise MalformedBlock(offset, "truncated header")
    header = bytes(data[offset:offset + HEADER_SIZE])
    try:
        n_tx, pos = read_varint(data, offset + HEADER_SIZE)
        txs = []
        for _ in range(n_tx):
            tx, used = parse_transaction(data, pos)
            txs.append(tx)
            pos += used
    except ParseError as exc:
        raise MalformedBlock(offset, str(exc)) from exc
    return RawBlock(header, txs, sha256d(header)), pos - offset


def serialize_block(block: RawBlock) -> bytes:
    return block.header + encode_varint(len(block.transactions)) + b"".join(
        serialize_transaction(tx) for tx in block.transactions
    )


def make_header(prev_hash: bytes, merkle_root: bytes, time: int = 0, bits: int = 0x207FFFFF,
                nonce: int = 0, version: int = 1) -> bytes:
    return (
        _I32.pack(version) + prev_hash + merkle_root + _U32.pack(time) + _U32.pack(bits) + _U32.pack(nonce)
    )


def merkle_root(txids: Sequence[bytes]) -> bytes:
    level = list(txids)
    if not level:
        return NULL_TXID
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [sha256d(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def build_block(prev_hash: bytes, transactions: list[Transaction], time: int = 0, nonce: int = 0) -> RawBlock:
    """Assemble a block around ``transactions`` (no proof of work)."""
    for tx in transactions:
        if not tx.txid:
            tx.txid = compute_txid(tx)
    header = make_header(prev_hash, merkle_root([tx.txid for tx in transactions]), time=time, nonce=nonce)
    return RawBlock(header, transactions, sha256d(header))


def write_block_file(blocks: Iterable[RawBlock], magic: bytes = MAINNET_MAGIC, padding: int = 0) -> bytes:
    """Frame blocks the way Bitcoin Core does, with optional zero padding between records."""
    out = bytearray()
    for i, block in enumerate(blocks):
        if i and padding:
            out += bytes(padding)
        payload = serialize_block(block)
        out += magic + _U32.pack(len(payload)) + payload
    return bytes(out)


def _load(source: bytes | str | os.PathLike | BinaryIO) -> tuple[bytes, str | None]:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source), None
    if isinstance(source, (str, os.PathLike)):
        return Path(source).read_bytes(), str(source)
    return source.read(), getattr(source, "name", None)


def _records(data: bytes, magic: bytes, source: str | None, errors: list | None):
    """Yield (payload_offset, length) for every framed record, skipping gaps."""
    pos = data.find(magic)
    size = len(data)
    while pos != -1 and pos + 8 <= size:
        (length,) = _U32.unpack_from(data, pos + 4)
        start = pos + 8
        if start + length > size:
            err = MalformedBlock(pos, f"length {length} runs past end of file", source)
            logger.warning("%s", err)
            if errors is not None:
                errors.append(err)
            pos = data.find(magic, pos + 1)
            continue
        yield start, length
        nxt = start + length
        pos = nxt if data[nxt:nxt + 4] == magic else data.find(magic, nxt)


def parse_block_file(source, magic: bytes = MAINNET_MAGIC, errors: list | None = None) -> Iterator[RawBlock]:
    """Yield every well-formed block of a blk file in file order.

    Malformed records are logged, appended to ``errors`` when given, and
    skipped; the scan resumes at the next magic.
    """
    data, name = _load(source)
    for start, length in _records(data, magic, name, errors):
        try:
            block, used = parse_block(data, start, length)
            if used != length:
                raise MalformedBlock(start - 8, f"declared length {length}, parsed {used}", name)
        except MalformedBlock as exc:
            err = MalformedBlock(start - 8, exc.reason, name)
            logger.warning("%s", err)
            if errors is not None:
                errors.append(err)
            continue
        block.position = FilePosition(name or "<memory>", start, length)
        yield block


def scan_block_headers(path: str | os.PathLike, magic: bytes = MAINNET_MAGIC,
                       errors: list | None = None) -> Iterator[BlockLocation]:
    """Header-only pass over a blk file; transactions are parsed later on demand."""
    data, name = _load(path)
    for start, length in _records(data, magic, name, errors):
        if length < HEADER_SIZE:
            err = MalformedBlock(start - 8, f"record of {length} bytes is shorter than a header", name)
            logger.warning("%s", err)
            if errors is not None:
                errors.append(err)
            continue
        header = data[start:start + HEADER_SIZE]
        yield BlockLocation(sha256d(header), header[4:36], FilePosition(str(path), start, length))


def block_files(blocks_dir: str | os.PathLike) -> list[Path]:
    return sorted(Path(blocks_dir).glob("blk*.dat"))


@dataclass
class ChainView:
    """Main chain from genesis to tip, plus where each block lives on disk."""

    hashes: list[bytes]
    positions: dict[bytes, FilePosition | None] = field(default_factory=dict)
    disconnected: list[bytes] = field(default_factory=list)
    blocks: dict[bytes, RawBlock] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.hashes)

    @property
    def tip_height(self) -> int:
        return len(self.hashes) - 1

    def height_of(self, block_hash: bytes) -> int:
        if not hasattr(self, "_heights"):
            self._heights = {h: i for i, h in enumerate(self.hashes)}
        return self._heights[block_hash]


def order_chain(blocks: Iterable[RawBlock | BlockLocation], genesis_hash: bytes | None = None) -> ChainView:
    """Longest chain (by height) rooted at the genesis block.

    Blocks may arrive in any order; duplicates keep the first occurrence.
    Without ``genesis_hash`` the genesis is the first block whose previous
    hash is all zeros. Blocks not reachable from it are reported in
    ``ChainView.disconnected``.
    """
    prev_of: dict[bytes, bytes] = {}
    order: list[bytes] = []
    positions: dict[bytes, FilePosition | None] = {}
    full: dict[bytes, RawBlock] = {}
    for b in blocks:
        h = b.block_hash
        if h in prev_of:
            continue
        prev_of[h] = b.prev_hash
        order.append(h)
        positions[h] = b.position
        if isinstance(b, RawBlock):
            full[h] = b

    if genesis_hash is None:
        genesis_hash = next((h for h in order if prev_of[h] == NULL_TXID), None)
    if genesis_hash is None or genesis_hash not in prev_of:
        raise MissingGenesis("no genesis block among the indexed blocks")

    children: dict[bytes, list[bytes]] = {}
    for h in order:
        if h != genesis_hash:
            children.setdefault(prev_of[h], []).append(h)

    depth = {genesis_hash: 0}
    stack = [genesis_hash]
    while stack:
        h = stack.pop()
        for child in children.get(h, ()):
            depth[child] = depth[h] + 1
            stack.append(child)
    best_depth = max(depth.values())
    # equal-height tips: the block indexed first wins
    rank = {h: i for i, h in enumerate(order)}
    tips = [h for h, d in depth.items() if d == best_depth]
    best = min(tips, key=rank.__getitem__)

    path = [best]
    while path[-1] != genesis_hash:
        path.append(prev_of[path[-1]])
    path.reverse()

    disconnected = [h for h in order if h not in depth]
    if disconnected:
        logger.info("%d blocks not connected to genesis", len(disconnected))
    return ChainView(
        hashes=path,
        positions={h: positions[h] for h in path},
        disconnected=disconnected,
        blocks={h: full[h] for h in path if h in full},
    )


class BlockReader:
    """Random access to block payloads by file position; keeps files open."""

    def __init__(self) -> None:
        self._files: dict[str, BinaryIO] = {}

    def read(self, pos: FilePosition) -> RawBlock:
        fh = self._files.get(pos.path)
        if fh is None:
            fh = self._files[pos.path] = open(pos.path, "rb")
        fh.seek(pos.offset)
        payload = fh.read(pos.length)
        if len(payload) != pos.length:
            raise OSError(f"short read at {pos.path}:{pos.offset}")
        block, _ = parse_block(payload, 0, pos.length)
        block.position = pos
        return block

    def close(self) -> None:
        for fh in self._files.values():
            fh.close()
        self._files.clear()

    def __enter__(self) -> "BlockReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def stream_transactions(chain: ChainView, height_cap: int | None = None, start_height: int = 0,
                        reader: BlockReader | None = None) -> Iterator[tuple[int, Transaction]]:
    """Yield (height, transaction) in chain order for heights start_height..height_cap.

    A coinbase txid seen earlier in the stream is skipped (the two historic
    duplicate coinbases); non-coinbase txids cannot repeat on a valid chain.
    """
    last = chain.tip_height if height_cap is None else min(height_cap, chain.tip_height)
    own_reader = reader is None
    reader = reader or BlockReader()
    seen_coinbase: set[bytes] = set()
    try:
        for height in range(start_height, last + 1):
            h = chain.hashes[height]
            block = chain.blocks.get(h)
            if block is None:
                block = reader.read(chain.positions[h])
            for tx in block.transactions:
                if tx.is_coinbase:
                    if tx.txid in seen_coinbase:
                        logger.warning("skipping duplicate coinbase %s at height %d", txid_hex(tx.txid), height)
                        continue
                    seen_coinbase.add(tx.txid)
                yield height, tx
    finally:
        if own_reader:
            reader.close()
