import itertools

from cjscan.model import ResolvedTransaction, Txo, script_id

_fresh = itertools.count()


def sid(name) -> bytes:
    return script_id(str(name).encode())


def fresh() -> bytes:
    return sid(f"fresh-{next(_fresh)}")


def txos(values, scripts=None):
    if scripts is None:
        return tuple(Txo(v, fresh()) for v in values)
    return tuple(Txo(v, sid(s)) for v, s in zip(values, scripts, strict=True))


def mktx(in_values, out_values, in_scripts=None, out_scripts=None, coinbase=False, height=0):
    return ResolvedTransaction(
        txid=sid(f"tx-{next(_fresh)}"),
        height=height,
        inputs=txos(in_values, in_scripts),
        outputs=txos(out_values, out_scripts),
        is_coinbase=coinbase,
    )


# --- raw block fuzzing -------------------------------------------------------

GENESIS_HEX = (
    "0100000000000000000000000000000000000000000000000000000000000000000000003ba3edfd7a7b12b27ac72c3e67768f61"
    "7fc81bc3888a51323a9fb8aa4b1e5e4a29ab5f49ffff001d1dac2b7c01010000000100000000000000000000000000000000000000"
    "00000000000000000000000000ffffffff4d04ffff001d0104455468652054696d65732030332f4a616e2f32303039204368616e63"
    "656c6c6f72206f6e206272696e6b206f66207365636f6e64206261696c6f757420666f722062616e6b73ffffffff0100f2052a0100"
    "0000434104678afdb0fe5548271967f1a67130b7105cd6a828e03909a67962e0ea1f61deb649f6bc3f4cef38c4f35504e51ec112de"
    "5c384df7ba0b8d578a4c702b6bf11d5fac00000000"
)


def _rand_bytes(rng, lo, hi):
    # occasionally long enough to need a 3-byte varint
    n = rng.randint(253, 300) if rng.random() < 0.05 else rng.randint(lo, hi)
    return rng.randbytes(n)


def random_transaction(rng, coinbase=False):
    from cjscan.blockfile import Transaction, TxIn, TxOut
    from cjscan.model import COINBASE_VOUT, NULL_TXID, Outpoint

    segwit = not coinbase and rng.random() < 0.5
    if coinbase:
        inputs = [TxIn(Outpoint(NULL_TXID, COINBASE_VOUT), _rand_bytes(rng, 2, 40), rng.getrandbits(32))]
    else:
        inputs = [
            TxIn(Outpoint(rng.randbytes(32), rng.randint(0, 2**32 - 2)), _rand_bytes(rng, 0, 110),
                 rng.getrandbits(32))
            for _ in range(rng.randint(1, 4))
        ]
    if segwit:
        for txin in inputs:
            txin.witness = tuple(_rand_bytes(rng, 0, 80) for _ in range(rng.randint(0, 3)))
    outputs = [TxOut(rng.randint(0, 21 * 10**14), _rand_bytes(rng, 0, 40)) for _ in range(rng.randint(1, 5))]
    return Transaction(rng.randint(1, 2), inputs, outputs, rng.getrandbits(32), segwit)


def random_block(rng, prev_hash=None):
    from cjscan.blockfile import build_block

    txs = [random_transaction(rng, coinbase=True)]
    txs += [random_transaction(rng) for _ in range(rng.randint(0, 6))]
    return build_block(prev_hash if prev_hash is not None else rng.randbytes(32), txs,
                       time=rng.getrandbits(32), nonce=rng.getrandbits(32))
