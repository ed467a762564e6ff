import csv
import json

import pytest

from cjscan import scan as scan_mod
from cjscan.blockfile import REGTEST_MAGIC, Transaction, TxIn, TxOut, build_block, write_block_file
from cjscan.cli import main
from cjscan.fixtures import _coinbase, e2e_fixture, write_fixture
from cjscan.model import NULL_TXID, Outpoint
from cjscan.synthgen import generate, random_spec, tx_to_json
from cjscan.txoindex import MissingOutpoint
from helpers import mktx

MAGIC = ["--magic", REGTEST_MAGIC.hex()]
OUTPUTS = ("labels.csv", "summary.json", "txoindex.ckpt", "scan_state.json", "labels.csv.partial")


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    blocks, placed = e2e_fixture(negatives=40, seed=0)
    d = tmp_path_factory.mktemp("blocks")
    write_fixture(d, blocks)
    return d, placed


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_scan_finds_exactly_the_positives(chain, tmp_path):
    blocks_dir, placed = chain
    assert main(["scan", "--blocks-dir", str(blocks_dir), "--out", str(tmp_path), *MAGIC]) == 0
    rows = _rows(tmp_path / "labels.csv")
    expected = {p.txid[::-1].hex(): p.label for p in placed if p.label}
    assert len(expected) == 6
    assert {r["txid"] for r in rows} == set(expected)
    columns = {"JoinMarket": "joinmarket", "Wasabi1_0": "wasabi1_0", "Wasabi1_1": "wasabi1_1",
               "Wasabi2_0": "wasabi2_0", "WhirlpoolTx0": "whirlpool_tx0", "WhirlpoolMix": "whirlpool_mix"}
    for r in rows:
        assert r[columns[expected[r["txid"]]]] == "1"
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["tip_height"] == 4 and summary["labelled"] == 6
    assert summary["classified"] == 46


def test_rerun_is_byte_identical(chain, tmp_path):
    blocks_dir, _ = chain
    for out in ("a", "b"):
        assert main(["scan", "--blocks-dir", str(blocks_dir), "--out", str(tmp_path / out), *MAGIC,
                     "--workers", "1" if out == "a" else "3"]) == 0
    assert (tmp_path / "a/labels.csv").read_bytes() == (tmp_path / "b/labels.csv").read_bytes()


def test_no_prune_keeps_spent_outputs(chain, tmp_path):
    blocks_dir, _ = chain
    pruned = scan_mod.scan(blocks_dir, tmp_path / "p", magic=REGTEST_MAGIC)
    full = scan_mod.scan(blocks_dir, tmp_path / "f", magic=REGTEST_MAGIC, prune=False)
    assert full["txo_entries"] > pruned["txo_entries"]
    assert (tmp_path / "p/labels.csv").read_bytes() == (tmp_path / "f/labels.csv").read_bytes()


def test_height_cap(chain, tmp_path):
    blocks_dir, _ = chain
    summary = scan_mod.scan(blocks_dir, tmp_path, height_cap=2, magic=REGTEST_MAGIC)
    assert summary["last_height"] == 2
    assert all(int(r["height"]) <= 2 for r in _rows(tmp_path / "labels.csv"))


def test_resume_matches_fresh_run(chain, tmp_path, monkeypatch):
    blocks_dir, _ = chain
    scan_mod.scan(blocks_dir, tmp_path / "fresh", magic=REGTEST_MAGIC)

    real = scan_mod.classify
    calls = {"n": 0}

    def flaky(tx, cfg):
        if tx.height == 3:
            calls["n"] += 1
            raise KeyboardInterrupt
        return real(tx, cfg)

    monkeypatch.setattr(scan_mod, "classify", flaky)
    with pytest.raises(KeyboardInterrupt):
        scan_mod.scan(blocks_dir, tmp_path / "resumed", magic=REGTEST_MAGIC, checkpoint_every=1)
    assert (tmp_path / "resumed/txoindex.ckpt").exists()
    assert not (tmp_path / "resumed/labels.csv").exists()
    monkeypatch.setattr(scan_mod, "classify", real)
    summary = scan_mod.scan(blocks_dir, tmp_path / "resumed", magic=REGTEST_MAGIC, resume=True)
    assert (tmp_path / "resumed/labels.csv").read_bytes() == (tmp_path / "fresh/labels.csv").read_bytes()
    assert summary["labelled"] == 6


def test_empty_dir_is_data_error(tmp_path):
    out = tmp_path / "out"
    assert main(["scan", "--blocks-dir", str(tmp_path), "--out", str(out)]) == 2
    assert not any((out / name).exists() for name in OUTPUTS)


def test_missing_outpoint_removes_outputs(tmp_path):
    g = build_block(NULL_TXID, [_coinbase(0, [TxOut(5_000, b"\x51")])], time=1, nonce=0)
    bad = Transaction(2, [TxIn(Outpoint(b"\x11" * 32, 0), b"\x00")], [TxOut(1_000, b"\x51")])
    b1 = build_block(g.block_hash, [_coinbase(1, []), bad], time=2, nonce=1)
    (tmp_path / "blocks").mkdir()
    (tmp_path / "blocks/blk00000.dat").write_bytes(write_block_file([g, b1], REGTEST_MAGIC))
    out = tmp_path / "out"
    with pytest.raises(MissingOutpoint):
        scan_mod.scan(tmp_path / "blocks", out, magic=REGTEST_MAGIC)
    assert not any((out / name).exists() for name in OUTPUTS)
    assert main(["scan", "--blocks-dir", str(tmp_path / "blocks"), "--out", str(out), *MAGIC]) == 2


def test_classify_command(tmp_path, capsys):
    mix = tmp_path / "mix.json"
    mix.write_text(json.dumps(tx_to_json(generate(random_spec("whirlpool_mix", 0)))))
    assert main(["classify", "--tx-file", str(mix)]) == 0
    result = json.loads(capsys.readouterr().out)
    assert "WhirlpoolMix" in result["labels"] and result["pool"] is not None

    pay = tmp_path / "pay.json"
    pay.write_text(json.dumps(tx_to_json(mktx([5_000_000], [1_000_000, 3_990_000]))))
    assert main(["classify", "--tx-file", str(pay)]) == 0
    assert json.loads(capsys.readouterr().out)["labels"] == []

    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert main(["classify", "--tx-file", str(bad)]) == 2
    bad.write_text(json.dumps({"inputs": "no", "outputs": []}))
    assert main(["classify", "--tx-file", str(bad)]) == 2


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["scan"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["scan", "--blocks-dir", "x", "--out", "y", "--magic", "abc"])
    assert exc.value.code == 1


def test_report_command(chain, tmp_path, capsys):
    blocks_dir, _ = chain
    scan_mod.scan(blocks_dir, tmp_path, magic=REGTEST_MAGIC)
    assert main(["report", "--labels", str(tmp_path / "labels.csv"), "--window", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("k,joinmarket_window,joinmarket_cumulative")
    last = dict(zip(lines[0].split(","), lines[-1].split(",")))
    assert last["k"] == "4"
    assert last["wasabi2_cumulative"] == "1" and last["whirlpool_tx0_cumulative"] == "1"
    assert main(["report", "--labels", str(tmp_path / "nope.csv")]) == 2
    assert main(["report", "--labels", str(tmp_path / "labels.csv"), "--window", "0"]) == 2


def test_config_command(tmp_path, capsys):
    assert main(["config"]) == 0
    text = capsys.readouterr().out
    path = tmp_path / "cfg.json"
    path.write_text(text)
    assert main(["config", "--config", str(path)]) == 0
    assert capsys.readouterr().out == text
    path.write_text('{"eta1": 7}')
    assert main(["config", "--config", str(path)]) == 2


def test_fixture_command(tmp_path, capsys):
    assert main(["fixture", "--out", str(tmp_path / "fx"), "--negatives", "5"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 6
    assert main(["scan", "--blocks-dir", str(tmp_path / "fx"), "--out", str(tmp_path / "o"), *MAGIC]) == 0
