import csv
import io
import json
import logging
import shutil
import socket
import subprocess
import sys
import threading

import pytest

from pcgot.cli import BENCH_COLUMNS, main, parse_size
from pcgot.engine import read_dump, write_dump
from pcgot.locality import CSV_COLUMNS as CACHE_COLUMNS
from pcgot.nmp import CSV_COLUMNS as NMP_COLUMNS


def _csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def _run(capsys, *argv):
    rc = main(list(argv))
    out = capsys.readouterr()
    return rc, out.out, out.err


def _free_port():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


@pytest.fixture
def toy_dumps(tmp_path, capsys):
    rc, out, _ = _run(capsys, "gen", "--params", "toy", "--loopback", "--iterations", "3",
                      "--out", str(tmp_path))
    assert rc == 0
    stats = json.loads(out)
    assert stats["schema"] == 1 and stats["emitted"] == 800 and stats["params"] == "toy"
    return tmp_path / "sender.irnc", tmp_path / "receiver.irnc"


def test_parse_size():
    assert parse_size("256K") == 262144 and parse_size("1M") == 1 << 20 and parse_size("64") == 64
    assert parse_size("2MB") == 2 << 20


def test_gen_loopback_then_verify(toy_dumps, capsys):
    s, r = toy_dumps
    rc, out, _ = _run(capsys, "verify", "--sender", str(s), "--receiver", str(r))
    assert rc == 0
    assert "total = 800" in out and "valid = 800" in out and "valid = total" in out


def test_verify_flags_one_flipped_bit(toy_dumps, capsys, tmp_path):
    s, r = toy_dumps
    rb = read_dump(r)
    rb.y[17, 0] ^= 1
    bad = tmp_path / "bad.irnc"
    write_dump(bad, rb)
    rc, out, _ = _run(capsys, "verify", "--sender", str(s), "--receiver", str(bad))
    assert rc == 1
    assert "valid = 799" in out and "first_invalid = 17" in out


def test_verify_rejects_truncated_and_swapped(toy_dumps, capsys, tmp_path):
    s, r = toy_dumps
    cut = tmp_path / "cut.irnc"
    cut.write_bytes(r.read_bytes()[:-5])
    rc, _, err = _run(capsys, "verify", "--sender", str(s), "--receiver", str(cut))
    assert rc == 1 and "error" in err
    rc, _, _ = _run(capsys, "verify", "--sender", str(r), "--receiver", str(s))
    assert rc == 1


def test_unknown_preset_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--params", "p99", "--loopback", "--out", "x"])
    assert exc.value.code == 2


def test_gen_without_mode_is_usage_error(capsys, tmp_path):
    rc, _, err = _run(capsys, "gen", "--params", "toy", "--out", str(tmp_path / "x"))
    assert rc == 2 and "--loopback" in err


def test_uncoverable_fanout_is_usage_error(capsys, tmp_path):
    rc, _, _ = _run(capsys, "gen", "--params", "p23", "--m-ary", "2", "--loopback", "--out", str(tmp_path))
    assert rc == 2


def test_connect_refused_exit_code(capsys, tmp_path):
    rc, _, err = _run(capsys, "gen", "--params", "toy", "--role", "sender",
                      "--connect", f"127.0.0.1:{_free_port()}", "--timeout", "2",
                      "--out", str(tmp_path / "s.irnc"))
    assert rc == 3 and "127.0.0.1" in err


class _ListenSignal(logging.Handler):
    def __init__(self):
        super().__init__()
        self.ready = threading.Event()

    def emit(self, record):
        if record.getMessage().startswith("listening on"):
            self.ready.set()


def test_gen_over_tcp(tmp_path, capsys):
    port = _free_port()
    signal = _ListenSignal()
    logger = logging.getLogger("pcgot")
    logger.addHandler(signal)
    old = logger.level
    logger.setLevel(logging.INFO)
    rcs = {}
    th = threading.Thread(target=lambda: rcs.setdefault("s", main(
        ["gen", "--params", "toy", "--role", "sender", "--listen", f"127.0.0.1:{port}",
         "--iterations", "3", "--out", str(tmp_path / "s.irnc")])))
    try:
        th.start()
        assert signal.ready.wait(10)
        rc = main(["gen", "--params", "toy", "--role", "receiver", "--connect", f"127.0.0.1:{port}",
                   "--iterations", "3", "--out", str(tmp_path / "r.irnc")])
        th.join(30)
    finally:
        logger.removeHandler(signal)
        logger.setLevel(old)
    assert rc == 0 and rcs["s"] == 0
    capsys.readouterr()
    rc, out, _ = _run(capsys, "verify", "--sender", str(tmp_path / "s.irnc"),
                      "--receiver", str(tmp_path / "r.irnc"))
    assert rc == 0 and "valid = total" in out


def test_bench_rows_and_ratios(capsys):
    rc, out, _ = _run(capsys, "bench", "--params", "toy")
    assert rc == 0
    rows = _csv(out)
    assert tuple(rows[0].keys()) == BENCH_COLUMNS and len(rows) == 4
    assert [r["ratio"] for r in rows] == ["1.0000", "1.5000", "2.0000", "6.0000"]
    _, out2, _ = _run(capsys, "bench", "--params", "toy")
    assert [r["prg_calls"] for r in _csv(out2)] == [r["prg_calls"] for r in rows]


def test_cache_sim_trends(capsys, tmp_path):
    path = tmp_path / "c.csv"
    rc, _, _ = _run(capsys, "cache-sim", "--params", "p22", "--rows", "4096", "--cache", "16K,64K,256K",
                    "--csv", str(path))
    assert rc == 0
    rows = _csv(path.read_text())
    assert tuple(rows[0].keys()) == CACHE_COLUMNS and len(rows) == 9
    rate = {(r["schedule"], int(r["cache_bytes"])): float(r["hit_rate"]) for r in rows}
    for s in ("none", "swap", "swap+lookahead"):
        assert rate[(s, 16384)] <= rate[(s, 65536)] <= rate[(s, 262144)]
    for c in (16384, 65536, 262144):
        assert rate[("swap+lookahead", c)] >= rate[("swap", c)]


def test_cache_sim_custom_dims_and_bad_schedule(capsys):
    rc, out, _ = _run(capsys, "cache-sim", "--n", "500", "--k", "100", "--d", "5", "--cache", "1K",
                      "--schedule", "none", "--ways", "4")
    assert rc == 0 and len(_csv(out)) == 1
    rc, _, _ = _run(capsys, "cache-sim", "--params", "toy", "--schedule", "bogus")
    assert rc == 2
    rc, _, _ = _run(capsys, "cache-sim", "--cache", "1K")
    assert rc == 2


def test_nmp_sim(capsys):
    rc, out, _ = _run(capsys, "nmp-sim", "--params", "p20", "--sample-rows", "2048")
    assert rc == 0
    rows = _csv(out)
    assert tuple(rows[0].keys()) == NMP_COLUMNS
    totals = [float(r["total_cycles"]) for r in rows]
    assert [int(r["ranks"]) for r in rows] == [2, 4, 8, 16]
    assert all(a > b for a, b in zip(totals, totals[1:]))
    rc, out, _ = _run(capsys, "nmp-sim", "--params", "toy", "--ranks", "1", "--sample-rows", "64")
    row = _csv(out)[0]
    assert float(row["total_cycles"]) == int(row["lpn_cycles"]) + 1024


def test_sort_writes_file(capsys, tmp_path):
    path = tmp_path / "toy.irns"
    rc, out, _ = _run(capsys, "sort", "--params", "toy", "--cache", "4K", "--out", str(path))
    assert rc == 0 and path.exists()
    info = json.loads(out)
    assert info["rows"] == 1024 and info["entries"] == 4096


@pytest.mark.skipif(shutil.which("pcgot") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["pcgot", "bench", "--params", "toy"], capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0 and proc.stdout.startswith(",".join(BENCH_COLUMNS))
    proc = subprocess.run([sys.executable, "-m", "pcgot.cli", "verify", "--sender", "nope",
                           "--receiver", "nope"], capture_output=True, text=True, timeout=120)
    assert proc.returncode == 1
