"""Command-line front end."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .base import ReceiverCotBatch, SenderCotBatch
from .engine import (
    EngineConfig,
    dealer_pools,
    derive_delta,
    read_dump,
    run_loopback,
    run_receiver,
    run_sender,
    verify_batches,
    write_dump,
)
from .errors import ConfigError, FormatError, PcgotError, ProtocolError, TransportError
from .ggm import effective_leaves, expand_level, tree_depth
from .locality import SCHEDULES, CacheConfig, build_schedule, simulate_cache, stats_csv, write_sorted
from .lpn import LpnParams, SparseMatrix, gen_matrix, gen_rows
from .nmp import NmpConfig, report_csv, run_model
from .presets import PRESETS, get_preset
from .prg import PrgCounter, PrgKind, derive_blocks
from .transport import TcpListener, tcp_connect

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_TRANSPORT = 0, 1, 2, 3
BENCH_CONFIGS = ((2, "fixedkey"), (4, "fixedkey"), (2, "stream"), (4, "stream"))
BENCH_COLUMNS = ("params", "m", "prg", "prg_calls", "ratio", "wall_ms")
DEFAULT_CACHE_SIZES = "32K,64K,128K,256K,512K,1M,2M"
log = logging.getLogger("pcgot")


class UsageError(PcgotError):
    pass


def parse_size(text: str) -> int:
    s = text.strip().upper().removesuffix("B")
    mult = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30}.get(s[-1:], 1)
    if mult != 1:
        s = s[:-1]
    try:
        return int(s) * mult
    except ValueError:
        raise UsageError(f"cannot parse size {text!r}") from None


def parse_list(text: str, conv=int) -> list:
    return [conv(x) for x in text.split(",") if x.strip()]


def parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not port.isdigit():
        raise UsageError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _params(args) -> tuple[str, LpnParams]:
    if getattr(args, "params", None):
        return args.params, get_preset(args.params)
    if all(getattr(args, a, None) for a in ("n", "k")):
        n, k, d = args.n, args.k, args.d or 10
        return f"n{n}k{k}d{d}", LpnParams(n=n, k=k, t=1, ell=1, d=d)
    raise UsageError("give --params or both --n and --k")


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# gen / verify
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    name, params = _params(args)
    cfg = EngineConfig(params, args.m_ary, PrgKind.for_name(args.prg, args.m_ary), args.matrix_seed)
    matrix = gen_matrix(args.matrix_seed, params)
    delta = derive_delta(args.delta_seed if args.delta_seed is not None else args.dealer_seed)
    out = Path(args.out)
    if args.loopback:
        out.mkdir(parents=True, exist_ok=True)
        sb, rb, ss, rs = run_loopback(cfg, matrix, delta, dealer_seed=args.dealer_seed,
                                      sender_seed=args.seed, receiver_seed=args.seed + 1,
                                      iterations=args.iterations)
        write_dump(out / "sender.irnc", sb[-1])
        write_dump(out / "receiver.irnc", rb[-1])
        stats = ss[-1].as_dict()
        stats["bytes_sent"] = ss[-1].bytes_sent + rs[-1].bytes_sent
        stats["wall_ms"] = round(max(ss[-1].wall_ms, rs[-1].wall_ms), 3)
    else:
        if args.role is None or (args.listen is None) == (args.connect is None):
            raise UsageError("without --loopback give --role and exactly one of --listen/--connect")
        if args.listen:
            host, port = parse_addr(args.listen)
            listener = TcpListener(host, port, timeout=args.timeout)
            log.info("listening on %s:%d", *listener.address)
            try:
                endpoint = listener.accept()
            finally:
                listener.close()
        else:
            endpoint = tcp_connect(*parse_addr(args.connect), timeout=args.timeout)
        sp, rp = dealer_pools(cfg, delta, args.dealer_seed)
        with endpoint:
            chan = endpoint.session(0)
            if args.role == "sender":
                batches, st = run_sender(chan, sp, cfg, matrix, args.seed, args.iterations)
            else:
                batches, st = run_receiver(chan, rp, cfg, matrix, args.seed + 1, args.iterations)
        write_dump(out, batches[-1])
        stats = st[-1].as_dict()
    stats["params"] = name
    text = json.dumps(stats, sort_keys=True) + "\n"
    if args.stats:
        Path(args.stats).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_verify(args) -> int:
    sender, receiver = read_dump(args.sender), read_dump(args.receiver)
    if not isinstance(sender, SenderCotBatch) or not isinstance(receiver, ReceiverCotBatch):
        raise FormatError("expected one sender dump and one receiver dump")
    total, valid, first = verify_batches(sender, receiver)
    print(f"total = {total}")
    print(f"valid = {valid}")
    print(f"first_invalid = {first if first is not None else '-'}")
    print("valid = total" if valid == total else f"INVALID: {total - valid} correlations fail")
    return EXIT_OK if valid == total else EXIT_INVALID


# ---------------------------------------------------------------------------
# bench / cache-sim / nmp-sim / sort
# ---------------------------------------------------------------------------


def bench_calls(params: LpnParams, m: int, kind: PrgKind, cohort: int = 64) -> tuple[int, float]:
    """Expand every SPCOT tree of one iteration; returns ``(core calls, wall ms)``."""
    ell = effective_leaves(params.ell, m)
    depth = tree_depth(ell, m)
    counter = PrgCounter()
    seeds = derive_blocks(0xBE5C, params.t, 0)
    t0 = time.perf_counter()
    for lo in range(0, params.t, cohort):
        level = seeds[lo:lo + cohort, None, :]
        ids = np.arange(lo, lo + level.shape[0], dtype=np.uint64)
        for i in range(depth):
            level = expand_level(level, m, kind, ids, i, counter)
    return counter.calls, (time.perf_counter() - t0) * 1e3


def cmd_bench(args) -> int:
    name, params = _params(args)
    rows, base = [], None
    for m, prg in BENCH_CONFIGS:
        calls, ms = bench_calls(params, m, PrgKind.for_name(prg, m))
        base = base or calls
        rows.append((name, m, prg, calls, f"{base / calls:.4f}", f"{ms:.1f}"))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    w.writerows(rows)
    _emit(buf.getvalue(), args.csv)
    return EXIT_OK


def _workload(args, params: LpnParams) -> SparseMatrix:
    rows = params.n if args.rows is None else min(args.rows, params.n)
    cols = gen_rows(args.matrix_seed, params.n, params.k, params.d, 0, rows)
    return SparseMatrix(rows, params.k, params.d, cols, args.matrix_seed)


def cmd_cache_sim(args) -> int:
    name, params = _params(args)
    A = _workload(args, params)
    schedules = parse_list(args.schedule, str)
    for s in schedules:
        if s not in SCHEDULES:
            raise UsageError(f"unknown schedule {s!r}; choose from {', '.join(SCHEDULES)}")
    out = []
    for size in parse_list(args.cache, parse_size):
        cfg = CacheConfig(size, ways=args.ways)
        for s in schedules:
            out.append((name, size, s, simulate_cache(build_schedule(A, s, cfg, args.window), cfg)))
    _emit(stats_csv(out), args.csv)
    return EXIT_OK


def cmd_nmp_sim(args) -> int:
    name, params = _params(args)
    cache = CacheConfig(parse_size(args.cache))
    kind = PrgKind.for_name(args.prg, args.m_ary)
    rows = []
    for r in parse_list(args.ranks):
        rep = run_model(params, NmpConfig(ranks=r), cache, args.m_ary, kind, args.matrix_seed,
                        args.schedule, args.sample_rows)
        rows.append((name, r, cache.capacity_bytes, rep))
    _emit(report_csv(rows), args.csv)
    return EXIT_OK


def cmd_sort(args) -> int:
    _, params = _params(args)
    A = _workload(args, params)
    cfg = CacheConfig(parse_size(args.cache))
    S = build_schedule(A, "swap+lookahead", cfg, args.window)
    write_sorted(args.out, S, cfg)
    st = simulate_cache(S, cfg)
    print(json.dumps({"schema": 1, "rows": S.n, "entries": int(S.colidx.size),
                      "hit_rate": round(st.hit_rate, 6)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_params(p: argparse.ArgumentParser, allow_dims: bool = False) -> None:
    p.add_argument("--params", choices=sorted(PRESETS), help="parameter preset")
    if allow_dims:
        p.add_argument("--n", type=int, help="rows (instead of --params)")
        p.add_argument("--k", type=int, help="columns (instead of --params)")
        p.add_argument("--d", type=int, help="row weight (default 10)")
    p.add_argument("--matrix-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcgot", description="PCG-style OT extension toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="run the OT-extension protocol and dump correlations")
    _add_params(g)
    g.add_argument("--role", choices=("sender", "receiver"))
    g.add_argument("--loopback", action="store_true", help="run both roles in-process")
    g.add_argument("--listen", metavar="HOST:PORT")
    g.add_argument("--connect", metavar="HOST:PORT")
    g.add_argument("--timeout", type=float, default=30.0)
    g.add_argument("--m-ary", type=int, choices=(2, 4), default=4)
    g.add_argument("--prg", choices=("stream", "fixedkey"), default="stream")
    g.add_argument("--dealer-seed", type=int, default=1)
    g.add_argument("--delta-seed", type=int)
    g.add_argument("--seed", type=int, default=2)
    g.add_argument("--iterations", type=int, default=1)
    g.add_argument("--out", required=True, help="dump file, or directory with --loopback")
    g.add_argument("--stats", help="also write the JSON stats here")
    g.set_defaults(func=cmd_gen)

    v = sub.add_parser("verify", help="check a sender and a receiver dump against each other")
    v.add_argument("--sender", required=True)
    v.add_argument("--receiver", required=True)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="PRG call counts of tree expansion per fanout/PRG")
    _add_params(b)
    b.add_argument("--csv")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("cache-sim", help="cache hit rates per schedule and capacity")
    _add_params(c, allow_dims=True)
    c.add_argument("--schedule", default=",".join(SCHEDULES))
    c.add_argument("--cache", default=DEFAULT_CACHE_SIZES)
    c.add_argument("--ways", type=int, help="set associativity (default fully associative)")
    c.add_argument("--window", type=int, default=64)
    c.add_argument("--rows", type=int, help="simulate only the first ROWS rows")
    c.add_argument("--csv")
    c.set_defaults(func=cmd_cache_sim)

    nm = sub.add_parser("nmp-sim", help="near-memory latency model per rank count")
    _add_params(nm)
    nm.add_argument("--ranks", default="2,4,8,16")
    nm.add_argument("--cache", default="1M")
    nm.add_argument("--m-ary", type=int, choices=(2, 4), default=4)
    nm.add_argument("--prg", choices=("stream", "fixedkey"), default="stream")
    nm.add_argument("--schedule", choices=SCHEDULES, default="swap+lookahead")
    nm.add_argument("--sample-rows", type=int, default=1 << 15)
    nm.add_argument("--csv")
    nm.set_defaults(func=cmd_nmp_sim)

    s = sub.add_parser("sort", help="write a column-swapped, look-ahead scheduled matrix")
    _add_params(s, allow_dims=True)
    s.add_argument("--window", type=int, default=64)
    s.add_argument("--cache", default="1M")
    s.add_argument("--rows", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sort)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("IRONMAN_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"pcgot: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TransportError, ProtocolError) as exc:
        print(f"pcgot: transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (FormatError, OSError) as exc:
        print(f"pcgot: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
