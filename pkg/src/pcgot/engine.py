"""One OT-extension iteration end to end, plus bootstrap chaining and duplex runs.

Base pool layout per iteration: the first ``k`` entries form the LPN secret
(sender ``r``, receiver ``(e, s)``), the next ``t * log2(ell_eff)`` drive the
SPCOT trees.  The first ``reserve`` outputs of the iteration refill the pool
for the next one; the rest are emitted.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .base import (
    ReceiverCotBatch,
    ReceiverCotPool,
    SenderCotBatch,
    SenderCotPool,
    dealer_generate,
    pack_bits,
    pool_reserve,
    scale_delta,
    unpack_bits,
)
from .errors import ConfigError, CorrelationReused, FormatError, HandshakeError, PoolExhausted
from .ggm import effective_leaves, tree_depth
from .locality import SortedCsr
from .lpn import LpnParams, SparseMatrix, encode_bits, encode_blocks, encode_sorted, encode_sorted_bits
from .prg import (
    PrgCounter,
    PrgKind,
    block_to_int,
    blocks_from_bytes,
    blocks_to_bytes,
    crhf_many,
    derive_block,
    int_to_block,
    stream_words,
)
from .spcot import log2_fanout, spcot_receive_batch, spcot_send_batch, tree_seeds
from .transport import Endpoint, MsgType, Session, open_loopback

log = logging.getLogger(__name__)

DUMP_MAGIC = b"IRNC"
DUMP_VERSION = 1
ROLE_SENDER = 0
ROLE_RECEIVER = 1
_STREAM_ALPHA = 0xA1FA
_STREAM_DELTA = 0xDE17A


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EngineConfig:
    params: LpnParams
    m: int = 4
    kind: PrgKind = field(default_factory=PrgKind.stream)
    matrix_seed: int = 0

    def __post_init__(self) -> None:
        self.kind.check_fanout(self.m)
        NoiseLayout.sizes_for(self.params, self.ell_eff)

    @property
    def ell_eff(self) -> int:
        return effective_leaves(self.params.ell, self.m)

    @property
    def depth(self) -> int:
        return tree_depth(self.ell_eff, self.m)

    @property
    def spcot_cots(self) -> int:
        return self.params.t * self.depth * log2_fanout(self.m)

    @property
    def reserve(self) -> int:
        return self.params.k + self.spcot_cots

    @property
    def emitted(self) -> int:
        return self.params.n - self.reserve

    def digest(self, matrix_digest: bytes) -> bytes:
        p = self.params
        desc = json.dumps({"n": p.n, "k": p.k, "t": p.t, "ell": p.ell, "d": p.d, "m": self.m,
                           "prg": self.kind.variant.value, "rounds": self.kind.rounds,
                           "matrix_seed": self.matrix_seed}, sort_keys=True)
        return hashlib.sha256(desc.encode() + matrix_digest).digest()


@dataclass(frozen=True)
class NoiseLayout:
    starts: np.ndarray
    sizes: np.ndarray
    alphas: np.ndarray

    @staticmethod
    def sizes_for(params: LpnParams, ell_eff: int) -> np.ndarray:
        n, t = params.n, params.t
        b = -(-n // t)
        last = n - b * (t - 1)
        if last <= 0:
            raise ConfigError(f"n={n} cannot be split into {t} regular blocks of {b}")
        if b > ell_eff:
            raise ConfigError(f"noise block of {b} positions exceeds the {ell_eff} tree leaves")
        sizes = np.full(t, b, dtype=np.int64)
        sizes[-1] = last
        return sizes

    @classmethod
    def sample(cls, params: LpnParams, ell_eff: int, seed: int) -> NoiseLayout:
        sizes = cls.sizes_for(params, ell_eff)
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        words = stream_words(seed, 0, -(-params.t // 16), _STREAM_ALPHA).reshape(-1)[:params.t]
        alphas = ((words.astype(np.uint64) * sizes.astype(np.uint64)) >> np.uint64(32)).astype(np.int64)
        return cls(starts, sizes, alphas)

    @property
    def positions(self) -> np.ndarray:
        return self.starts + self.alphas

    def u(self, n: int) -> np.ndarray:
        bits = np.zeros(n, dtype=np.uint8)
        bits[self.positions] = 1
        return bits


def _truncate_trees(trees: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    b = int(sizes[0])
    full = trees[:-1, :b].reshape(-1, 2) if trees.shape[0] > 1 else np.empty((0, 2), np.uint64)
    return np.concatenate([full, trees[-1, :int(sizes[-1])]])


@dataclass
class IterationStats:
    emitted: int = 0
    reserved: int = 0
    prg_calls: int = 0
    aux_prg_calls: int = 0
    bytes_sent: int = 0
    wall_ms: float = 0.0

    def as_dict(self) -> dict:
        return {"schema": 1, "emitted": self.emitted, "reserved": self.reserved,
                "prg_calls": self.prg_calls, "aux_prg_calls": self.aux_prg_calls,
                "bytes_sent": self.bytes_sent, "wall_ms": round(self.wall_ms, 3)}


def _matrix_digest(matrix) -> bytes:
    if isinstance(matrix, SparseMatrix):
        return matrix.digest()
    h = hashlib.sha256(struct.pack("<QQH", matrix.n, matrix.k, matrix.d))
    for arr in (matrix.perm, matrix.colidx, matrix.rowidx):
        h.update(np.ascontiguousarray(arr, dtype="<u4").tobytes())
    return h.digest()


def _check_matrix(cfg: EngineConfig, matrix) -> None:
    p = cfg.params
    if (matrix.n, matrix.k, matrix.d) != (p.n, p.k, p.d):
        raise ConfigError(f"matrix shape ({matrix.n}, {matrix.k}, d={matrix.d}) does not match params")


def handshake(chan: Session, cfg: EngineConfig, matrix) -> None:
    mine = cfg.digest(_matrix_digest(matrix))
    chan.send(MsgType.CONTROL, mine)
    theirs = chan.recv(MsgType.CONTROL)
    if theirs != mine:
        raise HandshakeError("peer parameters or public matrix differ from ours")


def _encode(matrix, vec: np.ndarray, addend: np.ndarray) -> np.ndarray:
    if isinstance(matrix, SortedCsr):
        return encode_sorted(matrix, vec[matrix.perm], addend)
    return encode_blocks(matrix, vec, addend)


def _encode_bits(matrix, bits: np.ndarray, addend: np.ndarray) -> np.ndarray:
    if isinstance(matrix, SortedCsr):
        return encode_sorted_bits(matrix, bits[matrix.perm], addend)
    return encode_bits(matrix, bits, addend)


# ---------------------------------------------------------------------------
# One iteration
# ---------------------------------------------------------------------------


def extend_send(chan: Session, pool: SenderCotPool, cfg: EngineConfig, matrix,
                seed: int) -> tuple[SenderCotPool, SenderCotBatch, IterationStats]:
    """Sender side. Returns ``(next_pool, emitted_batch, stats)``."""
    t0 = time.perf_counter()
    _check_matrix(cfg, matrix)
    p = cfg.params
    if pool.remaining < cfg.reserve:
        raise PoolExhausted(f"iteration needs {cfg.reserve} base COTs, pool has {pool.remaining}")
    sent0 = chan.bytes_sent
    handshake(chan, cfg, matrix)
    _, r = pool.take(p.k)
    main, aux = PrgCounter(), PrgCounter()
    trees = spcot_send_batch(chan, pool, cfg.ell_eff, cfg.m, cfg.kind, tree_seeds(seed, p.t),
                             mini_seed=seed ^ 0x6D696E69, counter=main, aux_counter=aux)
    sizes = NoiseLayout.sizes_for(p, cfg.ell_eff)
    w = _truncate_trees(trees, sizes)
    del trees
    z = _encode(matrix, r, w)
    next_pool, batch = pool_reserve(SenderCotBatch(pool.delta, z), cfg.reserve)
    stats = IterationStats(len(batch), cfg.reserve, main.calls, aux.calls,
                           chan.bytes_sent - sent0, (time.perf_counter() - t0) * 1e3)
    log.info("sender iteration: %s", stats.as_dict())
    return next_pool, batch, stats


def extend_receive(chan: Session, pool: ReceiverCotPool, cfg: EngineConfig, matrix,
                   seed: int) -> tuple[ReceiverCotPool, ReceiverCotBatch, IterationStats]:
    """Receiver side. Returns ``(next_pool, emitted_batch, stats)``."""
    t0 = time.perf_counter()
    _check_matrix(cfg, matrix)
    p = cfg.params
    if pool.remaining < cfg.reserve:
        raise PoolExhausted(f"iteration needs {cfg.reserve} base COTs, pool has {pool.remaining}")
    sent0 = chan.bytes_sent
    handshake(chan, cfg, matrix)
    _, e, s = pool.take(p.k)
    layout = NoiseLayout.sample(p, cfg.ell_eff, seed)
    main, aux = PrgCounter(), PrgCounter()
    trees = spcot_receive_batch(chan, pool, cfg.ell_eff, cfg.m, cfg.kind, layout.alphas,
                                counter=main, aux_counter=aux)
    v = _truncate_trees(trees, layout.sizes)
    del trees
    y = _encode(matrix, s, v)
    x = _encode_bits(matrix, np.asarray(e, dtype=np.uint8), layout.u(p.n))
    next_pool, batch = pool_reserve(ReceiverCotBatch(x, y), cfg.reserve)
    stats = IterationStats(len(batch), cfg.reserve, main.calls, aux.calls,
                           chan.bytes_sent - sent0, (time.perf_counter() - t0) * 1e3)
    log.info("receiver iteration: %s", stats.as_dict())
    return next_pool, batch, stats


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------


def derive_delta(seed: int, label: int = 0) -> int:
    """Nonzero delta from a seed; ``label`` separates independent directions."""
    i = 0
    while True:
        delta = derive_block(seed, _STREAM_DELTA + 0x100 * label + i)
        if delta:
            return delta
        i += 1


def dealer_pools(cfg: EngineConfig, delta: int, dealer_seed: int,
                 allow_zero_delta: bool = False) -> tuple[SenderCotPool, ReceiverCotPool]:
    return dealer_generate(cfg.reserve, delta, dealer_seed, allow_zero_delta)


class _Worker(threading.Thread):
    def __init__(self, fn, *args) -> None:
        super().__init__(daemon=True)
        self._fn, self._args = fn, args
        self.result = None
        self.error: BaseException | None = None

    def run(self) -> None:
        try:
            self.result = self._fn(*self._args)
        except BaseException as exc:  # surfaced by join_result
            self.error = exc

    def join_result(self):
        self.join()
        if self.error is not None:
            raise self.error
        return self.result


def run_sender(chan: Session, pool: SenderCotPool, cfg: EngineConfig, matrix, seed: int,
               iterations: int = 1):
    """Chain ``iterations`` runs, each bootstrapped from the previous reserve."""
    batches, stats = [], []
    for i in range(iterations):
        pool, batch, st = extend_send(chan, pool, cfg, matrix, derive_block(seed, i))
        batches.append(batch)
        stats.append(st)
    return batches, stats


def run_receiver(chan: Session, pool: ReceiverCotPool, cfg: EngineConfig, matrix, seed: int,
                 iterations: int = 1):
    batches, stats = [], []
    for i in range(iterations):
        pool, batch, st = extend_receive(chan, pool, cfg, matrix, derive_block(seed, i))
        batches.append(batch)
        stats.append(st)
    return batches, stats


def run_pair(ep_s: Endpoint, ep_r: Endpoint, cfg: EngineConfig, matrix, delta: int,
             dealer_seed: int = 1, sender_seed: int = 2, receiver_seed: int = 3,
             iterations: int = 1, session_id: int = 0, allow_zero_delta: bool = False,
             receiver_matrix=None):
    """Both roles in-process over two connected endpoints."""
    sp, rp = dealer_pools(cfg, delta, dealer_seed, allow_zero_delta)
    cs, cr = ep_s.session(session_id), ep_r.session(session_id)
    worker = _Worker(run_sender, cs, sp, cfg, matrix, sender_seed, iterations)
    worker.start()
    try:
        rb, rstats = run_receiver(cr, rp, cfg, matrix if receiver_matrix is None else receiver_matrix,
                                  receiver_seed, iterations)
    except BaseException:
        ep_r.close()
        worker.join()
        raise
    sb, sstats = worker.join_result()
    return sb, rb, sstats, rstats


def run_loopback(cfg: EngineConfig, matrix, delta: int, **kw):
    a, b = open_loopback()
    try:
        return run_pair(a, b, cfg, matrix, delta, **kw)
    finally:
        a.close()
        b.close()


DUPLEX_SESSIONS = (1, 2)


def run_duplex(endpoint: Endpoint, cfg: EngineConfig, matrix, party: int, dealer_seed: int,
               seed: int, iterations: int = 1) -> tuple[list[SenderCotBatch], list[ReceiverCotBatch]]:
    """Run one session as sender and one as receiver concurrently on one endpoint.

    Party 0 is the sender on session 1 and the receiver on session 2; party 1 is
    the mirror.  Each direction gets its own delta and dealer pool.
    """
    if party not in (0, 1):
        raise ConfigError("party must be 0 or 1")
    send_sid, recv_sid = DUPLEX_SESSIONS if party == 0 else DUPLEX_SESSIONS[::-1]
    send_dir, recv_dir = (0, 1) if party == 0 else (1, 0)
    delta = derive_delta(dealer_seed, send_dir + 1)
    sp, _ = dealer_pools(cfg, delta, derive_block(dealer_seed, 10 + send_dir))
    _, rp = dealer_pools(cfg, derive_delta(dealer_seed, recv_dir + 1), derive_block(dealer_seed, 10 + recv_dir))
    cs, cr = endpoint.session(send_sid), endpoint.session(recv_sid)
    worker = _Worker(run_sender, cs, sp, cfg, matrix, derive_block(seed, 1), iterations)
    worker.start()
    try:
        rb, _ = run_receiver(cr, rp, cfg, matrix, derive_block(seed, 2), iterations)
    except BaseException:
        endpoint.close()
        worker.join()
        raise
    sb, _ = worker.join_result()
    return sb, rb


def run_duplex_loopback(cfg: EngineConfig, matrix, dealer_seed: int = 1, seeds=(2, 3), iterations: int = 1):
    a, b = open_loopback()
    try:
        worker = _Worker(run_duplex, b, cfg, matrix, 1, dealer_seed, seeds[1], iterations)
        worker.start()
        try:
            mine = run_duplex(a, cfg, matrix, 0, dealer_seed, seeds[0], iterations)
        except BaseException:
            a.close()
            worker.join()
            raise
        theirs = worker.join_result()
        return mine, theirs
    finally:
        a.close()
        b.close()


# ---------------------------------------------------------------------------
# Verification and chosen OT on emitted correlations
# ---------------------------------------------------------------------------


def verify_batches(sender: SenderCotBatch, receiver: ReceiverCotBatch) -> tuple[int, int, int | None]:
    """``(total, valid, first_invalid_index)`` for ``w = y ^ x*delta``."""
    if len(sender) != len(receiver):
        raise FormatError(f"batch lengths differ: {len(sender)} vs {len(receiver)}")
    ok = ~(sender.w ^ receiver.y ^ scale_delta(receiver.x, sender.delta)).any(axis=1)
    bad = np.flatnonzero(~ok)
    return len(sender), int(ok.sum()), (int(bad[0]) if bad.size else None)


class _OtCursor:
    def __init__(self, batch) -> None:
        self.batch = batch
        self.used = np.zeros(len(batch), dtype=bool)
        self.cursor = 0

    def _claim(self, index: int | None) -> int:
        if index is None:
            while self.cursor < len(self.used) and self.used[self.cursor]:
                self.cursor += 1
            index = self.cursor
        if not 0 <= index < len(self.used):
            raise PoolExhausted("emitted correlations exhausted; run another iteration")
        if self.used[index]:
            raise CorrelationReused(f"correlation {index} was already consumed")
        self.used[index] = True
        return index


class OtSender(_OtCursor):
    """Chosen-message OT sender over an emitted batch; each index is usable once."""

    def send(self, m0: int, m1: int, d: int, index: int | None = None) -> tuple[int, int, int]:
        """Returns ``(index, c0, c1)`` given the receiver's correction bit ``d``."""
        i = self._claim(index)
        r0 = self.batch.w[i:i + 1]
        r1 = r0 ^ int_to_block(self.batch.delta)[None]
        tw = np.array([i], dtype=np.uint64)
        h = (block_to_int(crhf_many(r0, tw)[0]), block_to_int(crhf_many(r1, tw)[0]))
        return i, m0 ^ h[d], m1 ^ h[1 - d]


class OtReceiver(_OtCursor):
    def choose(self, c: int, index: int | None = None):
        """Returns ``(index, d, decode)`` with ``decode(c0, c1) = m_c``."""
        i = self._claim(index)
        b = int(self.batch.x[i])
        pad = block_to_int(crhf_many(self.batch.y[i:i + 1], np.array([i], dtype=np.uint64))[0])

        def decode(c0: int, c1: int) -> int:
            return (c1 if c else c0) ^ pad

        return i, b ^ c, decode


# ---------------------------------------------------------------------------
# Correlation dumps
# ---------------------------------------------------------------------------

_HDR = struct.Struct("<4sHBQ")


def write_dump(path: str | Path, batch) -> None:
    with open(path, "wb") as fh:
        if isinstance(batch, SenderCotBatch):
            fh.write(_HDR.pack(DUMP_MAGIC, DUMP_VERSION, ROLE_SENDER, len(batch)))
            fh.write(batch.delta.to_bytes(16, "little"))
            fh.write(blocks_to_bytes(batch.w))
        else:
            fh.write(_HDR.pack(DUMP_MAGIC, DUMP_VERSION, ROLE_RECEIVER, len(batch)))
            fh.write(pack_bits(batch.x))
            fh.write(blocks_to_bytes(batch.y))


def read_dump(path: str | Path):
    data = Path(path).read_bytes()
    if len(data) < _HDR.size:
        raise FormatError(f"{path}: file truncated")
    magic, version, role, count = _HDR.unpack_from(data)
    if magic != DUMP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {DUMP_MAGIC!r}")
    if version != DUMP_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = _HDR.size
    if role == ROLE_SENDER:
        if len(data) != off + 16 + 16 * count:
            raise FormatError(f"{path}: length {len(data)} does not match count {count}")
        delta = int.from_bytes(data[off:off + 16], "little")
        return SenderCotBatch(delta, blocks_from_bytes(data[off + 16:]))
    if role == ROLE_RECEIVER:
        nbits = -(-count // 8)
        if len(data) != off + nbits + 16 * count:
            raise FormatError(f"{path}: length {len(data)} does not match count {count}")
        return ReceiverCotBatch(unpack_bits(data[off:off + nbits], count),
                                blocks_from_bytes(data[off + nbits:]))
    raise FormatError(f"{path}: unknown role byte {role}")
