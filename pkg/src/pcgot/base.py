"""Base COT correlations: trusted dealer, consumable pools, chosen-message OT.

Convention: the sender holds ``r0`` and the global offset ``delta``; the
receiver holds a bit ``b`` and ``r_b = r0 ^ b*delta``.  A chosen 1-out-of-2 OT
consumes one correlation: the receiver announces ``d = b ^ c`` and the sender
masks ``m_j`` with ``H(r_{j^d})``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, FormatError, PoolExhausted
from .prg import (
    MASK128,
    block_to_int,
    blocks_from_bytes,
    blocks_to_bytes,
    crhf_many,
    derive_blocks,
    int_to_block,
    prg_stream,
)

DEALER_MAGIC = b"IRNB"
DEALER_VERSION = 1

_STREAM_DEALER_BLOCKS = 0xB10C
_STREAM_DEALER_BITS = 0xB175


def check_delta(delta: int, allow_zero: bool = False) -> int:
    if not 0 <= delta <= MASK128:
        raise ConfigError("delta must be a 128-bit value")
    if delta == 0 and not allow_zero:
        raise ConfigError("delta must be nonzero")
    return delta


def scale_delta(bits: np.ndarray, delta: int) -> np.ndarray:
    """``bits[i] * delta`` as an ``(N, 2)`` block array."""
    mask = np.asarray(bits, dtype=np.uint64) * np.uint64(0xFFFFFFFFFFFFFFFF)
    return mask[:, None] & int_to_block(delta)[None, :]


def pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def unpack_bits(data: bytes, count: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=count, bitorder="little")


# ---------------------------------------------------------------------------
# Pools and batches
# ---------------------------------------------------------------------------


@dataclass
class SenderCotPool:
    delta: int
    blocks: np.ndarray
    cursor: int = 0

    def __len__(self) -> int:
        return self.blocks.shape[0]

    @property
    def remaining(self) -> int:
        return len(self) - self.cursor

    def take(self, count: int) -> tuple[int, np.ndarray]:
        if count < 0:
            raise ValueError("count must be non-negative")
        if count > self.remaining:
            raise PoolExhausted(
                f"sender pool has {self.remaining} correlations left, {count} requested; replenish first")
        start = self.cursor
        self.cursor += count
        return start, self.blocks[start:start + count]


@dataclass
class ReceiverCotPool:
    bits: np.ndarray
    blocks: np.ndarray
    cursor: int = 0

    def __post_init__(self) -> None:
        if self.bits.shape[0] != self.blocks.shape[0]:
            raise ConfigError("bits and blocks lengths differ")

    def __len__(self) -> int:
        return self.blocks.shape[0]

    @property
    def remaining(self) -> int:
        return len(self) - self.cursor

    def take(self, count: int) -> tuple[int, np.ndarray, np.ndarray]:
        if count < 0:
            raise ValueError("count must be non-negative")
        if count > self.remaining:
            raise PoolExhausted(
                f"receiver pool has {self.remaining} correlations left, {count} requested; replenish first")
        start = self.cursor
        self.cursor += count
        return start, self.bits[start:start + count], self.blocks[start:start + count]


@dataclass
class SenderCotBatch:
    delta: int
    w: np.ndarray

    def __len__(self) -> int:
        return self.w.shape[0]

    def as_pool(self) -> SenderCotPool:
        return SenderCotPool(self.delta, self.w)


@dataclass
class ReceiverCotBatch:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return self.y.shape[0]

    def as_pool(self) -> ReceiverCotPool:
        return ReceiverCotPool(self.x, self.y)


CotBatch = SenderCotBatch | ReceiverCotBatch


def dealer_generate(count: int, delta: int, seed: int,
                    allow_zero_delta: bool = False) -> tuple[SenderCotPool, ReceiverCotPool]:
    """Trusted-dealer COTs, deterministic in ``seed``."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    check_delta(delta, allow_zero_delta)
    r0 = derive_blocks(seed, count, _STREAM_DEALER_BLOCKS)
    bits = unpack_bits(prg_stream(seed, -(-count // 8), _STREAM_DEALER_BITS), count)
    rb = r0 ^ scale_delta(bits, delta)
    return SenderCotPool(delta, r0), ReceiverCotPool(bits, rb)


def pool_reserve(batch: CotBatch, count: int):
    """Split a batch into next-iteration base pools (prefix) and the emitted rest."""
    if count < 0 or count > len(batch):
        raise PoolExhausted(f"cannot reserve {count} of {len(batch)} correlations")
    if isinstance(batch, SenderCotBatch):
        return (SenderCotPool(batch.delta, batch.w[:count].copy()),
                SenderCotBatch(batch.delta, batch.w[count:]))
    return (ReceiverCotPool(batch.x[:count].copy(), batch.y[:count].copy()),
            ReceiverCotBatch(batch.x[count:], batch.y[count:]))


# ---------------------------------------------------------------------------
# Chosen-message OT from COT
# ---------------------------------------------------------------------------


def _tweaks(start: int, count: int, tweaks) -> np.ndarray:
    if tweaks is None:
        return np.arange(start, start + count, dtype=np.uint64)
    tweaks = np.asarray(tweaks, dtype=np.uint64).reshape(-1)
    if tweaks.shape[0] != count:
        raise ConfigError("one tweak per OT required")
    return tweaks


def ot_send_many(pool: SenderCotPool, m0: np.ndarray, m1: np.ndarray, d: np.ndarray,
                 tweaks=None) -> tuple[np.ndarray, np.ndarray]:
    """Sender half of N chosen OTs. ``d`` are the receiver's correction bits."""
    d = np.asarray(d, dtype=np.uint8).reshape(-1)
    n = d.shape[0]
    if m0.shape != (n, 2) or m1.shape != (n, 2):
        raise ConfigError("message arrays must be (N, 2) with one correction bit per OT")
    start, r0 = pool.take(n)
    tw = _tweaks(start, n, tweaks)
    r1 = r0 ^ int_to_block(pool.delta)[None, :]
    h0 = crhf_many(r0, tw)
    h1 = crhf_many(r1, tw)
    flip = d.astype(bool)[:, None]
    # c_j = m_j ^ H(r_{j ^ d})
    c0 = m0 ^ np.where(flip, h1, h0)
    c1 = m1 ^ np.where(flip, h0, h1)
    return c0, c1


def ot_receive_many(pool: ReceiverCotPool, choices: np.ndarray,
                    tweaks=None) -> tuple[np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]:
    """Receiver half of N chosen OTs: correction bits and a decoder."""
    c = np.asarray(choices, dtype=np.uint8).reshape(-1)
    n = c.shape[0]
    start, b, rb = pool.take(n)
    tw = _tweaks(start, n, tweaks)
    d = (b ^ c).astype(np.uint8)
    pad = crhf_many(rb, tw)

    def decode(c0: np.ndarray, c1: np.ndarray) -> np.ndarray:
        return np.where(c.astype(bool)[:, None], c1, c0) ^ pad

    return d, decode


def ot_send(pool: SenderCotPool, m0: int, m1: int, d: int, tweak: int | None = None) -> tuple[int, int]:
    c0, c1 = ot_send_many(pool, int_to_block(m0)[None], int_to_block(m1)[None], [d],
                          None if tweak is None else [tweak])
    return block_to_int(c0[0]), block_to_int(c1[0])


def ot_receive(pool: ReceiverCotPool, c: int, tweak: int | None = None):
    """Returns ``(d, decode)`` where ``decode(c0, c1)`` yields ``m_c``."""
    d, dec = ot_receive_many(pool, [c], None if tweak is None else [tweak])

    def decode(c0: int, c1: int) -> int:
        return block_to_int(dec(int_to_block(c0)[None], int_to_block(c1)[None])[0])

    return int(d[0]), decode


# ---------------------------------------------------------------------------
# Dealer files
# ---------------------------------------------------------------------------

_HDR = struct.Struct("<4sHQ")


def write_dealer_sender(path: str | Path, pool: SenderCotPool) -> None:
    with open(path, "wb") as fh:
        fh.write(_HDR.pack(DEALER_MAGIC, DEALER_VERSION, len(pool)))
        fh.write(pool.delta.to_bytes(16, "little"))
        fh.write(blocks_to_bytes(pool.blocks))


def write_dealer_receiver(path: str | Path, pool: ReceiverCotPool) -> None:
    with open(path, "wb") as fh:
        fh.write(_HDR.pack(DEALER_MAGIC, DEALER_VERSION, len(pool)))
        fh.write(pack_bits(pool.bits))
        fh.write(blocks_to_bytes(pool.blocks))


def _read_header(data: bytes) -> int:
    if len(data) < _HDR.size:
        raise FormatError("dealer file truncated")
    magic, version, count = _HDR.unpack_from(data)
    if magic != DEALER_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {DEALER_MAGIC!r}")
    if version != DEALER_VERSION:
        raise FormatError(f"unsupported dealer file version {version}")
    return count


def read_dealer_sender(path: str | Path) -> SenderCotPool:
    data = Path(path).read_bytes()
    count = _read_header(data)
    off = _HDR.size
    if len(data) != off + 16 + 16 * count:
        raise FormatError(f"sender dealer file length {len(data)} does not match count {count}")
    delta = int.from_bytes(data[off:off + 16], "little")
    return SenderCotPool(delta, blocks_from_bytes(data[off + 16:]))


def read_dealer_receiver(path: str | Path) -> ReceiverCotPool:
    data = Path(path).read_bytes()
    count = _read_header(data)
    off = _HDR.size
    nbits = -(-count // 8)
    if len(data) != off + nbits + 16 * count:
        raise FormatError(f"receiver dealer file length {len(data)} does not match count {count}")
    bits = unpack_bits(data[off:off + nbits], count)
    return ReceiverCotPool(bits, blocks_from_bytes(data[off + nbits:]))
