"""Pseudo-random expansion primitives over 128-bit blocks.

Blocks travel through the package in two shapes:

* a single block is a plain ``int`` in ``[0, 2**128)``;
* a vector of blocks is a ``(N, 2)`` ``uint64`` array holding the low and high
  64-bit halves, so ``arr.tobytes()`` is the little-endian 16-byte encoding of
  each block in order.

Two PRG families are provided. The stream variant runs an 8-round ChaCha
permutation over a 512-bit state keyed by the seed and yields four blocks per
call. The fixed-key variants are Davies-Meyer compressions of AES-128 under
public constant keys and cost one cipher call per output block; they exist as
the baseline for operation-count comparisons.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import ConfigError

BLOCK_BYTES = 16
MASK128 = (1 << 128) - 1
MASK64 = (1 << 64) - 1

# "expand 16-byte k": the 128-bit-key ChaCha constant.
TAU = np.frombuffer(b"expand 16-byte k", dtype="<u4").astype(np.uint32)

# Word 14 of the ChaCha state selects the purpose of a call.
DOMAIN_EXPAND = 0
DOMAIN_CRHF = 1
DOMAIN_STREAM = 2

# Public keys for the fixed-key baseline (k0..k3).
FIXED_KEYS = tuple(bytes([0x36 ^ j] * 8 + [0x5C ^ j] * 8) for j in range(4))

_CHUNK = 1 << 17


# ---------------------------------------------------------------------------
# Block helpers
# ---------------------------------------------------------------------------


def int_to_block(x: int) -> np.ndarray:
    return np.array([x & MASK64, (x >> 64) & MASK64], dtype=np.uint64)


def block_to_int(b: np.ndarray) -> int:
    return int(b[0]) | (int(b[1]) << 64)


def blocks_from_ints(xs) -> np.ndarray:
    xs = list(xs)
    out = np.empty((len(xs), 2), dtype=np.uint64)
    for i, x in enumerate(xs):
        out[i, 0] = x & MASK64
        out[i, 1] = (x >> 64) & MASK64
    return out


def blocks_to_ints(arr: np.ndarray) -> list[int]:
    return [int(lo) | (int(hi) << 64) for lo, hi in arr]


def blocks_to_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<u8").tobytes()


def blocks_from_bytes(data: bytes) -> np.ndarray:
    if len(data) % BLOCK_BYTES:
        raise ValueError(f"byte length {len(data)} is not a multiple of {BLOCK_BYTES}")
    return np.frombuffer(data, dtype="<u8").astype(np.uint64).reshape(-1, 2)


def xor_reduce(arr: np.ndarray, axis: int = 0) -> np.ndarray:
    return np.bitwise_xor.reduce(arr, axis=axis)


def _as_blocks(arr) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.uint64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (N, 2) uint64 block array, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


# ---------------------------------------------------------------------------
# ChaCha core
# ---------------------------------------------------------------------------


def _rot(v: np.ndarray, n: int) -> None:
    v[...] = (v << np.uint32(n)) | (v >> np.uint32(32 - n))


def _quarter(a, b, c, d) -> None:
    a += b
    d ^= a
    _rot(d, 16)
    c += d
    b ^= c
    _rot(b, 12)
    a += b
    d ^= a
    _rot(d, 8)
    c += d
    b ^= c
    _rot(b, 7)


_DIAG_B = [1, 2, 3, 0]
_DIAG_C = [2, 3, 0, 1]
_DIAG_D = [3, 0, 1, 2]
_UNDIAG_B = [3, 0, 1, 2]
_UNDIAG_D = [1, 2, 3, 0]


def chacha_block(state: np.ndarray, rounds: int = 8) -> np.ndarray:
    """Apply the ChaCha block function to ``state``, shape ``(16, N)`` uint32.

    Returns the permuted state with the input added back (feed-forward), i.e.
    one 64-byte keystream block per column.
    """
    if rounds % 2:
        raise ConfigError("ChaCha round count must be even")
    state = np.asarray(state, dtype=np.uint32)
    a = state[0:4].copy()
    b = state[4:8].copy()
    c = state[8:12].copy()
    d = state[12:16].copy()
    for _ in range(rounds // 2):
        _quarter(a, b, c, d)
        b, c, d = b[_DIAG_B], c[_DIAG_C], d[_DIAG_D]
        _quarter(a, b, c, d)
        b, c, d = b[_UNDIAG_B], c[_DIAG_C], d[_UNDIAG_D]
    out = np.concatenate([a, b, c, d])
    out += state
    return out


def _keyed_words(keys: np.ndarray, counters: np.ndarray, domain: int,
                 stream_ids, rounds: int) -> np.ndarray:
    """ChaCha output words ``(N, 16)`` for 128-bit keys given as ``(N, 2)`` u64."""
    n = keys.shape[0]
    out = np.empty((n, 16), dtype=np.uint32)
    key_words = keys.view(np.uint32).reshape(n, 4) if keys.dtype.byteorder in "=<|" else \
        keys.astype("<u8").view(np.uint32).reshape(n, 4)
    counters = np.asarray(counters, dtype=np.uint64)
    stream_ids = np.broadcast_to(np.asarray(stream_ids, dtype=np.uint32), (n,))
    for lo in range(0, n, _CHUNK):
        hi = min(n, lo + _CHUNK)
        w = hi - lo
        st = np.empty((16, w), dtype=np.uint32)
        st[0:4] = TAU[:, None]
        kw = key_words[lo:hi].T
        st[4:8] = kw
        st[8:12] = kw
        ctr = counters[lo:hi]
        st[12] = (ctr & np.uint64(0xFFFFFFFF)).astype(np.uint32)
        st[13] = (ctr >> np.uint64(32)).astype(np.uint32)
        st[14] = domain
        st[15] = stream_ids[lo:hi]
        out[lo:hi] = chacha_block(st, rounds).T
    return out


# ---------------------------------------------------------------------------
# Fixed-key baseline
# ---------------------------------------------------------------------------

_ECB = [Cipher(algorithms.AES(k), modes.ECB()) for k in FIXED_KEYS]


def _fixed_key_blocks(seeds: np.ndarray, tweaks: np.ndarray, nkeys: int) -> np.ndarray:
    """Davies-Meyer fixed-key outputs: ``out[:, j] = AES_kj(x) ^ x`` with ``x = s ^ tweak``."""
    x = seeds.copy()
    x[:, 0] ^= np.asarray(tweaks, dtype=np.uint64)
    data = blocks_to_bytes(x)
    out = np.empty((seeds.shape[0], nkeys, 2), dtype=np.uint64)
    for j in range(nkeys):
        enc = _ECB[j].encryptor()
        ct = blocks_from_bytes(enc.update(data) + enc.finalize())
        out[:, j] = ct ^ x
    return out


# ---------------------------------------------------------------------------
# PRG kinds and call accounting
# ---------------------------------------------------------------------------


class PrgVariant(enum.Enum):
    DOUBLE_FIXED_KEY = "fixedkey2"
    QUAD_FIXED_KEY = "fixedkey4"
    MULTI_OUTPUT_STREAM = "stream"


@dataclass(frozen=True)
class PrgKind:
    variant: PrgVariant = PrgVariant.MULTI_OUTPUT_STREAM
    rounds: int = 8

    @classmethod
    def stream(cls, rounds: int = 8) -> PrgKind:
        return cls(PrgVariant.MULTI_OUTPUT_STREAM, rounds)

    @classmethod
    def fixed_key(cls, m: int = 2) -> PrgKind:
        if m == 2:
            return cls(PrgVariant.DOUBLE_FIXED_KEY)
        if m == 4:
            return cls(PrgVariant.QUAD_FIXED_KEY)
        raise ConfigError(f"fixed-key PRG supports fanout 2 or 4, not {m}")

    @classmethod
    def for_name(cls, name: str, m: int) -> PrgKind:
        if name == "stream":
            return cls.stream()
        if name == "fixedkey":
            return cls.fixed_key(m)
        raise ConfigError(f"unknown PRG {name!r}")

    @property
    def output_blocks(self) -> int:
        return 2 if self.variant is PrgVariant.DOUBLE_FIXED_KEY else 4

    @property
    def core_calls(self) -> int:
        """Cipher/permutation invocations consumed by one expansion."""
        return {PrgVariant.DOUBLE_FIXED_KEY: 2,
                PrgVariant.QUAD_FIXED_KEY: 4,
                PrgVariant.MULTI_OUTPUT_STREAM: 1}[self.variant]

    @property
    def is_stream(self) -> bool:
        return self.variant is PrgVariant.MULTI_OUTPUT_STREAM

    def check_fanout(self, m: int) -> None:
        if self.variant is PrgVariant.DOUBLE_FIXED_KEY and m != 2:
            raise ConfigError("the double-length fixed-key PRG only drives 2-ary trees")
        if self.variant is PrgVariant.QUAD_FIXED_KEY and m != 4:
            raise ConfigError("the quadruple-length fixed-key PRG only drives 4-ary trees")
        if m not in (2, 4):
            raise ConfigError(f"fanout must be 2 or 4, not {m}")


@dataclass
class PrgCounter:
    """Counts primitive core calls (ChaCha permutations or AES blocks)."""

    calls: int = 0

    def add(self, n: int) -> None:
        self.calls += int(n)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def prg_expand_many(seeds, kind: PrgKind, tweaks, counter: PrgCounter | None = None) -> np.ndarray:
    """Expand N seeds at once. Returns ``(N, kind.output_blocks, 2)``."""
    seeds = _as_blocks(seeds)
    n = seeds.shape[0]
    tweaks = np.broadcast_to(np.asarray(tweaks, dtype=np.uint64), (n,))
    if kind.is_stream:
        words = _keyed_words(seeds, tweaks, DOMAIN_EXPAND, 0, kind.rounds)
        out = words.view(np.uint64).reshape(n, 4, 2)
    else:
        out = _fixed_key_blocks(seeds, tweaks, kind.output_blocks)
    assert out.shape[1] == kind.output_blocks
    if counter is not None:
        counter.add(n * kind.core_calls)
    return out


def prg_expand(seed: int, kind: PrgKind, tweak: int, counter: PrgCounter | None = None) -> list[int]:
    """Expand one seed into 2 (fixed-key) or 4 (stream) blocks."""
    out = prg_expand_many(int_to_block(seed)[None, :], kind, [tweak & MASK64], counter)
    return blocks_to_ints(out[0])


def crhf_many(xs, tweaks) -> np.ndarray:
    """Correlation-robust hash of N blocks: first block of a keyed stream call."""
    xs = _as_blocks(xs)
    n = xs.shape[0]
    tweaks = np.broadcast_to(np.asarray(tweaks, dtype=np.uint64), (n,))
    words = _keyed_words(xs, tweaks, DOMAIN_CRHF, 0, 8)
    return np.ascontiguousarray(words[:, :4]).view(np.uint64).reshape(n, 2)


def crhf(x: int, tweak: int) -> int:
    return block_to_int(crhf_many(int_to_block(x)[None, :], [tweak & MASK64])[0])


def stream_words(seed: int, start_block: int, nblocks: int, stream_id: int = 0) -> np.ndarray:
    """Raw keystream words, ``(nblocks, 16)`` uint32, starting at block ``start_block``."""
    if nblocks <= 0:
        return np.empty((0, 16), dtype=np.uint32)
    key = np.broadcast_to(int_to_block(seed), (nblocks, 2))
    ctr = np.arange(start_block, start_block + nblocks, dtype=np.uint64)
    return _keyed_words(np.ascontiguousarray(key), ctr, DOMAIN_STREAM, stream_id & 0xFFFFFFFF, 8)


def prg_stream(seed: int, byte_count: int, stream_id: int = 0) -> bytes:
    """Deterministic, prefix-consistent byte stream from a 128-bit seed."""
    if byte_count < 0:
        raise ValueError("byte_count must be non-negative")
    nblocks = -(-byte_count // 64)
    return stream_words(seed, 0, nblocks, stream_id).astype("<u4").tobytes()[:byte_count]


def derive_blocks(seed: int, count: int, stream_id: int) -> np.ndarray:
    """``count`` pseudo-random blocks drawn from one labelled stream."""
    words = stream_words(seed, 0, -(-count // 4), stream_id)
    return np.ascontiguousarray(words).view(np.uint64).reshape(-1, 2)[:count].copy()


def derive_block(seed: int, stream_id: int) -> int:
    return block_to_int(derive_blocks(seed, 1, stream_id)[0])
