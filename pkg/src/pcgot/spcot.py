"""Single-point COT over an m-ary GGM tree, batched over many trees.

Per tree level the parties run one oblivious class-sum transfer: the receiver
learns every class sum of that level except the class of its path digit.  For
m=2 this is one chosen OT; for m=4 it is a 3-out-of-4 OT built from a binary
depth-2 mini tree whose leaves key the four ciphertexts.  Each level costs
one correction frame from the receiver and one ciphertext frame back.  After
the last level the sender sends ``psi = delta ^ XOR(leaves)`` per tree.

Base COTs are consumed level-major, then by tree, ``log2 m`` per tree and level,
so one tree costs ``log2(ell)`` COTs for either fanout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import ReceiverCotPool, SenderCotPool, ot_receive_many, ot_send_many, pack_bits, unpack_bits
from .errors import ConfigError, ProtocolError
from .ggm import (
    class_sums,
    digits_matrix,
    expand_levels,
    reconstruct_level_batch,
    tree_depth,
)
from .prg import (
    PrgCounter,
    PrgKind,
    blocks_from_bytes,
    blocks_to_bytes,
    crhf_many,
    derive_blocks,
    int_to_block,
    xor_reduce,
)
from .transport import MsgType

MINI_TREE_FLAG = 0x80000000
_MINI_KIND = PrgKind.stream()
_STREAM_TREE_SEEDS = 0x5EED0000
_STREAM_MINI_SEEDS = 0x4D490000


def log2_fanout(m: int) -> int:
    if m not in (2, 4):
        raise ConfigError(f"fanout must be 2 or 4, not {m}")
    return m.bit_length() - 1


def cots_per_tree(ell: int, m: int) -> int:
    return tree_depth(ell, m) * log2_fanout(m)


def tree_seeds(session_seed: int, count: int) -> np.ndarray:
    return derive_blocks(session_seed, count, _STREAM_TREE_SEEDS)


def mini_tree_ids(tree_ids: np.ndarray, level: int) -> np.ndarray:
    tree_ids = np.asarray(tree_ids, dtype=np.uint64)
    if tree_ids.size and int(tree_ids.max()) >= 1 << 26:
        raise ConfigError("tree id too large for the mini-tree tweak space")
    return np.uint64(MINI_TREE_FLAG) | (tree_ids << np.uint64(5)) | np.uint64(level)


def mini_leaf_tweaks(tree_ids: np.ndarray, level: int, m: int) -> np.ndarray:
    """CRHF tweaks keying the m ciphertexts of a tree level, shape ``(t, m)``."""
    tid = np.asarray(tree_ids, dtype=np.uint64)[:, None]
    j = np.arange(m, dtype=np.uint64)[None, :]
    return (np.uint64(1 << 63) | (tid << np.uint64(10)) | np.uint64(level << 2) | j)


def _expect_blocks(payload: bytes, count: int, what: str) -> np.ndarray:
    if len(payload) != 16 * count:
        raise ProtocolError(f"{what}: expected {count} blocks, got {len(payload)} bytes")
    return blocks_from_bytes(payload)


def _expect_bits(payload: bytes, count: int, what: str) -> np.ndarray:
    if len(payload) != -(-count // 8):
        raise ProtocolError(f"{what}: expected {count} packed bits, got {len(payload)} bytes")
    return unpack_bits(payload, count)


# ---------------------------------------------------------------------------
# Oblivious class sums ((m-1)-out-of-m OT), batched over t trees
# ---------------------------------------------------------------------------


def oblivious_class_sums_send(chan, pool: SenderCotPool, sums: np.ndarray, tree_ids: np.ndarray,
                              level: int, mini_seed: int = 0,
                              counter: PrgCounter | None = None) -> None:
    """Send the ``(t, m, 2)`` class sums so each receiver tree misses exactly one."""
    t, m, _ = sums.shape
    r = log2_fanout(m)
    d = _expect_bits(chan.recv(MsgType.LEVEL_OT_CORR), t * r, "class-sum corrections")
    if m == 2:
        c0, c1 = ot_send_many(pool, sums[:, 0], sums[:, 1], d)
        chan.send(MsgType.LEVEL_OT_CT, blocks_to_bytes(np.stack([c0, c1], axis=1).reshape(-1, 2)))
        return

    roots = derive_blocks(mini_seed, t, _STREAM_MINI_SEEDS + level)
    mini = expand_levels(roots, 2, 2, _MINI_KIND, mini_tree_ids(tree_ids, level), counter)
    # Consumption order is tree-major inside the level: tree i uses entries 2i, 2i+1.
    m0 = np.stack([mini[1][:, 0], class_sums(mini[2], 2)[:, 0]], axis=1).reshape(-1, 2)
    m1 = np.stack([mini[1][:, 1], class_sums(mini[2], 2)[:, 1]], axis=1).reshape(-1, 2)
    c0, c1 = ot_send_many(pool, m0, m1, d)
    leaves = mini[2]
    pads = crhf_many(leaves.reshape(-1, 2), mini_leaf_tweaks(tree_ids, level, m).ravel())
    if counter is not None:
        counter.add(t * m)
    cts = sums.reshape(-1, 2) ^ pads
    ot_part = np.stack([c0, c1], axis=1).reshape(-1, 2)
    chan.send(MsgType.LEVEL_OT_CT, blocks_to_bytes(np.concatenate([ot_part, cts])))


def oblivious_class_sums_receive(chan, pool: ReceiverCotPool, m: int, withheld: np.ndarray,
                                 tree_ids: np.ndarray, level: int,
                                 counter: PrgCounter | None = None) -> np.ndarray:
    """Receive ``(t, m, 2)`` class sums; slot ``withheld[i]`` of tree ``i`` is zero."""
    withheld = np.asarray(withheld, dtype=np.int64)
    t = withheld.shape[0]
    r = log2_fanout(m)
    rows = np.arange(t)
    if m == 2:
        choice = (1 - withheld).astype(np.uint8)
        d, decode = ot_receive_many(pool, choice)
        chan.send(MsgType.LEVEL_OT_CORR, pack_bits(d))
        ct = _expect_blocks(chan.recv(MsgType.LEVEL_OT_CT), 2 * t, "class-sum ciphertexts").reshape(t, 2, 2)
        out = np.zeros((t, 2, 2), dtype=np.uint64)
        out[rows, choice] = decode(ct[:, 0], ct[:, 1])
        return out

    hi, lo = withheld >> 1, withheld & 1
    choice = np.stack([1 - hi, 1 - lo], axis=1).reshape(-1).astype(np.uint8)
    d, decode = ot_receive_many(pool, choice)
    chan.send(MsgType.LEVEL_OT_CORR, pack_bits(d))
    payload = _expect_blocks(chan.recv(MsgType.LEVEL_OT_CT), 2 * t * r + t * m, "class-sum ciphertexts")
    ot_part = payload[:2 * t * r].reshape(t * r, 2, 2)
    cts = payload[2 * t * r:].reshape(t, m, 2)
    got = decode(ot_part[:, 0], ot_part[:, 1]).reshape(t, 2, 2)

    # Rebuild the mini tree minus the leaf at position ``withheld``.
    mids = mini_tree_ids(tree_ids, level)
    lvl1_recv = np.zeros((t, 2, 2), dtype=np.uint64)
    lvl1_recv[rows, 1 - hi] = got[:, 0]
    lvl1 = reconstruct_level_batch(np.zeros((t, 1, 2), dtype=np.uint64), np.zeros(t, dtype=np.int64),
                                   hi, lvl1_recv, 2, _MINI_KIND, mids, 1, counter)
    lvl2_recv = np.zeros((t, 2, 2), dtype=np.uint64)
    lvl2_recv[rows, 1 - lo] = got[:, 1]
    leaves = reconstruct_level_batch(lvl1, hi, lo, lvl2_recv, 2, _MINI_KIND, mids, 2, counter)
    pads = crhf_many(leaves.reshape(-1, 2), mini_leaf_tweaks(tree_ids, level, m).ravel()).reshape(t, m, 2)
    if counter is not None:
        counter.add(t * (m - 1))
    out = cts ^ pads
    out[rows, withheld] = 0
    return out


# ---------------------------------------------------------------------------
# Batched SPCOT
# ---------------------------------------------------------------------------


def spcot_send_batch(chan, pool: SenderCotPool, ell: int, m: int, kind: PrgKind,
                     seeds: np.ndarray, tree_ids: np.ndarray | None = None, mini_seed: int = 0,
                     counter: PrgCounter | None = None,
                     aux_counter: PrgCounter | None = None) -> np.ndarray:
    """Sender side for ``t = len(seeds)`` trees. Returns leaves ``(t, ell, 2)``."""
    kind.check_fanout(m)
    depth = tree_depth(ell, m)
    seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1, 2)
    t = seeds.shape[0]
    if tree_ids is None:
        tree_ids = np.arange(t, dtype=np.uint64)
    levels = expand_levels(seeds, m, depth, kind, tree_ids, counter)
    for i in range(1, depth + 1):
        oblivious_class_sums_send(chan, pool, class_sums(levels[i], m), tree_ids, i, mini_seed, aux_counter)
        levels[i - 1] = None
    leaves = levels[depth]
    psi = xor_reduce(leaves, axis=1) ^ int_to_block(pool.delta)[None, :]
    chan.send(MsgType.PSI, blocks_to_bytes(psi))
    return leaves


def spcot_receive_batch(chan, pool: ReceiverCotPool, ell: int, m: int, kind: PrgKind,
                        alphas: np.ndarray, tree_ids: np.ndarray | None = None,
                        counter: PrgCounter | None = None,
                        aux_counter: PrgCounter | None = None) -> np.ndarray:
    """Receiver side. Returns ``v`` ``(t, ell, 2)`` with ``v[i, alphas[i]] = w[i, alphas[i]] ^ delta``."""
    kind.check_fanout(m)
    depth = tree_depth(ell, m)
    alphas = np.asarray(alphas, dtype=np.int64).reshape(-1)
    t = alphas.shape[0]
    if t and (alphas.min() < 0 or alphas.max() >= ell):
        raise ConfigError(f"alpha must lie in [0, {ell})")
    if tree_ids is None:
        tree_ids = np.arange(t, dtype=np.uint64)
    digits = digits_matrix(alphas, m, depth)
    level = np.zeros((t, 1, 2), dtype=np.uint64)
    path = np.zeros(t, dtype=np.int64)
    for i in range(1, depth + 1):
        digit = digits[:, i - 1]
        received = oblivious_class_sums_receive(chan, pool, m, digit, tree_ids, i, aux_counter)
        level = reconstruct_level_batch(level, path, digit, received, m, kind, tree_ids, i, counter)
        path = path * m + digit
    psi = _expect_blocks(chan.recv(MsgType.PSI), t, "psi")
    rows = np.arange(t)
    # The punctured slot is zero, so XOR over the whole row is the XOR of known leaves.
    level[rows, alphas] = psi ^ xor_reduce(level, axis=1)
    return level


# ---------------------------------------------------------------------------
# Single-tree API
# ---------------------------------------------------------------------------


@dataclass
class SpcotSenderOutput:
    w: np.ndarray


@dataclass
class SpcotReceiverOutput:
    alpha: int
    v: np.ndarray

    @property
    def u(self) -> np.ndarray:
        bits = np.zeros(self.v.shape[0], dtype=np.uint8)
        bits[self.alpha] = 1
        return bits


def spcot_send(chan, pool: SenderCotPool, ell: int, m: int, kind: PrgKind | None = None,
               seed: int = 0, tree_id: int = 0, counter: PrgCounter | None = None) -> SpcotSenderOutput:
    kind = kind or PrgKind.stream()
    w = spcot_send_batch(chan, pool, ell, m, kind, tree_seeds(seed, 1),
                         np.array([tree_id], dtype=np.uint64), mini_seed=seed ^ 1, counter=counter)
    return SpcotSenderOutput(w[0])


def spcot_receive(chan, pool: ReceiverCotPool, ell: int, m: int, alpha: int,
                  kind: PrgKind | None = None, tree_id: int = 0,
                  counter: PrgCounter | None = None) -> SpcotReceiverOutput:
    kind = kind or PrgKind.stream()
    v = spcot_receive_batch(chan, pool, ell, m, kind, np.array([alpha]),
                            np.array([tree_id], dtype=np.uint64), counter=counter)
    return SpcotReceiverOutput(alpha, v[0])
