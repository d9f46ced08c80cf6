"""m-ary GGM trees: expansion, per-level class sums, punctured reconstruction.

Node ``j`` at level ``i`` has children ``j*m .. j*m + m - 1`` at level ``i+1``.
The receiver's punctured path is given by base-m digits of the punctured leaf
index, most significant first, so the unknown node at level ``i`` sits at the
base-m value of the first ``i`` digits.

The batched functions work on a cohort of ``t`` trees at once with arrays of
shape ``(t, m**level, 2)``; the single-tree API wraps them with ``t = 1``.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, ProtocolError
from .prg import (
    PrgCounter,
    PrgKind,
    block_to_int,
    blocks_from_ints,
    blocks_to_ints,
    int_to_block,
    prg_expand_many,
    xor_reduce,
)


# ---------------------------------------------------------------------------
# Shape arithmetic
# ---------------------------------------------------------------------------


def tree_depth(ell: int, m: int) -> int:
    """Depth of an m-ary tree with exactly ``ell`` leaves."""
    if m not in (2, 4):
        raise ConfigError(f"fanout must be 2 or 4, not {m}")
    depth, size = 0, 1
    while size < ell:
        size *= m
        depth += 1
    if size != ell or depth < 1:
        raise ConfigError(f"{ell} leaves is not a positive power of {m}")
    return depth


def effective_leaves(ell: int, m: int) -> int:
    """Smallest power of ``m`` (at least ``m``) that is >= ``ell``."""
    if m not in (2, 4):
        raise ConfigError(f"fanout must be 2 or 4, not {m}")
    size = m
    while size < ell:
        size *= m
    return size


def internal_nodes(ell: int, m: int) -> int:
    return (ell - 1) // (m - 1)


def expansion_calls(ell: int, m: int, kind: PrgKind) -> int:
    """Core PRG calls to expand one full tree with ``ell`` leaves."""
    kind.check_fanout(m)
    tree_depth(ell, m)
    return internal_nodes(ell, m) * kind.core_calls


def alpha_digits(alpha: int, m: int, depth: int) -> list[int]:
    if not 0 <= alpha < m ** depth:
        raise ConfigError(f"alpha={alpha} outside [0, {m ** depth})")
    digits = []
    for _ in range(depth):
        digits.append(alpha % m)
        alpha //= m
    return digits[::-1]


def digits_matrix(alphas: np.ndarray, m: int, depth: int) -> np.ndarray:
    """Base-m digits (MSB first) of many leaf indices, shape ``(t, depth)``."""
    alphas = np.asarray(alphas, dtype=np.int64)
    powers = m ** np.arange(depth - 1, -1, -1, dtype=np.int64)
    return (alphas[:, None] // powers[None, :]) % m


def node_tweaks(tree_ids: np.ndarray, level: int, width: int) -> np.ndarray:
    """Tweaks ``tree_id:32 | level:8 | node:24`` for every node of a level."""
    if width > 1 << 24:
        raise ConfigError("level too wide for the 24-bit node index field")
    tid = np.asarray(tree_ids, dtype=np.uint64)[:, None] << np.uint64(32)
    return tid | np.uint64(level << 24) | np.arange(width, dtype=np.uint64)[None, :]


# ---------------------------------------------------------------------------
# Batched core
# ---------------------------------------------------------------------------


def expand_level(parents: np.ndarray, m: int, kind: PrgKind, tree_ids: np.ndarray,
                 level: int, counter: PrgCounter | None = None) -> np.ndarray:
    """Expand every node of ``parents`` ``(t, P, 2)`` into ``(t, P*m, 2)`` children."""
    t, width, _ = parents.shape
    tweaks = node_tweaks(tree_ids, level, width)
    out = prg_expand_many(parents.reshape(-1, 2), kind, tweaks.ravel(), counter)
    return np.ascontiguousarray(out[:, :m]).reshape(t, width * m, 2)


def expand_levels(seeds: np.ndarray, m: int, depth: int, kind: PrgKind,
                  tree_ids: np.ndarray, counter: PrgCounter | None = None) -> list[np.ndarray]:
    """All levels of ``t`` trees; level ``i`` has shape ``(t, m**i, 2)``."""
    kind.check_fanout(m)
    if depth < 1:
        raise ConfigError("depth must be >= 1")
    seeds = np.asarray(seeds, dtype=np.uint64).reshape(-1, 2)
    levels = [seeds[:, None, :].copy()]
    for i in range(depth):
        levels.append(expand_level(levels[-1], m, kind, tree_ids, i, counter))
    return levels


def class_sums(level: np.ndarray, m: int) -> np.ndarray:
    """``(t, W, 2)`` level -> ``(t, m, 2)`` XOR of the nodes of each class mod m."""
    t, width, _ = level.shape
    return xor_reduce(level.reshape(t, width // m, m, 2), axis=1)


def reconstruct_level_batch(prev: np.ndarray, path_prev: np.ndarray, digit: np.ndarray,
                            received: np.ndarray, m: int, kind: PrgKind,
                            tree_ids: np.ndarray, level: int,
                            counter: PrgCounter | None = None) -> np.ndarray:
    """Receiver step for one level across a cohort.

    ``prev`` is level ``level-1`` with the path node at ``path_prev`` unknown.
    ``received[:, j]`` holds the sender's class-``j`` sum for every class except
    ``digit`` (that slot is ignored). Returns level ``level`` with only the path
    child (``path_prev*m + digit``) unknown and set to zero.
    """
    t, width, _ = prev.shape
    rows = np.arange(t)
    children = np.zeros((t, width, m, 2), dtype=np.uint64)
    if width > 1:
        mask = np.ones((t, width), dtype=bool)
        mask[rows, path_prev] = False
        tweaks = node_tweaks(tree_ids, level - 1, width)[mask]
        out = prg_expand_many(prev[mask], kind, tweaks, counter)
        children[mask] = out[:, :m]
    known = xor_reduce(children, axis=1)
    recovered = received ^ known
    recovered[rows, digit] = 0
    children[rows, path_prev] = recovered
    return children.reshape(t, width * m, 2)


# ---------------------------------------------------------------------------
# Single-tree API
# ---------------------------------------------------------------------------


@dataclass
class GgmTree:
    m: int
    depth: int
    levels: list[np.ndarray]

    @property
    def leaf_count(self) -> int:
        return self.m ** self.depth

    @property
    def leaves(self) -> np.ndarray:
        return self.levels[-1]

    def node(self, level: int, index: int) -> int:
        return block_to_int(self.levels[level][index])


@dataclass
class LevelSums:
    level: int
    sums: np.ndarray  # (m, 2)

    def as_ints(self) -> list[int]:
        return blocks_to_ints(self.sums)


@dataclass
class PuncturedTree:
    """Receiver view: exactly one unknown node per reconstructed level.

    Unknown nodes are stored as zero blocks; ``levels`` grows as levels are
    reconstructed (level 0 holds the unknown root).
    """

    m: int
    depth: int
    path: tuple[int, ...]
    kind: PrgKind = field(default_factory=PrgKind.stream)
    tree_id: int = 0
    levels: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.path) != self.depth or any(not 0 <= a < self.m for a in self.path):
            raise ConfigError(f"path {self.path} is not {self.depth} base-{self.m} digits")
        if not self.levels:
            self.levels = [np.zeros((1, 2), dtype=np.uint64)]

    @classmethod
    def for_alpha(cls, alpha: int, m: int, depth: int, kind: PrgKind | None = None,
                  tree_id: int = 0) -> PuncturedTree:
        return cls(m, depth, tuple(alpha_digits(alpha, m, depth)),
                   kind or PrgKind.stream(), tree_id)

    @property
    def alpha(self) -> int:
        return self.path_index(self.depth)

    def path_index(self, level: int) -> int:
        idx = 0
        for a in self.path[:level]:
            idx = idx * self.m + a
        return idx

    @property
    def reconstructed(self) -> int:
        return len(self.levels) - 1

    def known_mask(self, level: int) -> np.ndarray:
        mask = np.ones(self.m ** level, dtype=bool)
        mask[self.path_index(level)] = False
        return mask


def expand_full_tree(seed: int, m: int, depth: int, kind: PrgKind, tree_id: int = 0,
                     counter: PrgCounter | None = None) -> GgmTree:
    """Expand a full tree from its root seed."""
    levels = expand_levels(int_to_block(seed)[None, :], m, depth, kind,
                           np.array([tree_id], dtype=np.uint64), counter)
    return GgmTree(m, depth, [lv[0] for lv in levels])


def level_class_sums(tree: GgmTree, level: int) -> LevelSums:
    if not 1 <= level <= tree.depth:
        raise ConfigError(f"level {level} outside [1, {tree.depth}]")
    return LevelSums(level, class_sums(tree.levels[level][None], tree.m)[0])


def _normalize_received(received, m: int) -> dict[int, int]:
    if isinstance(received, Mapping):
        items = list(received.items())
    else:
        items = list(received)
    if len(items) != m - 1:
        raise ProtocolError(f"expected {m - 1} class sums, got {len(items)}")
    labels = [int(j) for j, _ in items]
    if len(set(labels)) != len(labels):
        raise ProtocolError(f"duplicate class labels in {labels}")
    if any(not 0 <= j < m for j in labels):
        raise ProtocolError(f"class label out of range in {labels}")
    return {int(j): int(v) for j, v in items}


def reconstruct_level(partial: PuncturedTree, level: int,
                      received: Mapping[int, int] | Iterable[tuple[int, int]],
                      counter: PrgCounter | None = None) -> PuncturedTree:
    """Reconstruct ``level`` from the ``m - 1`` class sums of the other classes."""
    m = partial.m
    if level != partial.reconstructed + 1 or level > partial.depth:
        raise ConfigError(f"level {level} cannot follow {partial.reconstructed} reconstructed levels")
    sums = _normalize_received(received, m)
    digit = partial.path[level - 1]
    if digit in sums:
        raise ProtocolError(f"class {digit} is the withheld class and must not be received")
    recv = np.zeros((1, m, 2), dtype=np.uint64)
    for j, v in sums.items():
        recv[0, j] = int_to_block(v)
    nxt = reconstruct_level_batch(
        partial.levels[-1][None], np.array([partial.path_index(level - 1)]),
        np.array([digit]), recv, m, partial.kind,
        np.array([partial.tree_id], dtype=np.uint64), level, counter)
    partial.levels.append(nxt[0])
    return partial


def recover_punctured_leaf(partial: PuncturedTree, psi: int) -> int:
    """Value of the punctured leaf XOR the sender's offset.

    ``psi`` is the XOR of every leaf together with the offset.
    """
    if partial.reconstructed != partial.depth:
        raise ConfigError(
            f"{partial.depth - partial.reconstructed + 1} leaves still unknown; reconstruct all levels first")
    leaves = partial.levels[-1]
    known = xor_reduce(leaves[partial.known_mask(partial.depth)])
    return psi ^ block_to_int(known)


def leaf_blocks(values: Sequence[int]) -> np.ndarray:
    return blocks_from_ints(values)


# ---------------------------------------------------------------------------
# Expansion scheduling
# ---------------------------------------------------------------------------


class TreeShape(NamedTuple):
    m: int
    depth: int


class Step(NamedTuple):
    tree: int
    level: int
    index: int
    cycle: int


@dataclass
class ExpansionSchedule:
    steps: list[Step]
    issued: int
    stalls: int
    pipeline_depth: int

    @property
    def utilization(self) -> float:
        total = self.issued + self.stalls
        return 1.0 if total == 0 else self.issued / total

    @property
    def cycles(self) -> int:
        """Cycle at which the last result leaves the pipeline."""
        return self.issued + self.stalls + self.pipeline_depth


def schedule_expansion(trees: Iterable, pipeline_depth: int = 8,
                       record_steps: bool = True) -> ExpansionSchedule:
    """Order node expansions of several trees for one pipelined PRG core.

    One expansion issues per cycle and its children become expandable
    ``pipeline_depth`` cycles later. Ready nodes are issued deepest level first
    (keeping live state close to depth-first), oldest first within a level, so
    shallow work from other trees fills bubbles that a single tree would
    leave. A cycle with nothing ready while work remains is a stall.
    """
    if pipeline_depth < 1:
        raise ConfigError("pipeline_depth must be >= 1")
    shapes = [TreeShape(t.m, t.depth) for t in trees]
    max_depth = max((s.depth for s in shapes), default=0)
    ready: list[deque] = [deque() for _ in range(max_depth)]
    for tree, s in enumerate(shapes):
        if s.depth >= 1:
            ready[0].append((tree, 0))
    # results in flight: (ready_cycle, seq, tree, level, first_index, count)
    inflight: list = []
    seq = 0
    steps: list[Step] = []
    now = issued = stalls = 0
    while True:
        while inflight and inflight[0][0] <= now:
            _, _, tree, level, first, count = heapq.heappop(inflight)
            q = ready[level]
            for j in range(first, first + count):
                q.append((tree, j))
        level = next((lv for lv in range(max_depth - 1, -1, -1) if ready[lv]), None)
        if level is None:
            if not inflight:
                break
            stalls += inflight[0][0] - now
            now = inflight[0][0]
            continue
        tree, index = ready[level].popleft()
        if record_steps:
            steps.append(Step(tree, level, index, now))
        issued += 1
        s = shapes[tree]
        if level + 1 < s.depth:
            heapq.heappush(inflight, (now + pipeline_depth, seq, tree, level + 1, index * s.m, s.m))
            seq += 1
        now += 1
    return ExpansionSchedule(steps, issued, stalls, pipeline_depth)
