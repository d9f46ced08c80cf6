"""Offline index sorting (column swap, row look-ahead) and a memory-side cache model.

Column swapping relabels columns by first occurrence in a row-major scan so
co-accessed vector entries share cache lines.  Row look-ahead then reorders the
entry stream so that entries of upcoming rows that fall on a currently cached
line are served while it is resident.  The result is a :class:`SortedCsr`
whose ``rowidx`` routes every entry back to its output row.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import first_occurrence_perm, lookahead_order, lru_hits, setassoc_hits
from .errors import ConfigError, FormatError
from .lpn import SparseMatrix

SORTED_MAGIC = b"IRNS"
SORTED_VERSION = 1
DEFAULT_WINDOW = 64
DEFAULT_BLOCK_ROWS = 1 << 16
SCHEDULES = ("none", "swap", "swap+lookahead")


@dataclass(frozen=True)
class CacheConfig:
    capacity_bytes: int
    line_bytes: int = 64
    element_bytes: int = 16
    ways: int | None = None  # None: fully associative

    def __post_init__(self) -> None:
        if self.capacity_bytes < self.line_bytes or self.capacity_bytes % self.line_bytes:
            raise ConfigError("cache capacity must be a positive multiple of the line size")
        if self.line_bytes % self.element_bytes:
            raise ConfigError("line size must be a multiple of the element size")
        if self.ways is not None and (self.ways < 1 or self.lines % self.ways):
            raise ConfigError("line count must be a multiple of the associativity")

    @property
    def lines(self) -> int:
        return self.capacity_bytes // self.line_bytes

    @property
    def elements_per_line(self) -> int:
        return self.line_bytes // self.element_bytes


@dataclass(frozen=True)
class CacheStats:
    accesses: int
    hits: int

    @property
    def misses(self) -> int:
        return self.accesses - self.hits

    @property
    def hit_rate(self) -> float:
        return self.hits / self.accesses if self.accesses else 0.0


@dataclass
class SortedCsr:
    n: int
    k: int
    d: int
    perm: np.ndarray    # new column -> old column
    colidx: np.ndarray  # scheduled entries, relabeled columns
    rowidx: np.ndarray
    window: int = 1

    def __post_init__(self) -> None:
        if self.colidx.shape != self.rowidx.shape:
            raise ConfigError("colidx and rowidx lengths differ")
        if self.perm.shape != (self.k,):
            raise ConfigError("permutation length must equal k")


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------


def column_swap(A: SparseMatrix) -> tuple[np.ndarray, SparseMatrix]:
    """First-occurrence column order. Returns ``(perm, A')`` with ``A'`` relabeled."""
    perm, inv = first_occurrence_perm(A.colidx.reshape(-1), A.k)
    relabeled = inv[A.colidx].astype(np.int32)
    return perm, SparseMatrix(A.n, A.k, A.d, relabeled, A.seed)


def permute_vector(vec: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """Reorder a length-k vector so position ``j`` holds original column ``perm[j]``."""
    return vec[perm]


def row_major(A: SparseMatrix, perm: np.ndarray | None = None) -> SortedCsr:
    perm = np.arange(A.k) if perm is None else perm
    rowidx = np.repeat(np.arange(A.n, dtype=np.int64), A.d)
    return SortedCsr(A.n, A.k, A.d, perm, A.colidx.reshape(-1).astype(np.int64), rowidx, 1)


def row_lookahead(A: SparseMatrix, window_rows: int = DEFAULT_WINDOW,
                  cfg: CacheConfig | None = None, perm: np.ndarray | None = None,
                  block_rows: int = DEFAULT_BLOCK_ROWS) -> SortedCsr:
    """Schedule entries with a sliding window of ``window_rows`` rows.

    The simulated cache used while scheduling is fully associative LRU with
    ``cfg``'s capacity and line size; it restarts empty at each block of
    ``block_rows`` rows.
    """
    if window_rows < 1:
        raise ConfigError("window_rows must be >= 1")
    if block_rows < 1:
        raise ConfigError("block_rows must be >= 1")
    cfg = cfg or CacheConfig(1 << 20)
    perm = np.arange(A.k) if perm is None else perm
    cols = A.colidx.reshape(-1).astype(np.int64)
    epl = cfg.elements_per_line
    nlines = -(-A.k // epl)
    order = lookahead_order(cols, A.n, A.d, window_rows, cfg.lines, epl, nlines, block_rows)
    return SortedCsr(A.n, A.k, A.d, perm, cols[order], order // A.d, window_rows)


def build_schedule(A: SparseMatrix, schedule: str, cfg: CacheConfig | None = None,
                   window_rows: int = DEFAULT_WINDOW) -> SortedCsr:
    if schedule == "none":
        return row_major(A)
    if schedule == "swap":
        perm, A2 = column_swap(A)
        return row_major(A2, perm)
    if schedule == "swap+lookahead":
        perm, A2 = column_swap(A)
        return row_lookahead(A2, window_rows, cfg, perm)
    raise ConfigError(f"unknown schedule {schedule!r}; expected one of {', '.join(SCHEDULES)}")


# ---------------------------------------------------------------------------
# Cache simulation
# ---------------------------------------------------------------------------


def access_lines(colidx: np.ndarray, cfg: CacheConfig) -> np.ndarray:
    addr = np.asarray(colidx, dtype=np.int64).reshape(-1) * cfg.element_bytes
    return addr // cfg.line_bytes


def simulate_cache(schedule, cfg: CacheConfig) -> CacheStats:
    """Replay the column accesses of a schedule (``SortedCsr`` or ``SparseMatrix``)."""
    colidx = schedule.colidx.reshape(-1)
    k = schedule.k
    if colidx.size and (int(colidx.min()) < 0 or int(colidx.max()) >= k):
        raise ConfigError("column index out of range")
    lines = access_lines(colidx, cfg)
    if cfg.ways is None:
        nlines = -(-k * cfg.element_bytes // cfg.line_bytes)
        hits = lru_hits(lines, cfg.lines, max(nlines, 1))
    else:
        hits = setassoc_hits(lines, cfg.lines // cfg.ways, cfg.ways)
    return CacheStats(int(lines.size), int(hits))


# ---------------------------------------------------------------------------
# Files and CSV
# ---------------------------------------------------------------------------

_HDR = struct.Struct("<4sHQQHIQIII")
CSV_COLUMNS = ("params", "cache_bytes", "schedule", "accesses", "hits", "hit_rate")


def write_sorted(path: str | Path, S: SortedCsr, cfg: CacheConfig) -> None:
    with open(path, "wb") as fh:
        fh.write(_HDR.pack(SORTED_MAGIC, SORTED_VERSION, S.n, S.k, S.d, S.window,
                           cfg.capacity_bytes, cfg.line_bytes, cfg.element_bytes, cfg.ways or 0))
        for arr in (S.perm, S.colidx, S.rowidx):
            fh.write(np.ascontiguousarray(arr, dtype="<u4").tobytes())


def read_sorted(path: str | Path) -> tuple[SortedCsr, CacheConfig]:
    data = Path(path).read_bytes()
    if len(data) < _HDR.size:
        raise FormatError("sorted matrix file truncated")
    magic, version, n, k, d, window, cap, line, elem, ways = _HDR.unpack_from(data)
    if magic != SORTED_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {SORTED_MAGIC!r}")
    if version != SORTED_VERSION:
        raise FormatError(f"unsupported sorted matrix file version {version}")
    if len(data) != _HDR.size + 4 * (k + 2 * n * d):
        raise FormatError("sorted matrix file length does not match its header")
    body = np.frombuffer(data, dtype="<u4", offset=_HDR.size).astype(np.int64)
    perm, colidx, rowidx = body[:k], body[k:k + n * d], body[k + n * d:]
    cfg = CacheConfig(cap, line, elem, ways or None)
    return SortedCsr(n, k, d, perm, colidx, rowidx, window), cfg


def stats_csv(rows: list[tuple[str, int, str, CacheStats]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for params, cache_bytes, schedule, st in rows:
        w.writerow([params, cache_bytes, schedule, st.accesses, st.hits, f"{st.hit_rate:.6f}"])
    return buf.getvalue()
