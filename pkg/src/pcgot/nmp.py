"""Analytic near-memory latency model.

Rows of the LPN matrix are split into contiguous per-rank ranges.  Each rank
streams its column indices and looks up vector entries through its own
memory-side cache, so its cycle count follows from cache statistics and DRAM
timing.  Tree expansion runs on the ChaCha cores concurrently with the LPN
phase; a final XOR merge costs one cycle per output row.

Per-rank cache statistics are measured on a sample of the rank's leading rows
and scaled linearly to the full range.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

from .errors import ConfigError
from .ggm import TreeShape, effective_leaves, expansion_calls, schedule_expansion, tree_depth
from .locality import CacheConfig, CacheStats, build_schedule, simulate_cache
from .lpn import LpnParams, SparseMatrix, gen_rows
from .prg import PrgKind

CSV_COLUMNS = ("params", "ranks", "cache_bytes", "spcot_cycles", "lpn_cycles", "total_cycles", "total_ms")
DEFAULT_SAMPLE_ROWS = 1 << 15
SCHEDULE_COHORT = 8


@dataclass(frozen=True)
class NmpConfig:
    ranks: int = 16
    memory_clock_mhz: float = 1200.0
    t_hit: int = 2
    t_rcd: int = 16
    t_cl: int = 16
    t_bl: int = 4
    chacha_cores_per_dimm: int = 4
    pipeline_depth: int = 8
    ranks_per_dimm: int = 2

    def __post_init__(self) -> None:
        if self.ranks < 1:
            raise ConfigError("ranks must be >= 1")
        for name in ("t_hit", "t_rcd", "t_cl", "t_bl", "chacha_cores_per_dimm",
                     "pipeline_depth", "ranks_per_dimm"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.memory_clock_mhz <= 0:
            raise ConfigError("memory clock must be positive")

    @property
    def cores(self) -> int:
        return self.chacha_cores_per_dimm * math.ceil(self.ranks / self.ranks_per_dimm)

    @property
    def miss_cycles(self) -> int:
        return self.t_rcd + self.t_cl + self.t_bl

    def to_ms(self, cycles: float) -> float:
        return cycles / (self.memory_clock_mhz * 1e3)


@dataclass
class NmpReport:
    per_rank_cycles: list[int]
    spcot_cycles: float
    reduce_cycles: int
    broadcast_cycles: int
    cfg: NmpConfig = field(default_factory=NmpConfig)

    @property
    def lpn_cycles(self) -> int:
        return max(self.per_rank_cycles) if self.per_rank_cycles else 0

    @property
    def total_cycles(self) -> float:
        return max(self.spcot_cycles, self.lpn_cycles) + self.reduce_cycles

    @property
    def total_ms(self) -> float:
        return self.cfg.to_ms(self.total_cycles)


def partition_rows(n: int, ranks: int) -> list[range]:
    """Contiguous balanced row ranges; the first ``n % ranks`` get one extra row."""
    if ranks < 1:
        raise ConfigError("ranks must be >= 1")
    if ranks > n:
        raise ConfigError(f"cannot split {n} rows over {ranks} ranks")
    base, extra = divmod(n, ranks)
    out, start = [], 0
    for r in range(ranks):
        size = base + (1 if r < extra else 0)
        out.append(range(start, start + size))
        start += size
    return out


def estimate_lpn_cycles(stats: list[CacheStats], cfg: NmpConfig) -> list[int]:
    return [s.hits * cfg.t_hit + s.misses * cfg.miss_cycles + s.accesses for s in stats]


def spcot_utilization(t: int, ell: int, m: int, pipeline_depth: int) -> float:
    depth = tree_depth(effective_leaves(ell, m), m)
    cohort = [TreeShape(m, depth)] * min(t, SCHEDULE_COHORT)
    return schedule_expansion(cohort, pipeline_depth, record_steps=False).utilization


def spcot_prg_calls(t: int, ell: int, m: int, kind: PrgKind) -> int:
    return t * expansion_calls(effective_leaves(ell, m), m, kind)


def estimate_spcot_cycles(t: int, ell: int, m: int, cfg: NmpConfig, kind: PrgKind | None = None,
                          utilization: float | None = None) -> float:
    kind = kind or PrgKind.stream()
    if utilization is None:
        utilization = spcot_utilization(t, ell, m, cfg.pipeline_depth)
    calls = spcot_prg_calls(t, ell, m, kind)
    return math.ceil(calls / cfg.cores) / utilization + cfg.pipeline_depth


def total_latency(spcot_cycles: float, per_rank_cycles: list[int], n: int, k: int,
                  cfg: NmpConfig) -> NmpReport:
    """``reduce`` costs one cycle per output row; broadcasting the k-vector costs k cycles."""
    return NmpReport(list(per_rank_cycles), spcot_cycles, n, k, cfg)


def rank_stats(params: LpnParams, ranks: int, cache: CacheConfig, matrix_seed: int = 0,
               schedule: str = "swap+lookahead",
               sample_rows: int = DEFAULT_SAMPLE_ROWS) -> list[CacheStats]:
    """Per-rank cache statistics from the first ``sample_rows`` rows of each range."""
    out = []
    for rng in partition_rows(params.n, ranks):
        rows = min(len(rng), sample_rows)
        cols = gen_rows(matrix_seed, params.n, params.k, params.d, rng.start, rng.start + rows)
        st = simulate_cache(build_schedule(SparseMatrix(rows, params.k, params.d, cols), schedule, cache), cache)
        accesses = len(rng) * params.d
        hits = round(st.hits * accesses / st.accesses) if st.accesses else 0
        out.append(CacheStats(accesses, hits))
    return out


def run_model(params: LpnParams, cfg: NmpConfig, cache: CacheConfig, m: int = 4,
              kind: PrgKind | None = None, matrix_seed: int = 0, schedule: str = "swap+lookahead",
              sample_rows: int = DEFAULT_SAMPLE_ROWS) -> NmpReport:
    kind = kind or PrgKind.stream()
    stats = rank_stats(params, cfg.ranks, cache, matrix_seed, schedule, sample_rows)
    spcot = estimate_spcot_cycles(params.t, params.ell, m, cfg, kind)
    return total_latency(spcot, estimate_lpn_cycles(stats, cfg), params.n, params.k, cfg)


def report_csv(rows: list[tuple[str, int, int, NmpReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for name, ranks, cache_bytes, rep in rows:
        w.writerow([name, ranks, cache_bytes, f"{rep.spcot_cycles:.1f}", rep.lpn_cycles,
                    f"{rep.total_cycles:.1f}", f"{rep.total_ms:.6f}"])
    return buf.getvalue()
