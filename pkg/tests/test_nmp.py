import csv
import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcgot.errors import ConfigError
from pcgot.locality import CacheConfig, CacheStats
from pcgot.nmp import (
    CSV_COLUMNS,
    NmpConfig,
    estimate_lpn_cycles,
    estimate_spcot_cycles,
    partition_rows,
    rank_stats,
    report_csv,
    run_model,
    spcot_prg_calls,
    total_latency,
)
from pcgot.presets import SCALE_PRESETS, get_preset
from pcgot.prg import PrgKind

MB = CacheConfig(1 << 20)


def test_partition_examples():
    assert partition_rows(10, 2) == [range(0, 5), range(5, 10)]
    assert sorted(len(r) for r in partition_rows(10, 3)) == [3, 3, 4]
    with pytest.raises(ConfigError):
        partition_rows(3, 4)


def test_partition_p20_sixteen_ranks():
    p = get_preset("p20")
    parts = partition_rows(p.n, 16)
    assert {len(r) for r in parts} == {76344, 76345}
    assert all(abs(len(r) * p.d - p.d * p.n / 16) <= 10 for r in parts)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 10**7), data=st.data())
def test_partition_properties(n, data):
    R = data.draw(st.integers(1, min(n, 64)))
    parts = partition_rows(n, R)
    assert len(parts) == R and parts[0].start == 0 and parts[-1].stop == n
    assert all(a.stop == b.start for a, b in zip(parts, parts[1:]))
    sizes = [len(r) for r in parts]
    assert max(sizes) - min(sizes) <= 1


def test_lpn_cycle_formula():
    cfg = NmpConfig()
    assert estimate_lpn_cycles([CacheStats(0, 0)], cfg) == [0]
    assert estimate_lpn_cycles([CacheStats(100, 100)], cfg) == [300]
    assert estimate_lpn_cycles([CacheStats(10, 4)], cfg) == [4 * 2 + 6 * 36 + 10]


def test_single_call_tree_costs_nine_cycles():
    cfg = NmpConfig(ranks=1, chacha_cores_per_dimm=1)
    assert cfg.cores == 1
    assert estimate_spcot_cycles(1, 4, 4, cfg) == 9.0


def test_stream_vs_double_fixed_key_ratio_is_six():
    p = get_preset("p20")
    cfg = NmpConfig(ranks=16)
    assert cfg.cores == 32
    base = estimate_spcot_cycles(p.t, p.ell, 2, cfg, PrgKind.fixed_key(2), utilization=1.0)
    ours = estimate_spcot_cycles(p.t, p.ell, 4, cfg, PrgKind.stream(), utilization=1.0)
    assert (base - cfg.pipeline_depth) / (ours - cfg.pipeline_depth) == 6.0
    assert spcot_prg_calls(p.t, p.ell, 2, PrgKind.fixed_key(2)) == \
        6 * spcot_prg_calls(p.t, p.ell, 4, PrgKind.stream())


def test_full_utilization_for_large_cohorts():
    p = get_preset("p20")
    assert estimate_spcot_cycles(p.t, p.ell, 4, NmpConfig()) == 655200 / 32 + 8


def test_total_latency_examples():
    cfg = NmpConfig()
    rep = total_latency(0, [500, 700], 1000, 50, cfg)
    assert rep.lpn_cycles == 700 and rep.total_cycles == 700 + 1000
    rep = total_latency(700, [700], 1000, 50, cfg)
    assert rep.total_cycles == 1700 and rep.broadcast_cycles == 50
    assert rep.total_ms == pytest.approx(1700 / 1.2e6)


@settings(max_examples=100, deadline=None)
@given(spcot=st.floats(0, 1e9), ranks=st.lists(st.integers(0, 10**9), min_size=1, max_size=16),
       n=st.integers(1, 10**7))
def test_overlap_dominance(spcot, ranks, n):
    rep = total_latency(spcot, ranks, n, 1, NmpConfig())
    assert rep.total_cycles >= max(spcot, max(ranks))
    assert rep.total_cycles <= spcot + max(ranks) + n


def test_rank_stats_scale_to_full_partition():
    p = get_preset("toy")
    stats = rank_stats(p, 4, CacheConfig(1024), sample_rows=64)
    assert sum(s.accesses for s in stats) == p.n * p.d
    assert all(0 <= s.hits <= s.accesses for s in stats)


@pytest.mark.parametrize("name", ["p20", "p22"])
def test_latency_strictly_decreases_with_ranks(name):
    p = get_preset(name)
    totals = [run_model(p, NmpConfig(ranks=R), MB, sample_rows=4096).total_cycles for R in (2, 4, 8, 16)]
    assert all(a > b for a, b in zip(totals, totals[1:]))


def test_p20_spcot_below_lpn_at_sixteen_ranks():
    rep = run_model(get_preset("p20"), NmpConfig(ranks=16), MB, sample_rows=4096)
    assert rep.spcot_cycles < rep.lpn_cycles


def test_totals_ordered_by_parameter_size():
    totals = [run_model(get_preset(n), NmpConfig(ranks=16), MB, sample_rows=2048).total_cycles
              for n in SCALE_PRESETS]
    assert totals == sorted(totals)


def test_config_validation():
    with pytest.raises(ConfigError):
        NmpConfig(ranks=0)
    with pytest.raises(ConfigError):
        NmpConfig(t_cl=0)
    assert NmpConfig(ranks=3).cores == 8


def test_report_csv_schema():
    rep = total_latency(10, [20], 5, 1, NmpConfig())
    rows = list(csv.reader(io.StringIO(report_csv([("toy", 1, 1024, rep)]))))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert rows[1][:3] == ["toy", "1", "1024"] and float(rows[1][5]) == 25.0
