from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pcgot.errors import ConfigError, FormatError
from pcgot.locality import (
    CSV_COLUMNS,
    CacheConfig,
    CacheStats,
    access_lines,
    build_schedule,
    column_swap,
    read_sorted,
    row_lookahead,
    row_major,
    simulate_cache,
    stats_csv,
    write_sorted,
)
from pcgot.lpn import LpnParams, SparseMatrix, gen_matrix, gen_rows

TOY = CacheConfig(64, line_bytes=32, element_bytes=16)  # 2 lines of 2 elements


def _matrix(seed, n=2000, k=600, d=10):
    return gen_matrix(seed, LpnParams(n, k, 1, n, d=d))


def test_cache_config_validation():
    assert CacheConfig(1 << 20).lines == 16384 and CacheConfig(1 << 20).elements_per_line == 4
    with pytest.raises(ConfigError):
        CacheConfig(100)
    with pytest.raises(ConfigError):
        CacheConfig(64, line_bytes=24)
    with pytest.raises(ConfigError):
        CacheConfig(256, ways=3)
    st_ = CacheStats(10, 4)
    assert st_.misses == 6 and st_.hits + st_.misses == st_.accesses and st_.hit_rate == 0.4
    assert CacheStats(0, 0).hit_rate == 0.0


@settings(max_examples=40, deadline=None)
@given(lines=st.lists(st.integers(0, 40), max_size=400), cap=st.integers(1, 12))
def test_fully_associative_matches_oracle(lines, cap):
    A = SparseMatrix(len(lines), 41 * 4, 1, np.array(lines, dtype=np.int32).reshape(-1, 1) * 4)
    got = simulate_cache(A, CacheConfig(64 * cap))
    assert got.hits == oracles.lru_hits(lines, cap) and got.accesses == len(lines)


@settings(max_examples=40, deadline=None)
@given(lines=st.lists(st.integers(0, 63), max_size=400), sets=st.sampled_from([1, 2, 4]),
       ways=st.sampled_from([1, 2, 4]))
def test_set_associative_matches_oracle(lines, sets, ways):
    A = SparseMatrix(len(lines), 64 * 4, 1, np.array(lines, dtype=np.int32).reshape(-1, 1) * 4)
    got = simulate_cache(A, CacheConfig(64 * sets * ways, ways=ways))
    assert got.hits == oracles.setassoc_hits(lines, sets, ways)


def test_lru_stack_property():
    A = _matrix(1)
    rates = [simulate_cache(A, CacheConfig(c)).hits for c in (1 << 10, 1 << 12, 1 << 14, 1 << 16)]
    assert rates == sorted(rates)


def test_cold_misses_only_when_everything_fits():
    A = _matrix(2, k=400)
    s = simulate_cache(A, CacheConfig(400 * 16))
    assert s.misses == 100


def test_access_lines():
    assert access_lines(np.array([0, 3, 4, 9]), CacheConfig(1024)).tolist() == [0, 0, 1, 2]


def test_column_swap_fixed_point_and_bijection():
    A = SparseMatrix(3, 5, 2, np.array([[0, 1], [2, 1], [3, 0]], dtype=np.int32))
    perm, A2 = column_swap(A)
    assert perm.tolist() == [0, 1, 2, 3, 4] and (A2.colidx == A.colidx).all()
    B = _matrix(3)
    perm, B2 = column_swap(B)
    assert sorted(perm.tolist()) == list(range(B.k))
    assert (perm[B2.colidx] == B.colidx).all()
    # relabeled columns appear in first-occurrence order
    seen = []
    for c in B2.colidx.ravel().tolist():
        if c not in seen:
            seen.append(c)
    assert seen == list(range(len(seen)))


def test_column_swap_appends_unreferenced_columns():
    A = SparseMatrix(2, 6, 1, np.array([[4], [1]], dtype=np.int32))
    perm, _ = column_swap(A)
    assert perm.tolist() == [4, 1, 0, 2, 3, 5]


def test_window_one_is_row_major():
    A = _matrix(4)
    S = row_lookahead(A, 1, CacheConfig(1024))
    R = row_major(A)
    assert (S.colidx == R.colidx).all() and (S.rowidx == R.rowidx).all()


def _multiset(S):
    return Counter(zip(S.rowidx.tolist(), S.perm[S.colidx].tolist()))


@pytest.mark.parametrize("schedule", ["none", "swap", "swap+lookahead"])
def test_schedule_preserves_entries(schedule):
    A = _matrix(5)
    S = build_schedule(A, schedule, CacheConfig(4096), 16)
    want = Counter((i, c) for i, row in enumerate(A.colidx.tolist()) for c in row)
    assert _multiset(S) == want
    assert (np.bincount(S.rowidx, minlength=A.n) == A.d).all()


def test_lookahead_is_deterministic():
    A = _matrix(6)
    a = row_lookahead(A, 32, CacheConfig(2048))
    b = row_lookahead(A, 32, CacheConfig(2048))
    assert (a.colidx == b.colidx).all() and (a.rowidx == b.rowidx).all()


def test_lookahead_never_loses_to_row_major():
    rng = np.random.default_rng(5)
    for inst in range(100):
        n = int(rng.integers(20, 400))
        k = int(rng.integers(11, 200))
        d = int(rng.integers(1, 11))
        A = SparseMatrix(n, k, d, gen_rows(inst, n, k, d))
        cfg = CacheConfig(64 * int(rng.integers(1, 16)))
        perm, A2 = column_swap(A)
        base = simulate_cache(row_major(A2, perm), cfg).hits
        ahead = simulate_cache(row_lookahead(A2, int(rng.integers(1, 32)), cfg, perm), cfg).hits
        assert ahead >= base


def test_toy_lookahead_turns_a_miss_into_a_hit():
    # row 1's column 1 shares line 0 with row 0's column 0; row 0's far entry
    # (column 4) and row 1's column 8 would evict that line in row order
    A = SparseMatrix(2, 10, 2, np.array([[0, 4], [8, 1]], dtype=np.int32))
    plain = simulate_cache(row_major(A), TOY)
    ahead = row_lookahead(A, 2, TOY)
    assert ahead.colidx.tolist()[:2] == [0, 1]
    assert simulate_cache(ahead, TOY).hits == plain.hits + 1


def test_sorted_file_roundtrip(tmp_path):
    A = _matrix(7, n=300, k=90, d=5)
    cfg = CacheConfig(2048, ways=4)
    S = build_schedule(A, "swap+lookahead", cfg, 8)
    p = tmp_path / "s.irns"
    write_sorted(p, S, cfg)
    S2, cfg2 = read_sorted(p)
    assert cfg2 == cfg and S2.window == 8
    for f in ("perm", "colidx", "rowidx"):
        assert (getattr(S, f) == getattr(S2, f)).all()
    data = p.read_bytes()
    for bad in (data[:-1], b"XXXX" + data[4:], data[:10]):
        p.write_bytes(bad)
        with pytest.raises(FormatError):
            read_sorted(p)


def test_unknown_schedule_and_bad_window():
    A = _matrix(8, n=50, k=20, d=3)
    with pytest.raises(ConfigError):
        build_schedule(A, "sorted")
    with pytest.raises(ConfigError):
        row_lookahead(A, 0)


def test_stats_csv_columns():
    text = stats_csv([("toy", 1024, "swap", CacheStats(10, 3))])
    header, row = text.strip().split("\n")
    assert tuple(header.split(",")) == CSV_COLUMNS
    assert row == "toy,1024,swap,10,3,0.300000"
