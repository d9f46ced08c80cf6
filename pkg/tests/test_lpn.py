import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pcgot.base import dealer_generate, scale_delta
from pcgot.errors import ConfigError, FormatError
from pcgot.locality import build_schedule, column_swap, permute_vector
from pcgot.lpn import (
    LpnParams,
    SparseMatrix,
    encode_bits,
    encode_blocks,
    encode_sorted,
    encode_sorted_bits,
    gen_matrix,
    gen_rows,
    read_matrix,
    write_matrix,
)
from pcgot.prg import blocks_from_ints, blocks_to_ints, derive_blocks


def _rand_blocks(rng, n):
    return rng.integers(0, 1 << 63, size=(n, 2), dtype=np.int64).astype(np.uint64) * np.uint64(3)


def _chi2_sf(x, df):
    """Upper tail of a chi-square via the Wilson-Hilferty normal approximation."""
    z = ((x / df) ** (1 / 3) - (1 - 2 / (9 * df))) / math.sqrt(2 / (9 * df))
    return 0.5 * math.erfc(z / math.sqrt(2))


def test_params_validation():
    with pytest.raises(ConfigError):
        LpnParams(100, 100, 4, 32)
    with pytest.raises(ConfigError):
        LpnParams(100, 10, 101, 32)
    with pytest.raises(ConfigError):
        LpnParams(100, 10, 4, 0)
    assert LpnParams(100, 10, 4, 32).covers and not LpnParams(100, 10, 3, 32).covers


def test_rows_have_exactly_d_distinct_indices():
    A = gen_matrix(7, LpnParams(5000, 40, 10, 512, d=10))
    assert A.colidx.min() >= 0 and A.colidx.max() < 40
    assert all(len(set(r)) == 10 for r in A.colidx.tolist())


def test_full_weight_rows_are_permutations():
    rows = gen_rows(3, 50, 8, 8)
    assert all(sorted(r) == list(range(8)) for r in rows.tolist())


def test_generation_is_deterministic_and_seekable():
    a = gen_rows(9, 3000, 100, 10)
    assert (a == gen_rows(9, 3000, 100, 10)).all()
    assert (a[1234:2001] == gen_rows(9, 3000, 100, 10, 1234, 2001)).all()
    assert not (a == gen_rows(10, 3000, 100, 10)).all()


def test_generation_errors():
    with pytest.raises(ConfigError):
        gen_rows(1, 10, 4, 5)
    with pytest.raises(ConfigError):
        gen_rows(1, 10, 4, 2, 5, 11)


def test_column_occupancy_is_uniform():
    A = gen_matrix(2024, LpnParams(10_000, 1000, 10, 1024, d=10))
    occ = np.bincount(A.colidx.ravel(), minlength=1000)
    assert occ.mean() == 100
    chi2 = float(((occ - 100) ** 2 / 100).sum())
    assert _chi2_sf(chi2, 999) > 0.01


def test_one_row_definition():
    A = SparseMatrix(1, 4, 2, np.array([[0, 2]], dtype=np.int32))
    a, b, c, e, w = 0x11, 0x22, 0x44, 0x88, 0x1000
    out = encode_blocks(A, blocks_from_ints([a, b, c, e]), blocks_from_ints([w]))
    assert blocks_to_ints(out) == [a ^ c ^ w]


def test_zero_inputs_give_zero():
    A = gen_matrix(1, LpnParams(64, 16, 4, 16, d=4))
    assert not encode_blocks(A, np.zeros((16, 2), np.uint64), np.zeros((64, 2), np.uint64)).any()
    assert not encode_bits(A, np.zeros(16, np.uint8), np.zeros(64, np.uint8)).any()


def test_unit_vector_bits():
    A = gen_matrix(4, LpnParams(64, 16, 4, 16, d=4))
    addend = np.random.default_rng(0).integers(0, 2, 64).astype(np.uint8)
    for j in range(16):
        e = np.zeros(16, np.uint8)
        e[j] = 1
        want = addend ^ np.array([j in r for r in A.colidx.tolist()], dtype=np.uint8)
        assert (encode_bits(A, e, addend) == want).all()


def test_dense_oracle_hundred_instances():
    rng = np.random.default_rng(12)
    for inst in range(100):
        n = int(rng.integers(2, 40))
        k = int(rng.integers(1, min(n, 24)))
        d = int(rng.integers(1, k + 1))
        A = gen_matrix(inst, LpnParams(n, k, 1, n, d=d))
        vec, addend = _rand_blocks(rng, k), _rand_blocks(rng, n)
        rows = A.colidx.tolist()
        assert blocks_to_ints(encode_blocks(A, vec, addend)) == \
            oracles.dense_encode_blocks(rows, k, blocks_to_ints(vec), blocks_to_ints(addend))
        bits = rng.integers(0, 2, k).astype(np.uint8)
        badd = rng.integers(0, 2, n).astype(np.uint8)
        assert encode_bits(A, bits, badd).tolist() == \
            oracles.dense_encode_bits(rows, k, bits.tolist(), badd.tolist())


def test_dense_oracle_at_larger_size():
    rng = np.random.default_rng(3)
    A = gen_matrix(5, LpnParams(512, 300, 1, 512, d=10))
    vec, addend = _rand_blocks(rng, 300), _rand_blocks(rng, 512)
    rows = A.colidx.tolist()
    bits = rng.integers(0, 2, 300).astype(np.uint8)
    badd = rng.integers(0, 2, 512).astype(np.uint8)
    assert encode_bits(A, bits, badd).tolist() == oracles.dense_encode_bits(rows, 300, bits.tolist(),
                                                                              badd.tolist())
    got = blocks_to_ints(encode_blocks(A, vec, addend))
    assert got[:64] == oracles.dense_encode_blocks(rows[:64], 300, blocks_to_ints(vec),
                                                   blocks_to_ints(addend)[:64])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(2, 200), data=st.data())
def test_linearity(seed, n, data):
    k = data.draw(st.integers(1, n - 1))
    d = data.draw(st.integers(1, min(k, 10)))
    A = gen_matrix(seed, LpnParams(n, k, 1, n, d=d))
    v1, v2 = derive_blocks(seed, k, 1), derive_blocks(seed, k, 2)
    z = np.zeros((n, 2), np.uint64)
    assert (encode_blocks(A, v1 ^ v2, z) == encode_blocks(A, v1, z) ^ encode_blocks(A, v2, z)).all()


def test_correlation_preserved_through_encode():
    delta = 0x1234_5678_9ABC_DEF0_0FED_CBA9_8765_4321
    A = gen_matrix(8, LpnParams(300, 50, 1, 300, d=10))
    s_k, r_k = dealer_generate(50, delta, 1)
    s_n, r_n = dealer_generate(300, delta, 2)
    z = encode_blocks(A, s_k.blocks, s_n.blocks)
    x = encode_bits(A, r_k.bits, r_n.bits)
    y = encode_blocks(A, r_k.blocks, r_n.blocks)
    assert (y == z ^ scale_delta(x, delta)).all()


def test_dimension_mismatch():
    A = gen_matrix(1, LpnParams(64, 16, 4, 16, d=4))
    with pytest.raises(ConfigError):
        encode_blocks(A, np.zeros((15, 2), np.uint64), np.zeros((64, 2), np.uint64))
    with pytest.raises(ConfigError):
        encode_bits(A, np.zeros(16, np.uint8), np.zeros(63, np.uint8))


@pytest.mark.parametrize("schedule", ["none", "swap", "swap+lookahead"])
def test_sorted_encode_matches_unsorted(schedule):
    rng = np.random.default_rng(99)
    for inst in range(34):
        n = int(rng.integers(2, 4097))
        k = int(rng.integers(1, min(n, 4096)))
        d = int(rng.integers(1, min(k, 10) + 1))
        A = gen_matrix(inst, LpnParams(n, k, 1, n, d=d))
        S = build_schedule(A, schedule, window_rows=int(rng.integers(1, 80)))
        vec, addend = _rand_blocks(rng, k), _rand_blocks(rng, n)
        assert (encode_sorted(S, permute_vector(vec, S.perm), addend) == encode_blocks(A, vec, addend)).all()


def test_toy_column_reordering_keeps_row_xors():
    # columns A..F; first-occurrence order of this instance is C, E, B, F, D, A
    A = SparseMatrix(4, 6, 2, np.array([[2, 4], [1, 4], [5, 3], [3, 0]], dtype=np.int32))
    perm, A2 = column_swap(A)
    assert perm.tolist() == [2, 4, 1, 5, 3, 0]
    vec = derive_blocks(1, 6, 0)
    addend = derive_blocks(2, 4, 0)
    assert (encode_blocks(A2, permute_vector(vec, perm), addend) == encode_blocks(A, vec, addend)).all()
    S = build_schedule(A, "swap")
    assert (encode_sorted(S, permute_vector(vec, S.perm), addend) == encode_blocks(A, vec, addend)).all()


def test_matrix_file_roundtrip(tmp_path):
    A = gen_matrix(3, LpnParams(100, 20, 2, 64, d=5))
    p = tmp_path / "a.irna"
    write_matrix(p, A)
    B = read_matrix(p)
    assert (A.n, A.k, A.d) == (B.n, B.k, B.d) and (A.colidx == B.colidx).all()
    assert A.digest() == B.digest()
    data = p.read_bytes()
    for bad in (data[:-4], b"NOPE" + data[4:], data[:5]):
        p.write_bytes(bad)
        with pytest.raises(FormatError):
            read_matrix(p)


def test_fast_dense_oracle_agrees_with_slow_one():
    rng = np.random.default_rng(4)
    A = gen_matrix(1, LpnParams(30, 12, 1, 30, d=3))
    vec, addend = blocks_to_ints(_rand_blocks(rng, 12)), blocks_to_ints(_rand_blocks(rng, 30))
    rows = A.colidx.tolist()
    assert oracles.dense_encode_blocks_fast(rows, 12, vec, addend) == \
        oracles.dense_encode_blocks(rows, 12, vec, addend)


@pytest.mark.parametrize("schedule", ["none", "swap", "swap+lookahead"])
def test_sorted_bit_encode_matches_unsorted(schedule):
    rng = np.random.default_rng(6)
    for inst in range(10):
        A = gen_matrix(inst, LpnParams(700, 300, 1, 700, d=10))
        S = build_schedule(A, schedule, window_rows=16)
        bits = rng.integers(0, 2, 300).astype(np.uint8)
        addend = rng.integers(0, 2, 700).astype(np.uint8)
        assert (encode_sorted_bits(S, bits[S.perm], addend) == encode_bits(A, bits, addend)).all()
    with pytest.raises(ConfigError):
        encode_sorted_bits(S, bits[:-1], addend)
