"""Fixed-row-weight sparse LPN matrices over GF(2) and the local encodes.

``A`` has ``n`` rows and ``k`` columns with exactly ``d`` distinct column
indices per row.  Encoding a length-k vector gives one output per row:
``out[i] = addend[i] ^ XOR_{j in row i} vec[j]``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import xor_scatter
from .errors import ConfigError, FormatError
from .prg import stream_words

MATRIX_MAGIC = b"IRNA"
MATRIX_VERSION = 1
_ROW_CHUNK = 1 << 18


@dataclass(frozen=True)
class LpnParams:
    n: int
    k: int
    t: int
    ell: int
    d: int = 10

    def __post_init__(self) -> None:
        for name in ("n", "k", "t", "ell", "d"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.k >= self.n:
            raise ConfigError(f"k={self.k} must be smaller than n={self.n}")
        if self.t > self.n:
            raise ConfigError(f"t={self.t} exceeds n={self.n}")

    @property
    def covers(self) -> bool:
        """Whether ``t`` trees of ``ell`` leaves cover all ``n`` positions."""
        return self.t * self.ell >= self.n


@dataclass
class SparseMatrix:
    n: int
    k: int
    d: int
    colidx: np.ndarray  # (n, d) int32
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.colidx.shape != (self.n, self.d):
            raise ConfigError(f"colidx shape {self.colidx.shape} != ({self.n}, {self.d})")

    def row(self, i: int) -> list[int]:
        return self.colidx[i].tolist()

    def digest(self) -> bytes:
        h = hashlib.sha256(struct.pack("<QQH", self.n, self.k, self.d))
        h.update(np.ascontiguousarray(self.colidx, dtype="<u4").tobytes())
        return h.digest()


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def _row_words(seed: int, start_word: int, count: int) -> np.ndarray:
    first = start_word // 16
    last = -(-(start_word + count) // 16)
    words = stream_words(seed, first, last - first, 0).reshape(-1)
    off = start_word - first * 16
    return words[off:off + count]


def _resample_row(seed: int, row: int, values: list[int], k: int) -> list[int]:
    """Keep first occurrences; refill duplicates from the row's own stream."""
    seen: set[int] = set()
    out: list[int] = []
    for v in values:
        out.append(-1 if v in seen else v)
        seen.add(v)
    block = 0
    words: list[int] = []
    for pos, v in enumerate(out):
        while v < 0:
            if not words:
                words = stream_words(seed, block, 1, row + 1).reshape(-1).tolist()
                block += 1
            cand = (words.pop(0) * k) >> 32
            if cand not in seen:
                v = cand
                seen.add(cand)
        out[pos] = v
    return out


def gen_rows(seed: int, n: int, k: int, d: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Rows ``[start, stop)`` of the matrix generated from ``seed``, shape ``(rows, d)``.

    Row ``r`` reads words ``r*d .. r*d+d-1`` of the main stream, so any row range
    can be produced without generating the rows before it.
    """
    if d > k:
        raise ConfigError(f"row weight d={d} exceeds k={k}")
    stop = n if stop is None else stop
    if not 0 <= start <= stop <= n:
        raise ConfigError(f"row range [{start}, {stop}) outside [0, {n})")
    out = np.empty((stop - start, d), dtype=np.int32)
    for lo in range(start, stop, _ROW_CHUNK):
        hi = min(stop, lo + _ROW_CHUNK)
        words = _row_words(seed, lo * d, (hi - lo) * d).astype(np.uint64)
        idx = ((words * np.uint64(k)) >> np.uint64(32)).astype(np.int32).reshape(hi - lo, d)
        srt = np.sort(idx, axis=1)
        dup_rows = np.nonzero((srt[:, 1:] == srt[:, :-1]).any(axis=1))[0]
        for r in dup_rows:
            idx[r] = _resample_row(seed, lo + int(r), idx[r].tolist(), k)
        out[lo - start:hi - start] = idx
    return out


def gen_matrix(seed: int, params: LpnParams) -> SparseMatrix:
    return SparseMatrix(params.n, params.k, params.d, gen_rows(seed, params.n, params.k, params.d), seed)


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def _check_dims(A: SparseMatrix, vec: np.ndarray, addend: np.ndarray) -> None:
    if vec.shape[0] != A.k:
        raise ConfigError(f"vector length {vec.shape[0]} != k={A.k}")
    if addend.shape[0] != A.n:
        raise ConfigError(f"addend length {addend.shape[0]} != n={A.n}")


def encode_blocks(A: SparseMatrix, vec: np.ndarray, addend: np.ndarray) -> np.ndarray:
    """``addend ^ A*vec`` over 128-bit blocks; ``vec`` is ``(k, 2)``, ``addend`` ``(n, 2)``."""
    _check_dims(A, vec, addend)
    out = np.array(addend, dtype=np.uint64, copy=True)
    for lo in range(0, A.n, _ROW_CHUNK):
        hi = min(A.n, lo + _ROW_CHUNK)
        cols = A.colidx[lo:hi]
        acc = out[lo:hi]
        for j in range(A.d):
            acc ^= vec[cols[:, j]]
    return out


def encode_bits(A: SparseMatrix, bits: np.ndarray, addend: np.ndarray) -> np.ndarray:
    """Bitwise analogue of :func:`encode_blocks` on uint8 0/1 vectors."""
    _check_dims(A, bits, addend)
    bits = np.asarray(bits, dtype=np.uint8)
    out = np.array(addend, dtype=np.uint8, copy=True)
    for j in range(A.d):
        out ^= bits[A.colidx[:, j]]
    return out


def encode_sorted(S, vec: np.ndarray, addend: np.ndarray) -> np.ndarray:
    """Encode with a scheduled entry list (``S.colidx``, ``S.rowidx``).

    ``vec`` must already be permuted so that ``vec[j]`` holds the original
    column ``S.perm[j]``.
    """
    colidx = np.asarray(S.colidx)
    rowidx = np.asarray(S.rowidx)
    if colidx.shape != rowidx.shape:
        raise ConfigError("colidx and rowidx lengths differ")
    if vec.shape[0] != S.k or addend.shape[0] != S.n:
        raise ConfigError("vector or addend length does not match the sorted matrix")
    out = np.array(addend, dtype=np.uint64, copy=True)
    xor_scatter(out, np.ascontiguousarray(vec, dtype=np.uint64), colidx, rowidx)
    return out


def encode_sorted_bits(S, bits: np.ndarray, addend: np.ndarray) -> np.ndarray:
    """Bitwise analogue of :func:`encode_sorted`; ``bits`` already permuted."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape[0] != S.k or addend.shape[0] != S.n:
        raise ConfigError("vector or addend length does not match the sorted matrix")
    out = np.array(addend, dtype=np.uint8, copy=True)
    np.bitwise_xor.at(out, np.asarray(S.rowidx), bits[np.asarray(S.colidx)])
    return out


# ---------------------------------------------------------------------------
# Matrix file
# ---------------------------------------------------------------------------

_HDR = struct.Struct("<4sHQQH")


def write_matrix(path: str | Path, A: SparseMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(_HDR.pack(MATRIX_MAGIC, MATRIX_VERSION, A.n, A.k, A.d))
        fh.write(np.ascontiguousarray(A.colidx, dtype="<u4").tobytes())


def read_matrix(path: str | Path) -> SparseMatrix:
    data = Path(path).read_bytes()
    if len(data) < _HDR.size:
        raise FormatError("matrix file truncated")
    magic, version, n, k, d = _HDR.unpack_from(data)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MATRIX_MAGIC!r}")
    if version != MATRIX_VERSION:
        raise FormatError(f"unsupported matrix file version {version}")
    if len(data) != _HDR.size + 4 * n * d:
        raise FormatError(f"matrix file length {len(data)} does not match n={n}, d={d}")
    colidx = np.frombuffer(data, dtype="<u4", offset=_HDR.size).astype(np.int32).reshape(n, d)
    if colidx.size and int(colidx.max()) >= k:
        raise FormatError("column index out of range")
    return SparseMatrix(n, k, d, colidx)
