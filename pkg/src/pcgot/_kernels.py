"""numba kernels for the hot loops: scatter-XOR, LRU simulation, look-ahead scheduling."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def xor_scatter(out, vec, colidx, rowidx):
    for e in range(colidx.shape[0]):
        r = rowidx[e]
        c = colidx[e]
        out[r, 0] ^= vec[c, 0]
        out[r, 1] ^= vec[c, 1]


# ---------------------------------------------------------------------------
# Fully associative LRU as an intrusive doubly linked list over line ids.
# Slot ``nlines`` is the sentinel; ``state[0]`` is the resident count.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _lru_init(nlines):
    prev = np.empty(nlines + 1, dtype=np.int64)
    nxt = np.empty(nlines + 1, dtype=np.int64)
    resident = np.zeros(nlines + 1, dtype=np.bool_)
    prev[nlines] = nlines
    nxt[nlines] = nlines
    state = np.zeros(1, dtype=np.int64)
    return prev, nxt, resident, state


@njit(cache=True)
def _lru_access(line, cap, prev, nxt, resident, state):
    s = prev.shape[0] - 1
    if resident[line]:
        p = prev[line]
        q = nxt[line]
        nxt[p] = q
        prev[q] = p
        hit = True
    else:
        if state[0] == cap:
            victim = prev[s]
            p = prev[victim]
            nxt[p] = s
            prev[s] = p
            resident[victim] = False
        else:
            state[0] += 1
        resident[line] = True
        hit = False
    first = nxt[s]
    nxt[line] = first
    prev[first] = line
    prev[line] = s
    nxt[s] = line
    return hit


@njit(cache=True)
def _lru_clear(prev, nxt, resident, state):
    s = prev.shape[0] - 1
    node = nxt[s]
    while node != s:
        resident[node] = False
        node = nxt[node]
    prev[s] = s
    nxt[s] = s
    state[0] = 0


@njit(cache=True)
def lru_hits(lines, cap, nlines):
    """Hit count of a fully associative LRU cache holding ``cap`` lines."""
    prev, nxt, resident, state = _lru_init(nlines)
    hits = 0
    for i in range(lines.shape[0]):
        if _lru_access(lines[i], cap, prev, nxt, resident, state):
            hits += 1
    return hits


@njit(cache=True)
def setassoc_hits(lines, nsets, ways):
    """Hit count of an LRU set-associative cache (set = line mod nsets)."""
    tags = np.full((nsets, ways), -1, dtype=np.int64)
    stamp = np.zeros((nsets, ways), dtype=np.int64)
    hits = 0
    for i in range(lines.shape[0]):
        line = lines[i]
        s = line % nsets
        slot = -1
        oldest = 0
        for w in range(ways):
            if tags[s, w] == line:
                slot = w
                break
        if slot >= 0:
            hits += 1
        else:
            slot = 0
            oldest = stamp[s, 0]
            for w in range(ways):
                if tags[s, w] < 0:
                    slot = w
                    break
                if stamp[s, w] < oldest:
                    oldest = stamp[s, w]
                    slot = w
            tags[s, slot] = line
        stamp[s, slot] = i + 1
    return hits


# ---------------------------------------------------------------------------
# Row look-ahead scheduling
# ---------------------------------------------------------------------------


@njit(cache=True)
def lookahead_order(cols, n, d, window, cap, elems_per_line, nlines, block_rows):
    """Entry order (flat ``row*d + j`` ids) for the look-ahead schedule.

    Rows are processed in order.  When row ``r`` enters the window (at the
    time row ``r - window + 1`` is current) its entries on resident lines are
    issued at once and the rest wait on per-line queues.  Each access of the
    current row then also issues every queued entry on the same line.
    """
    total = n * d
    order = np.empty(total, dtype=np.int64)
    done = np.zeros(total, dtype=np.bool_)
    head = np.full(nlines, -1, dtype=np.int64)
    tail = np.full(nlines, -1, dtype=np.int64)
    link = np.full(total, -1, dtype=np.int64)
    prev, nxt, resident, state = _lru_init(nlines)
    pos = 0
    for b0 in range(0, n, block_rows):
        b1 = min(n, b0 + block_rows)
        _lru_clear(prev, nxt, resident, state)
        for r in range(b0 + 1, min(b1, b0 + window)):
            for j in range(d):
                e = r * d + j
                line = cols[e] // elems_per_line
                if resident[line]:
                    _lru_access(line, cap, prev, nxt, resident, state)
                    done[e] = True
                    order[pos] = e
                    pos += 1
                else:
                    if tail[line] < 0:
                        head[line] = e
                    else:
                        link[tail[line]] = e
                    tail[line] = e
        for cur in range(b0, b1):
            if cur > b0:
                r = cur + window - 1
                if r < b1 and window > 1:
                    for j in range(d):
                        e = r * d + j
                        line = cols[e] // elems_per_line
                        if resident[line]:
                            _lru_access(line, cap, prev, nxt, resident, state)
                            done[e] = True
                            order[pos] = e
                            pos += 1
                        else:
                            if tail[line] < 0:
                                head[line] = e
                            else:
                                link[tail[line]] = e
                            tail[line] = e
            for j in range(d):
                e = cur * d + j
                if done[e]:
                    continue
                line = cols[e] // elems_per_line
                _lru_access(line, cap, prev, nxt, resident, state)
                done[e] = True
                order[pos] = e
                pos += 1
                q = head[line]
                while q >= 0:
                    if not done[q]:
                        _lru_access(line, cap, prev, nxt, resident, state)
                        done[q] = True
                        order[pos] = q
                        pos += 1
                    q = link[q]
                head[line] = -1
                tail[line] = -1
    return order


@njit(cache=True)
def first_occurrence_perm(flat, k):
    """Columns in order of first appearance, then unreferenced ones ascending."""
    inv = np.full(k, -1, dtype=np.int64)
    perm = np.empty(k, dtype=np.int64)
    nxt = 0
    for e in range(flat.shape[0]):
        c = flat[e]
        if inv[c] < 0:
            inv[c] = nxt
            perm[nxt] = c
            nxt += 1
    for c in range(k):
        if inv[c] < 0:
            inv[c] = nxt
            perm[nxt] = c
            nxt += 1
    return perm, inv
