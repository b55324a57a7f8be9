"""HNSW graph index over unit vectors.

The graph lives in flat numpy arrays so the insertion and search loops can be
compiled with numba. Similarity is the dot product of unit vectors; the graph
works on distance ``1 - dot``.

Layer 0 adjacency is a ``(capacity, 2*M)`` table. Nodes with level >= 1 own
``level`` consecutive rows in a second ``(rows, M)`` table, addressed through
``upper_start``.
"""

from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..errors import ConflictError, ContractError, NotFoundError

MAX_LEVEL = 16
COMPACT_FRACTION = 0.2


@dataclass(frozen=True)
class HnswParams:
    max_links: int = 16
    ef_construction: int = 200
    ef_search: int = 100
    level_seed: int = 0x5EED

    def __post_init__(self) -> None:
        if self.max_links < 2:
            raise ContractError("max_links must be >= 2")
        if self.ef_construction < 1 or self.ef_search < 1:
            raise ContractError("ef values must be positive")


def assign_level(search_id: str, max_links: int, seed: int) -> int:
    """Deterministic HNSW level from a keyed hash of the id."""
    digest = hashlib.blake2b(
        search_id.encode("utf-8"), digest_size=8, key=seed.to_bytes(8, "little")
    ).digest()
    # map to (0, 1]; a zero draw would give an infinite level
    u = (int.from_bytes(digest, "little") + 1) / 2.0**64
    level = int(-math.log(u) / math.log(max_links))
    return min(level, MAX_LEVEL)


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True, fastmath=True)
def _dist(vecs, a, q):
    acc = np.float32(0.0)
    row = vecs[a]
    for i in range(row.shape[0]):
        acc += row[i] * q[i]
    return 1.0 - np.float64(acc)


@njit(cache=True, fastmath=True)
def _dist_nodes(vecs, a, b):
    acc = np.float32(0.0)
    ra = vecs[a]
    rb = vecs[b]
    for i in range(ra.shape[0]):
        acc += ra[i] * rb[i]
    return 1.0 - np.float64(acc)


@njit(cache=True)
def _order(d, ids):
    # ascending by distance, then node id
    by_id = np.argsort(ids)
    return by_id[np.argsort(d[by_id], kind="mergesort")]


@njit(cache=True)
def _neighbors(node, layer, nbr0, cnt0, upper_start, upper, upper_cnt):
    if layer == 0:
        return nbr0[node, : cnt0[node]]
    row = upper_start[node] + layer - 1
    return upper[row, : upper_cnt[row]]


@njit(cache=True)
def _set_neighbors(node, layer, ids, n, nbr0, cnt0, upper_start, upper, upper_cnt):
    if layer == 0:
        for i in range(n):
            nbr0[node, i] = ids[i]
        cnt0[node] = n
    else:
        row = upper_start[node] + layer - 1
        for i in range(n):
            upper[row, i] = ids[i]
        upper_cnt[row] = n


@njit(cache=True)
def _greedy(q, ep, layer, vecs, nbr0, cnt0, upper_start, upper, upper_cnt):
    cur = ep
    cur_d = _dist(vecs, cur, q)
    changed = True
    while changed:
        changed = False
        for e in _neighbors(cur, layer, nbr0, cnt0, upper_start, upper, upper_cnt):
            d = _dist(vecs, e, q)
            if d < cur_d or (d == cur_d and e < cur):
                cur_d = d
                cur = e
                changed = True
    return cur


@njit(cache=True)
def _search_layer(q, ep, ef, layer, vecs, nbr0, cnt0, upper_start, upper,
                  upper_cnt, deleted, visited, stamp, skip_deleted):
    """Beam search on one layer. Returns (dists, ids) sorted ascending.

    With ``skip_deleted`` tombstoned nodes are traversed but never admitted to
    the result set.
    """
    d0 = _dist(vecs, ep, q)
    visited[ep] = stamp
    cand = [(d0, ep)]
    res = [(-d0, ep)]
    res.pop()
    if not (skip_deleted and deleted[ep]):
        res.append((-d0, ep))
    while len(cand) > 0:
        d, c = heapq.heappop(cand)
        if len(res) >= ef and d > -res[0][0]:
            break
        for e in _neighbors(c, layer, nbr0, cnt0, upper_start, upper, upper_cnt):
            if visited[e] == stamp:
                continue
            visited[e] = stamp
            de = _dist(vecs, e, q)
            if len(res) < ef or de < -res[0][0]:
                heapq.heappush(cand, (de, e))
                if not (skip_deleted and deleted[e]):
                    heapq.heappush(res, (-de, e))
                    if len(res) > ef:
                        heapq.heappop(res)
    n = len(res)
    out_d = np.empty(n, dtype=np.float64)
    out_i = np.empty(n, dtype=np.int64)
    for i in range(n):
        out_d[i] = -res[i][0]
        out_i[i] = res[i][1]
    order = _order(out_d, out_i)
    return out_d[order], out_i[order]


@njit(cache=True)
def _select(cand_d, cand_i, m, vecs):
    """Neighbour-selection heuristic: keep a candidate only if it is closer to
    the base point than to every neighbour already kept."""
    keep = np.empty(m, dtype=np.int64)
    n = 0
    for j in range(cand_i.shape[0]):
        if n >= m:
            break
        c = cand_i[j]
        good = True
        for t in range(n):
            if _dist_nodes(vecs, c, keep[t]) < cand_d[j]:
                good = False
                break
        if good:
            keep[n] = c
            n += 1
    return keep[:n]


@njit(cache=True)
def _insert(node, entry, max_level, levels, vecs, nbr0, cnt0, upper_start, upper,
            upper_cnt, deleted, visited, stamp, m, ef_c):
    level = levels[node]
    if entry < 0:
        return node, level, stamp
    q = vecs[node]
    ep = entry
    for layer in range(max_level, level, -1):
        ep = _greedy(q, ep, layer, vecs, nbr0, cnt0, upper_start, upper, upper_cnt)
    top = min(level, max_level)
    for layer in range(top, -1, -1):
        stamp += 1
        cd, ci = _search_layer(q, ep, ef_c, layer, vecs, nbr0, cnt0, upper_start,
                               upper, upper_cnt, deleted, visited, stamp, False)
        chosen = _select(cd, ci, m, vecs)
        _set_neighbors(node, layer, chosen, chosen.shape[0], nbr0, cnt0,
                       upper_start, upper, upper_cnt)
        mmax = 2 * m if layer == 0 else m
        for e in chosen:
            cur = _neighbors(e, layer, nbr0, cnt0, upper_start, upper, upper_cnt)
            k = cur.shape[0]
            if k < mmax:
                buf = np.empty(k + 1, dtype=np.int64)
                buf[:k] = cur
                buf[k] = node
                _set_neighbors(e, layer, buf, k + 1, nbr0, cnt0, upper_start,
                               upper, upper_cnt)
            else:
                pool_i = np.empty(k + 1, dtype=np.int64)
                pool_d = np.empty(k + 1, dtype=np.float64)
                for t in range(k):
                    pool_i[t] = cur[t]
                    pool_d[t] = _dist_nodes(vecs, e, cur[t])
                pool_i[k] = node
                pool_d[k] = _dist_nodes(vecs, e, node)
                order = _order(pool_d, pool_i)
                kept = _select(pool_d[order], pool_i[order], mmax, vecs)
                _set_neighbors(e, layer, kept, kept.shape[0], nbr0, cnt0,
                               upper_start, upper, upper_cnt)
        ep = ci[0]
    if level > max_level:
        return node, level, stamp
    return entry, max_level, stamp


@njit(cache=True)
def _insert_range(start, stop, entry, max_level, levels, vecs, nbr0, cnt0,
                  upper_start, upper, upper_cnt, deleted, visited, stamp, m, ef_c):
    for node in range(start, stop):
        entry, max_level, stamp = _insert(
            node, entry, max_level, levels, vecs, nbr0, cnt0, upper_start, upper,
            upper_cnt, deleted, visited, stamp, m, ef_c)
    return entry, max_level, stamp


@njit(cache=True)
def _knn(q, ef, entry, max_level, vecs, nbr0, cnt0, upper_start, upper,
         upper_cnt, deleted, visited, stamp):
    ep = entry
    for layer in range(max_level, 0, -1):
        ep = _greedy(q, ep, layer, vecs, nbr0, cnt0, upper_start, upper, upper_cnt)
    return _search_layer(q, ep, ef, 0, vecs, nbr0, cnt0, upper_start, upper,
                         upper_cnt, deleted, visited, stamp + 1, True)


# ---------------------------------------------------------------------------


class HnswIndex:
    """Hierarchical navigable small-world graph with tombstone deletes.

    Slots are append-only. Removing an id tombstones its slot; re-inserting the
    id takes a fresh slot. Once more than ``COMPACT_FRACTION`` of the slots are
    tombstoned the graph is rebuilt from the live entries in slot order.
    """

    backend = "hnsw"

    def __init__(self, dim: int, params: HnswParams | None = None,
                 capacity: int = 1024) -> None:
        if dim < 1:
            raise ContractError("dim must be positive")
        self.dim = dim
        self.params = params or HnswParams()
        self.ids: list[str] = []
        self.slot_of: dict[str, int] = {}
        self.entry = -1
        self.max_level = -1
        self._stamp = 0
        self._alloc(max(capacity, 16))
        self._upper_rows = 0

    # -- storage ---------------------------------------------------------

    def _alloc(self, cap: int) -> None:
        m = self.params.max_links
        self.vecs = np.zeros((cap, self.dim), dtype=np.float32)
        self.levels = np.zeros(cap, dtype=np.int32)
        self.nbr0 = np.full((cap, 2 * m), -1, dtype=np.int64)
        self.cnt0 = np.zeros(cap, dtype=np.int32)
        self.upper_start = np.full(cap, -1, dtype=np.int64)
        self.upper = np.full((max(cap // 4, 16), m), -1, dtype=np.int64)
        self.upper_cnt = np.zeros(self.upper.shape[0], dtype=np.int32)
        self.deleted = np.zeros(cap, dtype=np.bool_)
        self.visited = np.zeros(cap, dtype=np.int64)

    def _grow(self, need_slots: int, need_rows: int) -> None:
        cap = self.vecs.shape[0]
        if need_slots > cap:
            new = max(need_slots, 2 * cap)
            self.vecs = _resize(self.vecs, new, 0)
            self.levels = _resize(self.levels, new, 0)
            self.nbr0 = _resize(self.nbr0, new, -1)
            self.cnt0 = _resize(self.cnt0, new, 0)
            self.upper_start = _resize(self.upper_start, new, -1)
            self.deleted = _resize(self.deleted, new, False)
            self.visited = np.zeros(new, dtype=np.int64)
            self._stamp = 0
        rows = self.upper.shape[0]
        if need_rows > rows:
            new = max(need_rows, 2 * rows)
            self.upper = _resize(self.upper, new, -1)
            self.upper_cnt = _resize(self.upper_cnt, new, 0)

    def _stage(self, search_id: str, vector: np.ndarray) -> int:
        """Place a vector in a fresh slot without linking it."""
        v = np.asarray(vector, dtype=np.float32).reshape(-1)
        if v.shape[0] != self.dim:
            raise ContractError(f"vector dim {v.shape[0]} != index dim {self.dim}")
        live = self.slot_of.get(search_id)
        if live is not None:
            raise ConflictError(f"duplicate live id {search_id!r}")
        level = assign_level(search_id, self.params.max_links, self.params.level_seed)
        slot = len(self.ids)
        self._grow(slot + 1, self._upper_rows + level)
        self.vecs[slot] = _unit(v)
        self.levels[slot] = level
        if level > 0:
            self.upper_start[slot] = self._upper_rows
            self._upper_rows += level
        self.ids.append(search_id)
        self.slot_of[search_id] = slot
        return slot

    def _link(self, start: int, stop: int) -> None:
        if start >= stop:
            return
        self.entry, self.max_level, self._stamp = _insert_range(
            start, stop, self.entry, self.max_level, self.levels, self.vecs,
            self.nbr0, self.cnt0, self.upper_start, self.upper, self.upper_cnt,
            self.deleted, self.visited, self._stamp, self.params.max_links,
            self.params.ef_construction)

    # -- public operations ----------------------------------------------

    def add_many(self, items) -> None:
        """Insert ``(search_id, vector)`` pairs in order."""
        start = len(self.ids)
        for search_id, vector in items:
            self._stage(search_id, vector)
        self._link(start, len(self.ids))

    def insert(self, search_id: str, vector: np.ndarray) -> None:
        slot = self._stage(search_id, vector)
        self._link(slot, slot + 1)

    def remove(self, search_id: str) -> None:
        slot = self.slot_of.pop(search_id, None)
        if slot is None:
            raise NotFoundError(search_id)
        self.deleted[slot] = True
        if self.tombstone_fraction() > COMPACT_FRACTION:
            self.compact()

    def __len__(self) -> int:
        return len(self.slot_of)

    def __contains__(self, search_id: str) -> bool:
        return search_id in self.slot_of

    def tombstone_fraction(self) -> float:
        total = len(self.ids)
        return 0.0 if total == 0 else (total - len(self.slot_of)) / total

    def live_items(self):
        """Live ``(search_id, vector)`` pairs in slot order."""
        for slot, search_id in enumerate(self.ids):
            if not self.deleted[slot]:
                yield search_id, self.vecs[slot]

    def vector(self, search_id: str) -> np.ndarray:
        return self.vecs[self.slot_of[search_id]].copy()

    def compact(self) -> None:
        live = [(sid, v.copy()) for sid, v in self.live_items()]
        fresh = HnswIndex(self.dim, self.params, capacity=max(len(live), 16))
        fresh.add_many(live)
        self.__dict__.update(fresh.__dict__)

    def query(self, q: np.ndarray, k: int):
        """Top-``k`` live entries as ``(search_id, score)`` sorted by score
        descending, ties by id ascending."""
        if k < 1:
            raise ContractError("k must be >= 1")
        qv = np.asarray(q, dtype=np.float32).reshape(-1)
        if qv.shape[0] != self.dim:
            raise ContractError(f"query dim {qv.shape[0]} != index dim {self.dim}")
        if not self.slot_of:
            return []
        qv = _unit(qv)
        ef = max(self.params.ef_search, k)
        dists, slots = _knn(qv, ef, self.entry, self.max_level, self.vecs,
                            self.nbr0, self.cnt0, self.upper_start, self.upper,
                            self.upper_cnt, self.deleted, self.visited, self._stamp)
        self._stamp += 1
        hits = [(self.ids[s], float(self.vecs[s].astype(np.float64) @ qv.astype(np.float64)))
                for s in slots.tolist()]
        hits.sort(key=lambda h: (-h[1], h[0]))
        return hits[:k]

    # -- raw graph access for the segment writer -------------------------

    def adjacency(self, slot: int) -> list[np.ndarray]:
        out = [self.nbr0[slot, : self.cnt0[slot]]]
        base = self.upper_start[slot]
        for layer in range(1, int(self.levels[slot]) + 1):
            row = base + layer - 1
            out.append(self.upper[row, : self.upper_cnt[row]])
        return out


def _resize(arr: np.ndarray, n: int, fill) -> np.ndarray:
    shape = (n,) + arr.shape[1:]
    out = np.full(shape, fill, dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


def _unit(v: np.ndarray) -> np.ndarray:
    norm = float(np.sqrt(np.dot(v.astype(np.float64), v.astype(np.float64))))
    if norm == 0.0:
        return v.astype(np.float32)
    return (v.astype(np.float64) / norm).astype(np.float32)
