"""On-disk vector segment.

Layout, all integers little-endian::

    header   magic "SINRSEG\\0", u32 version, u8 backend, 3 pad bytes, u32 dim,
             u64 slot count, u32 M, u32 ef_construction, u32 ef_search,
             u64 level_seed, i64 entry slot, i32 max level,
             u32 fingerprint length, fingerprint (UTF-8)
    ids      slot count x 8-byte id digests
    vectors  slot count x dim float32, row-major
    graph    u64 byte length, then per slot: varint level, and per layer
             0..level a varint neighbour count followed by zigzag-varint
             deltas of the neighbour slots (empty for the brute backend)
    bitmap   tombstones, one bit per slot, LSB first
"""

from __future__ import annotations

import struct

import numpy as np
from numba import njit

from ..chunker import bytes_to_id, id_to_bytes
from ..errors import IndexStateError
from .brute import BruteForceIndex
from .hnsw import HnswIndex, HnswParams

MAGIC = b"SINRSEG\x00"
VERSION = 1
_HEAD = struct.Struct("<8sIB3xIQIIIQqiI")
_BACKENDS = {"brute": 0, "hnsw": 1}


@njit(cache=True)
def _put_varint(buf, pos, value):
    while value >= 0x80:
        buf[pos] = (value & 0x7F) | 0x80
        value >>= 7
        pos += 1
    buf[pos] = value
    return pos + 1


@njit(cache=True)
def _get_varint(buf, pos):
    value = 0
    shift = 0
    while True:
        b = buf[pos]
        pos += 1
        value |= np.int64(b & 0x7F) << shift
        if b < 0x80:
            return value, pos
        shift += 7


@njit(cache=True)
def _encode_graph(count, levels, nbr0, cnt0, upper_start, upper, upper_cnt):
    size = 0
    for s in range(count):
        size += 10 * (2 + levels[s] + cnt0[s])
        for layer in range(1, levels[s] + 1):
            size += 10 * upper_cnt[upper_start[s] + layer - 1]
    buf = np.empty(size, dtype=np.uint8)
    pos = 0
    for s in range(count):
        pos = _put_varint(buf, pos, np.int64(levels[s]))
        for layer in range(levels[s] + 1):
            if layer == 0:
                row = nbr0[s]
                n = cnt0[s]
            else:
                r = upper_start[s] + layer - 1
                row = upper[r]
                n = upper_cnt[r]
            pos = _put_varint(buf, pos, np.int64(n))
            prev = np.int64(0)
            for j in range(n):
                d = np.int64(row[j]) - prev
                prev = np.int64(row[j])
                pos = _put_varint(buf, pos, (d << 1) ^ (d >> 63))
    return buf[:pos]


@njit(cache=True)
def _decode_graph(buf, count, levels, nbr0, cnt0, upper_start, upper, upper_cnt):
    pos = 0
    rows = 0
    for s in range(count):
        lv, pos = _get_varint(buf, pos)
        levels[s] = lv
        if lv > 0:
            upper_start[s] = rows
            rows += lv
        for layer in range(lv + 1):
            n, pos = _get_varint(buf, pos)
            prev = np.int64(0)
            for j in range(n):
                z, pos = _get_varint(buf, pos)
                prev += (z >> 1) ^ -(z & 1)
                if layer == 0:
                    nbr0[s, j] = prev
                else:
                    upper[upper_start[s] + layer - 1, j] = prev
            if layer == 0:
                cnt0[s] = n
            else:
                upper_cnt[upper_start[s] + layer - 1] = n
    return pos, rows


def dumps(index, fingerprint: str) -> bytes:
    n = len(index.ids)
    p = index.params
    is_hnsw = index.backend == "hnsw"
    fp = fingerprint.encode("utf-8")
    head = _HEAD.pack(
        MAGIC, VERSION, _BACKENDS[index.backend], index.dim, n,
        p.max_links, p.ef_construction, p.ef_search, p.level_seed,
        index.entry if is_hnsw else -1, index.max_level if is_hnsw else -1, len(fp),
    )
    ids = b"".join(id_to_bytes(i) for i in index.ids)
    vecs = np.ascontiguousarray(index.vecs[:n], dtype="<f4").tobytes()
    if is_hnsw:
        graph = _encode_graph(n, index.levels, index.nbr0, index.cnt0,
                              index.upper_start, index.upper, index.upper_cnt).tobytes()
    else:
        graph = b""
    bitmap = np.packbits(index.deleted[:n], bitorder="little").tobytes()
    return b"".join([head, fp, ids, vecs, struct.pack("<Q", len(graph)), graph, bitmap])


def loads(data: bytes):
    """Rebuild an index from :func:`dumps` output. Returns ``(index, fingerprint)``."""
    if len(data) < _HEAD.size or data[:8] != MAGIC:
        raise IndexStateError("not a vector segment")
    (magic, version, backend, dim, n, m, ef_c, ef_s, seed, entry, max_level,
     fp_len) = _HEAD.unpack_from(data, 0)
    if version != VERSION:
        raise IndexStateError(f"unsupported segment version {version}")
    pos = _HEAD.size
    fingerprint = data[pos : pos + fp_len].decode("utf-8")
    pos += fp_len
    raw_ids = data[pos : pos + 8 * n]
    pos += 8 * n
    vecs = np.frombuffer(data, dtype="<f4", count=n * dim, offset=pos).reshape(n, dim)
    pos += 4 * n * dim
    (glen,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    graph = np.frombuffer(data, dtype=np.uint8, count=glen, offset=pos)
    pos += glen
    deleted = np.unpackbits(
        np.frombuffer(data, dtype=np.uint8, count=(n + 7) // 8, offset=pos),
        count=n, bitorder="little",
    ).astype(np.bool_)

    params = HnswParams(max_links=m, ef_construction=ef_c, ef_search=ef_s, level_seed=seed)
    cls = HnswIndex if backend == _BACKENDS["hnsw"] else BruteForceIndex
    index = cls(dim, params, capacity=max(n, 16))
    index.ids = [bytes_to_id("s", raw_ids[8 * i : 8 * i + 8]) for i in range(n)]
    index.vecs[:n] = vecs
    index.deleted[:n] = deleted
    index.slot_of = {sid: i for i, sid in enumerate(index.ids) if not deleted[i]}
    if cls is HnswIndex:
        total_rows = sum_levels(graph, n)
        index._grow(max(n, 16), total_rows)
        _, rows = _decode_graph(graph, n, index.levels, index.nbr0, index.cnt0,
                                index.upper_start, index.upper, index.upper_cnt)
        index._upper_rows = rows
        index.entry = entry
        index.max_level = max_level
    return index, fingerprint


@njit(cache=True)
def _sum_levels(buf, count):
    pos = 0
    total = 0
    for _ in range(count):
        lv, pos = _get_varint(buf, pos)
        total += lv
        for layer in range(lv + 1):
            n, pos = _get_varint(buf, pos)
            for j in range(n):
                _, pos = _get_varint(buf, pos)
    return total


def sum_levels(buf: np.ndarray, count: int) -> int:
    return int(_sum_levels(buf, count)) if count else 0
