"""Vector indexes over search-chunk embeddings.

Two backends share one interface: ``hnsw`` (approximate, the default) and
``brute`` (exact exhaustive scoring, also the test oracle).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from .brute import BruteForceIndex
from .hnsw import HnswIndex, HnswParams
from .segment import dumps, loads

BACKENDS = {"hnsw": HnswIndex, "brute": BruteForceIndex}


@dataclass
class IndexedVector:
    search_id: str
    vector: np.ndarray
    tombstone: bool = False


@dataclass(frozen=True)
class ScoredHit:
    search_id: str
    score: float


def make_index(dim: int, params: HnswParams | None = None, backend: str = "hnsw"):
    try:
        cls = BACKENDS[backend]
    except KeyError:
        raise ContractError(f"unknown index backend {backend!r}") from None
    return cls(dim, params)


def build(entries, params: HnswParams | None = None, backend: str = "hnsw", dim: int | None = None):
    """Build an index from :class:`IndexedVector` entries in the given order."""
    entries = list(entries)
    dims = {np.asarray(e.vector).reshape(-1).shape[0] for e in entries}
    if len(dims) > 1:
        raise ContractError(f"mixed vector dimensions {sorted(dims)}")
    if dim is None:
        if not dims:
            raise ContractError("dim is required for an empty build")
        dim = dims.pop()
    elif dims and dims != {dim}:
        raise ContractError(f"vector dim {dims.pop()} != index dim {dim}")
    index = make_index(dim, params, backend)
    index.add_many((e.search_id, e.vector) for e in entries)
    for e in entries:
        if e.tombstone:
            index.remove(e.search_id)
    return index


def query(index, q, k: int) -> list[ScoredHit]:
    return [ScoredHit(sid, score) for sid, score in index.query(q, k)]


__all__ = [
    "BACKENDS", "BruteForceIndex", "HnswIndex", "HnswParams", "IndexedVector",
    "ScoredHit", "build", "dumps", "loads", "make_index", "query",
]
