"""Exact top-k by exhaustive scoring. Used as the ANN oracle and as a backend."""

from __future__ import annotations

import numpy as np

from ..errors import ConflictError, ContractError, NotFoundError
from .hnsw import HnswParams, _resize, _unit


class BruteForceIndex:
    backend = "brute"

    def __init__(self, dim: int, params: HnswParams | None = None, capacity: int = 1024) -> None:
        if dim < 1:
            raise ContractError("dim must be positive")
        self.dim = dim
        self.params = params or HnswParams()
        self.ids: list[str] = []
        self.slot_of: dict[str, int] = {}
        self.vecs = np.zeros((max(capacity, 16), dim), dtype=np.float32)
        self.deleted = np.zeros(self.vecs.shape[0], dtype=np.bool_)

    def _stage(self, search_id: str, vector) -> int:
        v = np.asarray(vector, dtype=np.float32).reshape(-1)
        if v.shape[0] != self.dim:
            raise ContractError(f"vector dim {v.shape[0]} != index dim {self.dim}")
        if search_id in self.slot_of:
            raise ConflictError(f"duplicate live id {search_id!r}")
        slot = len(self.ids)
        if slot >= self.vecs.shape[0]:
            n = 2 * self.vecs.shape[0]
            self.vecs = _resize(self.vecs, n, 0)
            self.deleted = _resize(self.deleted, n, False)
        self.vecs[slot] = _unit(v)
        self.ids.append(search_id)
        self.slot_of[search_id] = slot
        return slot

    def add_many(self, items) -> None:
        for search_id, vector in items:
            self._stage(search_id, vector)

    def insert(self, search_id: str, vector) -> None:
        self._stage(search_id, vector)

    def remove(self, search_id: str) -> None:
        slot = self.slot_of.pop(search_id, None)
        if slot is None:
            raise NotFoundError(search_id)
        self.deleted[slot] = True
        if self.tombstone_fraction() > 0.2:
            self.compact()

    def compact(self) -> None:
        live = [(sid, v.copy()) for sid, v in self.live_items()]
        fresh = BruteForceIndex(self.dim, self.params, capacity=max(len(live), 16))
        fresh.add_many(live)
        self.__dict__.update(fresh.__dict__)

    def __len__(self) -> int:
        return len(self.slot_of)

    def __contains__(self, search_id: str) -> bool:
        return search_id in self.slot_of

    def tombstone_fraction(self) -> float:
        total = len(self.ids)
        return 0.0 if total == 0 else (total - len(self.slot_of)) / total

    def live_items(self):
        for slot, search_id in enumerate(self.ids):
            if not self.deleted[slot]:
                yield search_id, self.vecs[slot]

    def vector(self, search_id: str) -> np.ndarray:
        return self.vecs[self.slot_of[search_id]].copy()

    def scores(self, q) -> np.ndarray:
        """Cosine score of every slot (tombstones included) in float64."""
        n = len(self.ids)
        return self.vecs[:n].astype(np.float64) @ np.asarray(q, dtype=np.float64)

    def query(self, q, k: int):
        if k < 1:
            raise ContractError("k must be >= 1")
        qv = np.asarray(q, dtype=np.float32).reshape(-1)
        if qv.shape[0] != self.dim:
            raise ContractError(f"query dim {qv.shape[0]} != index dim {self.dim}")
        if not self.slot_of:
            return []
        s = self.scores(_unit(qv))
        n = len(self.ids)
        s[self.deleted[:n]] = -np.inf
        live = len(self.slot_of)
        if k < live:
            # keep everything tied with the k-th score so the id tie-break is exact
            kth = np.partition(s, n - k)[n - k]
            cand = np.nonzero(s >= kth)[0]
        else:
            cand = np.nonzero(~self.deleted[:n])[0]
        hits = sorted(((self.ids[i], float(s[i])) for i in cand), key=lambda h: (-h[1], h[0]))
        return hits[:k]
