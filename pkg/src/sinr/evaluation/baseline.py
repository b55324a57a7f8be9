"""Uniform fixed-window chunking: every window is both searched and returned."""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass

from ..chunker import chunk_id
from ..embedding import EmbedderSpec, make_embedder
from ..engine import doc_digest
from ..errors import ContractError
from ..index import HnswParams, make_index
from ..ingest import TokenSpan, detokenize


@dataclass(frozen=True)
class BaselineConfig:
    chunk_tokens: int = 500
    overlap_tokens: int = 50

    def __post_init__(self) -> None:
        if not 0 <= self.overlap_tokens < self.chunk_tokens:
            raise ContractError("need 0 <= overlap_tokens < chunk_tokens")

    @property
    def stride(self) -> int:
        return self.chunk_tokens - self.overlap_tokens


def baseline_windows(n_tokens: int, cfg: BaselineConfig) -> list[tuple[int, int]]:
    """Windows at ``0, stride, 2*stride, ...`` until one reaches the end."""
    out = []
    start = 0
    while start < n_tokens:
        end = min(start + cfg.chunk_tokens, n_tokens)
        out.append((start, end))
        if end == n_tokens:
            break
        start += cfg.stride
    return out


def window_count(n_tokens: int, cfg: BaselineConfig) -> int:
    if n_tokens <= 0:
        return 0
    if n_tokens <= cfg.chunk_tokens:
        return 1
    return 1 + math.ceil((n_tokens - cfg.chunk_tokens) / cfg.stride)


@dataclass(frozen=True)
class BaselineChunk:
    chunk_id: str
    doc_id: str
    span: TokenSpan
    text: str

    @property
    def n_tokens(self) -> int:
        return len(self.span)


class BaselineIndex:
    def __init__(self, cfg: BaselineConfig, embedder, params: HnswParams, backend: str) -> None:
        self.cfg = cfg
        self.embedder = embedder
        self.fingerprint = embedder.fingerprint
        self.params = params
        self.backend = backend
        self.index = make_index(embedder.dim, params, backend)
        self.chunks: dict[str, BaselineChunk] = {}
        self.documents: dict[str, str] = {}

    def __len__(self) -> int:
        return len(self.chunks)

    def corpus_hash(self) -> str:
        h = hashlib.sha256()
        for doc_id in sorted(self.documents):
            h.update(f"{doc_id}\0{self.documents[doc_id]}\n".encode("utf-8"))
        return h.hexdigest()

    def search(self, text: str, k: int):
        """Top-``k`` windows as ``(chunks, timings)``."""
        t0 = time.perf_counter()
        q = self.embedder.embed_text(text)
        t1 = time.perf_counter()
        hits = self.index.query(q, k)
        t2 = time.perf_counter()
        chunks = [self.chunks[sid] for sid, _ in hits]
        return chunks, {"embed": t1 - t0, "search": t2 - t1}


def build_baseline(docs, cfg: BaselineConfig | None = None, embedder=None, *,
                   params: HnswParams | None = None, backend: str = "hnsw") -> BaselineIndex:
    cfg = cfg or BaselineConfig()
    embedder = embedder or make_embedder(EmbedderSpec())
    base = BaselineIndex(cfg, embedder, params or HnswParams(), backend)
    pending = []
    for doc in docs:
        base.documents[doc.doc_id] = doc_digest(doc)
        tokens = doc.tokens
        for s, e in baseline_windows(len(tokens), cfg):
            span = TokenSpan(s, e)
            text = detokenize(tokens, span)
            chunk = BaselineChunk(chunk_id("s", doc.doc_id, span, text, "uniform"), doc.doc_id, span, text)
            base.chunks[chunk.chunk_id] = chunk
            pending.append(chunk)
    if pending:
        vectors = embedder.embed_batch([c.text for c in pending])
        base.index.add_many((c.chunk_id, v) for c, v in zip(pending, vectors))
    return base
