"""Two-layer chunking: structural retrieve chunks, sliding-window search chunks."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

from .errors import ContractError
from .ingest import Document, TokenSpan, detokenize, tokenize


@dataclass(frozen=True)
class ChunkingConfig:
    w: int = 150
    tau: int = 100
    min_retrieve: int = 64
    max_retrieve: int = 1000
    min_tail: int = 32

    def __post_init__(self) -> None:
        if not 0 < self.tau <= self.w:
            raise ContractError("need 0 < tau <= w")
        if not 0 <= self.min_tail < self.w:
            raise ContractError("need 0 <= min_tail < w")
        if not 0 < self.min_retrieve < self.max_retrieve:
            raise ContractError("need 0 < min_retrieve < max_retrieve")
        if 2 * self.min_retrieve > self.max_retrieve:
            # rebalancing a short chunk against a full neighbour needs this room
            raise ContractError("need 2 * min_retrieve <= max_retrieve")

    # names used in config files and the manifest
    KEYS = {
        "window_tokens": "w",
        "stride_tokens": "tau",
        "min_retrieve_tokens": "min_retrieve",
        "max_retrieve_tokens": "max_retrieve",
        "min_tail_tokens": "min_tail",
    }

    def to_dict(self) -> dict:
        values = asdict(self)
        return {key: values[attr] for key, attr in self.KEYS.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "ChunkingConfig":
        return cls(**{attr: int(data[key]) for key, attr in cls.KEYS.items() if key in data})


@dataclass(frozen=True)
class RetrieveChunk:
    retrieve_id: str
    doc_id: str
    span: TokenSpan
    text: str
    ordinal: int

    @property
    def n_tokens(self) -> int:
        return len(self.span)


@dataclass(frozen=True)
class SearchChunk:
    search_id: str
    retrieve_id: str
    doc_id: str
    span: TokenSpan
    text: str
    window_ordinal: int


def chunk_id(layer: str, doc_id: str, span: TokenSpan, text: str, parent: str = "") -> str:
    """Content-addressed id: layer prefix plus a 64-bit BLAKE2b digest."""
    h = hashlib.blake2b(digest_size=8)
    for part in (layer, doc_id, str(span.start), str(span.end), parent, text):
        data = part.encode("utf-8")
        h.update(len(data).to_bytes(8, "little"))
        h.update(data)
    return f"{layer}_{h.hexdigest()}"


def id_to_bytes(chunk_id_: str) -> bytes:
    _, sep, digest = chunk_id_.partition("_")
    try:
        raw = bytes.fromhex(digest)
    except ValueError:
        raw = b""
    if not sep or len(raw) != 8:
        raise ContractError(f"{chunk_id_!r} is not a content-addressed chunk id")
    return raw


def bytes_to_id(layer: str, raw: bytes) -> str:
    return f"{layer}_{raw.hex()}"


def retrieve_boundaries(n_tokens: int, cuts: list[int], cfg: ChunkingConfig) -> list[tuple[int, int]]:
    """Greedy accumulation of structural segments into ``[start, end)`` ranges.

    ``cuts`` are candidate boundary token offsets. Segments are merged while the
    running chunk stays within ``max_retrieve``; an oversized segment is
    hard-split every ``max_retrieve`` tokens. Chunks shorter than
    ``min_retrieve`` are then merged into, or rebalanced against, a neighbour.
    """
    if n_tokens == 0:
        return []
    edges = sorted({c for c in cuts if 0 < c < n_tokens})
    segments = list(zip([0] + edges, edges + [n_tokens]))

    out: list[list[int]] = []
    cur_start = cur_end = 0
    for s, e in segments:
        if cur_end > cur_start and e - cur_start > cfg.max_retrieve:
            out.append([cur_start, cur_end])
            cur_start = s
        while e - cur_start > cfg.max_retrieve:
            out.append([cur_start, cur_start + cfg.max_retrieve])
            cur_start += cfg.max_retrieve
        cur_end = e
    out.append([cur_start, cur_end])

    i = 0
    while i < len(out) and len(out) > 1:
        s, e = out[i]
        if e - s >= cfg.min_retrieve:
            i += 1
            continue
        if i > 0:
            left, right = out[i - 1], out[i]
        else:
            left, right = out[0], out[1]
        total = right[1] - left[0]
        if total <= cfg.max_retrieve:
            out[i - 1 if i > 0 else 0 : i + 1 if i > 0 else 2] = [[left[0], right[1]]]
            i = max(i - 1, 0)
        elif i > 0:
            # short tail: pull the cut left so the tail reaches min_retrieve
            left[1] = right[0] = right[1] - cfg.min_retrieve
            i += 1
        else:
            left[1] = right[0] = left[0] + cfg.min_retrieve
            i += 1
    return [(s, e) for s, e in out]


def create_retrieve_chunks(doc: Document, cfg: ChunkingConfig | None = None) -> list[RetrieveChunk]:
    cfg = cfg or ChunkingConfig()
    tokens = doc.tokens
    cuts = [m.token_offset for m in doc.structure_hints]
    chunks = []
    for ordinal, (s, e) in enumerate(retrieve_boundaries(len(tokens), cuts, cfg)):
        span = TokenSpan(s, e)
        text = detokenize(tokens, span)
        chunks.append(RetrieveChunk(
            retrieve_id=chunk_id("r", doc.doc_id, span, text),
            doc_id=doc.doc_id, span=span, text=text, ordinal=ordinal,
        ))
    return chunks


def window_starts(length: int, cfg: ChunkingConfig) -> list[tuple[int, int]]:
    """Relative ``[start, end)`` windows for a parent of ``length`` tokens.

    A parent that fits in one window gets exactly that window. Otherwise
    windows start at ``0, tau, 2*tau, ...`` while inside the parent and are
    clamped at its end; a final window shorter than ``min_tail`` is dropped
    when it is not the only window and the window before it already reaches
    the parent's end.
    """
    if length <= 0:
        return []
    if length <= cfg.w:
        return [(0, length)]
    wins = [(s, min(s + cfg.w, length)) for s in range(0, length, cfg.tau)]
    if len(wins) > 1:
        s, e = wins[-1]
        if e - s < cfg.min_tail and wins[-2][1] == length:
            wins.pop()
    return wins


def create_search_chunks(parent: RetrieveChunk, cfg: ChunkingConfig | None = None) -> list[SearchChunk]:
    """Sliding windows over ``parent``, never crossing its boundaries."""
    cfg = cfg or ChunkingConfig()
    tokens = tokenize(parent.text)
    base = parent.span.start
    out = []
    for i, (s, e) in enumerate(window_starts(len(parent.span), cfg)):
        text = detokenize(tokens, TokenSpan(s, e))
        span = TokenSpan(base + s, base + e)
        out.append(SearchChunk(
            search_id=chunk_id("s", parent.doc_id, span, text, parent.retrieve_id),
            retrieve_id=parent.retrieve_id, doc_id=parent.doc_id,
            span=span, text=text, window_ordinal=i,
        ))
    return out


def chunk_document(doc: Document, cfg: ChunkingConfig | None = None):
    """Retrieve chunks, search chunks and ``(search_id, retrieve_id)`` pairs."""
    cfg = cfg or ChunkingConfig()
    parents = create_retrieve_chunks(doc, cfg)
    children: list[SearchChunk] = []
    for parent in parents:
        children.extend(create_search_chunks(parent, cfg))
    pairs = [(c.search_id, c.retrieve_id) for c in children]
    return parents, children, pairs
