"""Query path: embed, top-k search, parent lookup, deduplicated context."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

from .errors import ContractError
from .storage import StoredRetrieveChunk

TRACE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class QueryRequest:
    text: str
    k: int = 20
    max_context_tokens: int | None = None
    max_parents: int | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ContractError("k must be >= 1")
        for name in ("max_context_tokens", "max_parents"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ContractError(f"{name} must be positive")


@dataclass
class TraceHit:
    search_id: str
    score: float
    parent: str


@dataclass
class TraceParent:
    retrieve_id: str
    best_score: float
    children: list[str]
    tokens: int = 0
    admitted: bool = True


@dataclass
class QueryTrace:
    query: str
    fingerprint: str
    k: int
    hits: list[TraceHit] = field(default_factory=list)
    parents: list[TraceParent] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    map_lookups: int = 0
    over_budget: bool = False

    def to_record(self) -> dict:
        return {
            "format_version": TRACE_FORMAT_VERSION,
            "query": self.query,
            "fingerprint": self.fingerprint,
            "k": self.k,
            "hits": [asdict(h) for h in self.hits],
            "parents": [asdict(p) for p in self.parents],
            "timings": dict(self.timings),
            "map_lookups": self.map_lookups,
            "over_budget": self.over_budget,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_record(cls, rec: dict) -> "QueryTrace":
        if rec.get("format_version") != TRACE_FORMAT_VERSION:
            raise ContractError(f"unsupported trace format {rec.get('format_version')}")
        return cls(
            query=rec["query"], fingerprint=rec["fingerprint"], k=rec["k"],
            hits=[TraceHit(**h) for h in rec["hits"]],
            parents=[TraceParent(**p) for p in rec["parents"]],
            timings=dict(rec["timings"]), map_lookups=rec["map_lookups"],
            over_budget=rec["over_budget"],
        )


@dataclass
class RetrievalResult:
    parents: list[StoredRetrieveChunk]
    trace: QueryTrace
    total_context_tokens: int

    @property
    def over_budget(self) -> bool:
        return self.trace.over_budget


def aggregate_parents(hits: list[TraceHit]) -> list[TraceParent]:
    """Unique parents ranked by best child score, ties by parent id."""
    best: dict[str, TraceParent] = {}
    for h in hits:
        p = best.get(h.parent)
        if p is None:
            best[h.parent] = TraceParent(h.parent, h.score, [h.search_id])
        else:
            p.children.append(h.search_id)
            if h.score > p.best_score:
                p.best_score = h.score
    return sorted(best.values(), key=lambda p: (-p.best_score, p.retrieve_id))


def retrieve(req: QueryRequest, engine, *, embedder=None, query_vector=None) -> RetrievalResult:
    """Run one query against ``engine``.

    ``embedder`` defaults to the engine's own and must carry the fingerprint
    the index was built with. ``query_vector`` skips the embed stage.
    """
    trace = QueryTrace(query=req.text, fingerprint=engine.fingerprint, k=req.k)
    embedder = embedder or engine.embedder

    t0 = time.perf_counter()
    engine.check_fingerprint(embedder.fingerprint)
    q = embedder.embed_text(req.text) if query_vector is None else query_vector
    t1 = time.perf_counter()
    raw_hits = engine.index.query(q, req.k)
    t2 = time.perf_counter()
    lookup = engine.mapping.lookup_parent
    hits = [TraceHit(sid, score, lookup(sid)) for sid, score in raw_hits]
    parents = aggregate_parents(hits)
    t3 = time.perf_counter()
    trace.map_lookups = len(hits)

    if req.max_parents is not None:
        for p in parents[req.max_parents :]:
            p.admitted = False
    chosen = [p for p in parents if p.admitted]
    fetched = {c.retrieve_id: c for c in engine.get_retrieve_chunks([p.retrieve_id for p in chosen])}
    total = 0
    out: list[StoredRetrieveChunk] = []
    for p in chosen:
        chunk = fetched[p.retrieve_id]
        p.tokens = chunk.n_tokens
        if req.max_context_tokens is not None and total + p.tokens > req.max_context_tokens:
            if not out:
                # a single parent larger than the whole budget is still returned
                trace.over_budget = True
                out.append(chunk)
                total += p.tokens
            break
        out.append(chunk)
        total += p.tokens
    kept = {c.retrieve_id for c in out}
    for p in parents:
        p.admitted = p.retrieve_id in kept
        if not p.tokens and p.retrieve_id in fetched:
            p.tokens = fetched[p.retrieve_id].n_tokens
    t4 = time.perf_counter()

    trace.hits = hits
    trace.parents = parents
    trace.timings = {"embed": t1 - t0, "search": t2 - t1, "map": t3 - t2, "fetch": t4 - t3}
    return RetrievalResult(parents=out, trace=trace, total_context_tokens=total)


def explain(trace: QueryTrace) -> str:
    """Plain-text report of the query -> hits -> parents chain."""
    n_parents = len(trace.parents)
    lines = [
        f"query: {trace.query}",
        f"embedder: {trace.fingerprint}",
        f"k: {trace.k}",
        f"hits: {len(trace.hits)} -> unique parents: {n_parents}",
        "",
        "rank  score     search_id           parent",
    ]
    for i, h in enumerate(trace.hits, 1):
        lines.append(f"{i:>4}  {h.score:+.6f} {h.search_id:<19} {h.parent}")
    lines += ["", "rank  best      retrieve_id         children tokens admitted"]
    for i, p in enumerate(trace.parents, 1):
        lines.append(
            f"{i:>4}  {p.best_score:+.6f} {p.retrieve_id:<19} {len(p.children):>8} "
            f"{p.tokens:>6} {'yes' if p.admitted else 'no'}"
        )
    if trace.over_budget:
        lines.append("note: first parent alone exceeds the context budget")
    lines += ["", "timings (ms): " + " ".join(
        f"{stage}={trace.timings.get(stage, 0.0) * 1e3:.3f}"
        for stage in ("embed", "search", "map", "fetch")
    )]
    return "\n".join(lines) + "\n"


def write_trace(path, trace: QueryTrace, append: bool = True) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        fh.write(trace.to_json() + "\n")


def read_traces(path) -> list[QueryTrace]:
    with open(path, encoding="utf-8") as fh:
        return [QueryTrace.from_record(json.loads(line)) for line in fh if line.strip()]
