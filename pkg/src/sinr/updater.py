"""Incremental document updates without re-indexing the corpus."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

from .chunker import RetrieveChunk, SearchChunk, chunk_document
from .engine import Engine, doc_digest
from .errors import ContractError
from .ingest import Document

log = logging.getLogger(__name__)

# stage names, in execution order; the hook passed to apply_update sees each
STAGES = (
    "remove_vectors",
    "delete_store",
    "insert_docs",
    "insert_mappings",
    "insert_vectors",
    "commit",
)


@dataclass
class UpdatePlan:
    doc_id: str
    stale_retrieve_ids: list[str] = field(default_factory=list)
    stale_search_ids: list[str] = field(default_factory=list)
    new_retrieve: list[RetrieveChunk] = field(default_factory=list)
    new_search: list[SearchChunk] = field(default_factory=list)
    new_pairs: list[tuple[str, str]] = field(default_factory=list)
    document: dict | None = None  # None deletes the document entry
    known: bool = False
    plan_seconds: float = 0.0

    @property
    def is_noop(self) -> bool:
        return not (self.stale_retrieve_ids or self.stale_search_ids
                    or self.new_retrieve or self.new_search)


@dataclass
class UpdateReport:
    doc_id: str
    status: str
    removed_search: int = 0
    added_search: int = 0
    removed_retrieve: int = 0
    added_retrieve: int = 0
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def total_seconds(self) -> float:
        return sum(self.timings.values())

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "status": self.status,
            "removed_search": self.removed_search,
            "added_search": self.added_search,
            "removed_retrieve": self.removed_retrieve,
            "added_retrieve": self.added_retrieve,
            "timings": self.timings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"))


def plan_update(doc: Document, engine: Engine) -> UpdatePlan:
    """Diff the re-chunked ``doc`` against what the engine holds for it.

    Chunk ids are content-addressed, so chunks that did not change appear in
    neither the stale nor the new sets.
    """
    t0 = time.perf_counter()
    parents, children, pairs = chunk_document(doc, engine.chunking)
    old_r = engine.retrieve_ids_of(doc.doc_id)
    old_s = engine.search_ids_of(doc.doc_id)
    new_r = {p.retrieve_id for p in parents}
    new_s = {c.search_id for c in children}
    old_r_set, old_s_set = set(old_r), set(old_s)
    plan = UpdatePlan(
        doc_id=doc.doc_id,
        stale_retrieve_ids=[r for r in old_r if r not in new_r],
        stale_search_ids=[s for s in old_s if s not in new_s],
        new_retrieve=[p for p in parents if p.retrieve_id not in old_r_set],
        new_search=[c for c in children if c.search_id not in old_s_set],
        document={"digest": doc_digest(doc), "source_path": doc.source_path},
        known=doc.doc_id in engine.documents,
    )
    plan.new_pairs = [(c.search_id, c.retrieve_id) for c in plan.new_search]
    plan.plan_seconds = time.perf_counter() - t0
    return plan


def plan_delete(doc_id: str, engine: Engine) -> UpdatePlan:
    t0 = time.perf_counter()
    plan = UpdatePlan(
        doc_id=doc_id,
        stale_retrieve_ids=engine.retrieve_ids_of(doc_id),
        stale_search_ids=engine.search_ids_of(doc_id),
        document=None,
        known=doc_id in engine.documents,
    )
    plan.plan_seconds = time.perf_counter() - t0
    return plan


def _validate(plan: UpdatePlan, engine: Engine) -> None:
    for sid in plan.stale_search_ids:
        if sid not in engine.mapping:
            raise ContractError(f"plan is stale: {sid} is not indexed")
    for rid in plan.stale_retrieve_ids:
        if rid not in engine.docstore:
            raise ContractError(f"plan is stale: {rid} is not stored")
    for chunk in plan.new_retrieve:
        if chunk.doc_id != plan.doc_id:
            raise ContractError("new chunks must belong to the planned document")
    for chunk in plan.new_search:
        if chunk.doc_id != plan.doc_id:
            raise ContractError("new chunks must belong to the planned document")


def apply_update(plan: UpdatePlan, engine: Engine, *, hook=None) -> UpdateReport:
    """Apply ``plan`` and commit. On any failure the engine (and its
    directory) is returned to the last committed state and the error
    re-raised.

    ``hook(stage)`` runs after every stage in :data:`STAGES` and inside the
    commit; it exists for failure injection.
    """
    deleting = plan.document is None
    entry_changes = (
        plan.known != (not deleting)
        or (plan.document is not None and engine.documents.get(plan.doc_id) != plan.document)
    )
    report = UpdateReport(
        doc_id=plan.doc_id,
        status="no-op",
        removed_search=len(plan.stale_search_ids),
        added_search=len(plan.new_search),
        removed_retrieve=len(plan.stale_retrieve_ids),
        added_retrieve=len(plan.new_retrieve),
    )
    if plan.is_noop and not entry_changes:
        report.timings = {"identify": plan.plan_seconds, "delete": 0.0, "reembed": 0.0, "update": 0.0}
        return report
    _validate(plan, engine)

    def step(name: str) -> None:
        if hook:
            hook(name)

    snapshot = engine.serialize() if engine.directory is None else None
    try:
        t0 = time.perf_counter()
        for sid in plan.stale_search_ids:
            engine.index.remove(sid)
        step("remove_vectors")
        engine.mapping.remove_search(plan.stale_search_ids)
        for rid in plan.stale_retrieve_ids:
            engine.docstore.delete(rid)
        step("delete_store")
        t1 = time.perf_counter()

        vectors = engine.embedder.embed_batch([c.text for c in plan.new_search])
        t2 = time.perf_counter()

        for chunk in plan.new_retrieve:
            engine.docstore.put(chunk)
        if deleting:
            engine.documents.pop(plan.doc_id, None)
        else:
            engine.documents[plan.doc_id] = dict(plan.document)
        step("insert_docs")
        engine.mapping.put_mapping(plan.new_pairs, engine.docstore)
        step("insert_mappings")
        t3 = time.perf_counter()
        engine.index.add_many((c.search_id, v) for c, v in zip(plan.new_search, vectors))
        step("insert_vectors")
        t4 = time.perf_counter()
        engine.commit(hook=lambda s: step(f"commit:{s}"))
        step("commit")
        t5 = time.perf_counter()
    except BaseException:
        log.warning("update of %s failed; rolling back", plan.doc_id)
        if snapshot is not None:
            engine.restore(snapshot)
        else:
            engine.reload()
        raise

    report.status = "deleted" if deleting else "applied"
    report.timings = {
        "identify": plan.plan_seconds,
        "delete": t1 - t0,
        "reembed": (t2 - t1) + (t4 - t3),
        "update": (t3 - t2) + (t5 - t4),
    }
    return report


def update_document(doc: Document, engine: Engine, *, hook=None) -> UpdateReport:
    return apply_update(plan_update(doc, engine), engine, hook=hook)


def delete_document(doc_id: str, engine: Engine, *, hook=None) -> UpdateReport:
    """Remove every chunk of ``doc_id``; unknown ids give a no-op report."""
    plan = plan_delete(doc_id, engine)
    if not plan.known and plan.is_noop:
        return UpdateReport(doc_id=doc_id, status="no-op",
                            timings={"identify": plan.plan_seconds, "delete": 0.0,
                                     "reembed": 0.0, "update": 0.0})
    return apply_update(plan, engine, hook=hook)
