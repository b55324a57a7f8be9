"""The dual-layer index: vector index over search chunks, parent mapping, and
document store of retrieve chunks, optionally backed by an index directory."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from pathlib import Path

from .chunker import ChunkingConfig, chunk_document
from .embedding import EmbedderSpec, make_embedder
from .errors import ConflictError, FingerprintMismatch, IndexStateError
from .index import HnswParams, dumps as dump_segment, loads as load_segment, make_index
from .ingest import Document, TokenSpan
from .storage import (
    DOCSTORE_DAT, DOCSTORE_IDX, DOCUMENTS, FORMAT_VERSION, INDEX_FILES, MANIFEST,
    MAPPING, VECTORS, DocStore, IndexDirectory, ParentMapping, StoredRetrieveChunk,
    dump_json,
)

log = logging.getLogger(__name__)


def doc_digest(doc: Document) -> str:
    return hashlib.sha256(doc.text.encode("utf-8")).hexdigest()[:32]


class Engine:
    """In-memory state of one index.

    ``directory`` is ``None`` for purely in-memory engines (evaluation runs);
    otherwise :meth:`commit` persists to it.
    """

    def __init__(self, chunking: ChunkingConfig | None = None,
                 embedder_spec: EmbedderSpec | None = None,
                 params: HnswParams | None = None, backend: str = "hnsw",
                 embedder=None, directory: IndexDirectory | None = None) -> None:
        self.chunking = chunking or ChunkingConfig()
        self.embedder_spec = embedder_spec or EmbedderSpec()
        self.params = params or HnswParams()
        self.backend = backend
        self.embedder = embedder or make_embedder(self.embedder_spec)
        self.fingerprint = self.embedder.fingerprint
        self.directory = directory
        self.index = make_index(self.embedder_spec.dim, self.params, backend)
        self.mapping = ParentMapping()
        self.docstore = DocStore()
        self.documents: dict[str, dict] = {}
        self.extra: dict = {}

    # -- construction --------------------------------------------------

    def add_documents(self, docs, embed_batch: int = 4096) -> dict:
        """Chunk, store and index ``docs`` (the offline indexing pipeline).

        Returns stage timings in seconds.
        """
        timings = {"chunk": 0.0, "embed": 0.0, "index": 0.0}
        pending = []
        t0 = time.perf_counter()
        for doc in docs:
            if doc.doc_id in self.documents:
                raise ConflictError(f"document {doc.doc_id} is already indexed")
            parents, children, pairs = chunk_document(doc, self.chunking)
            for parent in parents:
                self.docstore.put(parent)
            self.mapping.put_mapping(pairs, self.docstore)
            self.documents[doc.doc_id] = {"digest": doc_digest(doc), "source_path": doc.source_path}
            pending.extend(children)
        timings["chunk"] = time.perf_counter() - t0
        for i in range(0, len(pending), embed_batch):
            part = pending[i : i + embed_batch]
            t1 = time.perf_counter()
            vectors = self.embedder.embed_batch([c.text for c in part])
            t2 = time.perf_counter()
            self.index.add_many((c.search_id, v) for c, v in zip(part, vectors))
            timings["embed"] += t2 - t1
            timings["index"] += time.perf_counter() - t2
        return timings

    # -- lookups -------------------------------------------------------

    def lookup_parent(self, search_id: str) -> str:
        return self.mapping.lookup_parent(search_id)

    def get_retrieve_chunks(self, ids, missing: list | None = None) -> list[StoredRetrieveChunk]:
        """Stored chunks for ``ids`` in input order; unknown ids go to ``missing``."""
        out = []
        for rid in ids:
            try:
                rec = self.docstore.record(rid)
            except KeyError:
                if missing is not None:
                    missing.append(rid)
                continue
            out.append(StoredRetrieveChunk(
                retrieve_id=rid, doc_id=rec.doc_id, span=TokenSpan(rec.start, rec.end),
                text=rec.text, ordinal=rec.ordinal,
                sibling_count=len(self.mapping.children(rid)),
            ))
        return out

    def retrieve_ids_of(self, doc_id: str) -> list[str]:
        return list(self.docstore.by_doc.get(doc_id, []))

    def search_ids_of(self, doc_id: str) -> list[str]:
        return [s for r in self.retrieve_ids_of(doc_id) for s in self.mapping.children(r)]

    def check_fingerprint(self, fingerprint: str) -> None:
        if fingerprint != self.fingerprint:
            raise FingerprintMismatch(self.fingerprint, fingerprint)

    # -- bookkeeping ---------------------------------------------------

    @property
    def counts(self) -> dict:
        return {
            "documents": len(self.documents),
            "retrieve_chunks": len(self.docstore),
            "search_chunks": len(self.mapping),
        }

    def corpus_hash(self) -> str:
        h = hashlib.sha256()
        for doc_id in sorted(self.documents):
            h.update(f"{doc_id}\0{self.documents[doc_id]['digest']}\n".encode("utf-8"))
        return h.hexdigest()

    def manifest(self) -> dict:
        spec = self.embedder_spec.to_dict()
        spec["fingerprint"] = self.fingerprint
        out = {
            "format_version": FORMAT_VERSION,
            "chunking": self.chunking.to_dict(),
            "embedder": spec,
            "index": {
                "backend": self.backend,
                "max_links": self.params.max_links,
                "ef_construction": self.params.ef_construction,
                "ef_search": self.params.ef_search,
                "level_seed": self.params.level_seed,
            },
            "counts": self.counts,
            "corpus_hash": self.corpus_hash(),
        }
        out.update(self.extra)
        return out

    def serialize(self) -> dict[str, bytes]:
        dat, idx = self.docstore.dumps()
        return {
            MANIFEST: dump_json(self.manifest()),
            MAPPING: self.mapping.dumps(),
            DOCSTORE_DAT: dat,
            DOCSTORE_IDX: idx,
            DOCUMENTS: dump_json(self.documents),
            VECTORS: dump_segment(self.index, self.fingerprint),
        }

    def commit(self, hook=None) -> None:
        if self.directory is None:
            return
        files = self.serialize()
        try:
            self.directory.commit(files, hook=hook)
        except BaseException:
            self.directory.discard_pending()
            raise

    def restore(self, files: dict[str, bytes]) -> None:
        """Replace in-memory state with a serialized snapshot."""
        manifest = json.loads(files[MANIFEST])
        index, fingerprint = load_segment(files[VECTORS])
        if fingerprint != manifest["embedder"]["fingerprint"]:
            raise IndexStateError("vector segment and manifest disagree on the embedder")
        self.index = index
        self.mapping = ParentMapping.loads(files[MAPPING])
        self.docstore = DocStore.loads(files[DOCSTORE_DAT], files[DOCSTORE_IDX])
        self.documents = json.loads(files[DOCUMENTS])

    def reload(self) -> None:
        """Drop uncommitted changes by re-reading the directory."""
        if self.directory is None:
            raise IndexStateError("in-memory engine has nothing to reload from")
        self.directory.recover()
        self.restore({name: self.directory.read(name) for name in INDEX_FILES})

    # -- directory-backed lifecycle -----------------------------------

    @classmethod
    def create(cls, path, *, force: bool = False, **kwargs) -> "Engine":
        directory = IndexDirectory(path)
        if not directory.is_empty() and not force:
            raise IndexStateError(f"{path} is not empty (use force to overwrite)")
        directory.lock()
        for name in INDEX_FILES:
            (directory.path / name).unlink(missing_ok=True)
        return cls(directory=directory, **kwargs)

    @classmethod
    def open(cls, path, *, embedder=None, writable: bool = False) -> "Engine":
        directory = IndexDirectory(path)
        if not directory.exists():
            raise IndexStateError(f"no index at {path}")
        if writable:
            directory.lock()
            directory.recover()
        files = {name: directory.read(name) for name in INDEX_FILES}
        manifest = json.loads(files[MANIFEST])
        if manifest.get("format_version") != FORMAT_VERSION:
            raise IndexStateError(f"unsupported format version {manifest.get('format_version')}")
        spec = EmbedderSpec.from_dict(manifest["embedder"])
        ip = manifest["index"]
        engine = cls(
            chunking=ChunkingConfig.from_dict(manifest["chunking"]),
            embedder_spec=spec,
            params=HnswParams(ip["max_links"], ip["ef_construction"], ip["ef_search"],
                              ip["level_seed"]),
            backend=ip["backend"],
            embedder=embedder,
            directory=directory,
        )
        engine.fingerprint = manifest["embedder"]["fingerprint"]
        engine.extra = {k: v for k, v in manifest.items() if k == "corpus_root"}
        engine.restore(files)
        return engine

    def close(self) -> None:
        if self.directory is not None:
            self.directory.unlock()

    def __enter__(self) -> "Engine":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- invariants ----------------------------------------------------

    def audit(self) -> list[str]:
        """Check the storage invariants; returns a list of violations."""
        problems = []
        fwd = self.mapping.forward
        live = set(self.index.slot_of)
        if live != set(fwd):
            problems.append(
                f"index/mapping id sets differ: {len(live - set(fwd))} unmapped vectors, "
                f"{len(set(fwd) - live)} mapped ids without vectors"
            )
        rebuilt = self.mapping.rebuild_reverse()
        if {k: sorted(v) for k, v in rebuilt.items()} != {
            k: sorted(v) for k, v in self.mapping.reverse.items()
        }:
            problems.append("reverse map is not the inverse of the forward map")
        for rid in set(fwd.values()):
            if rid not in self.docstore:
                problems.append(f"dangling parent {rid}")
        for rid in self.docstore.records:
            if not self.mapping.children(rid):
                problems.append(f"retrieve chunk {rid} has no search chunks")
        for doc_id in self.docstore.by_doc:
            if doc_id not in self.documents:
                problems.append(f"chunks of unknown document {doc_id}")
        return problems


def build_engine(docs, **kwargs) -> Engine:
    """In-memory engine over ``docs``."""
    engine = Engine(**kwargs)
    engine.add_documents(docs)
    return engine


def build_index_dir(docs, path, *, force: bool = False, corpus_root: str | None = None,
                    **kwargs) -> Engine:
    """Run the indexing pipeline into ``path`` and commit."""
    engine = Engine.create(path, force=force, **kwargs)
    if corpus_root is not None:
        engine.extra["corpus_root"] = str(Path(corpus_root).resolve())
    engine.add_documents(docs)
    engine.commit()
    return engine


__all__ = ["Engine", "build_engine", "build_index_dir", "doc_digest"]
