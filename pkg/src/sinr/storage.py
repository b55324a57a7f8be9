"""Parent mapping, retrieve-chunk document store, manifest and the index directory.

Index directory layout::

    manifest.json    format version, configs, embedder fingerprint, counts
    mapping.log      16-byte header, then 16-byte records (search, retrieve)
    docstore.dat     retrieve-chunk records, text zlib-compressed
    docstore.idx     offset table into docstore.dat
    documents.json   per-document content digest
    vectors.seg      vector segment (see ``sinr.index.segment``)

Every commit writes complete new files next to the old ones, records them in
``journal.json`` and renames them into place. A crash before the journal is
written leaves the previous state; a crash after it is rolled forward on the
next open.
"""

from __future__ import annotations

import fcntl
import json
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

from .chunker import RetrieveChunk, bytes_to_id, id_to_bytes
from .errors import ConflictError, IndexStateError, NotFoundError
from .ingest import TokenSpan

FORMAT_VERSION = 1

MAP_MAGIC = b"SNMP"
_MAP_HEAD = struct.Struct("<4sIQ")
MAP_HEADER_BYTES = _MAP_HEAD.size  # 16
MAP_RECORD_BYTES = 16

DOC_MAGIC = b"SNDX"
_DOC_HEAD = struct.Struct("<4sIQ")
_DOC_ENTRY = struct.Struct("<8sQI")
_DOC_META = struct.Struct("<I")

MANIFEST = "manifest.json"
MAPPING = "mapping.log"
DOCSTORE_DAT = "docstore.dat"
DOCSTORE_IDX = "docstore.idx"
DOCUMENTS = "documents.json"
VECTORS = "vectors.seg"
JOURNAL = "journal.json"
LOCK = ".lock"
INDEX_FILES = (MANIFEST, MAPPING, DOCSTORE_DAT, DOCSTORE_IDX, DOCUMENTS, VECTORS)


class ParentMapping:
    """Forward search -> retrieve map with its exact inverse."""

    def __init__(self) -> None:
        self.forward: dict[str, str] = {}
        self.reverse: dict[str, list[str]] = {}

    def __len__(self) -> int:
        return len(self.forward)

    def __contains__(self, search_id: str) -> bool:
        return search_id in self.forward

    def put_mapping(self, pairs, known_parents=None) -> None:
        """Add ``(search_id, retrieve_id)`` pairs, all or nothing.

        Re-adding an identical pair is a no-op. Mapping a search id to a
        different parent than it already has raises :class:`ConflictError`.
        When ``known_parents`` is given every parent must be in it.
        """
        pairs = list(pairs)
        staged: dict[str, str] = {}
        for sid, rid in pairs:
            current = self.forward.get(sid, staged.get(sid))
            if current is not None and current != rid:
                raise ConflictError(f"{sid} already maps to {current}, not {rid}")
            if known_parents is not None and rid not in known_parents:
                raise NotFoundError(f"parent {rid} is not in the document store")
            staged[sid] = rid
        for sid, rid in staged.items():
            if sid not in self.forward:
                self.forward[sid] = rid
                self.reverse.setdefault(rid, []).append(sid)

    def lookup_parent(self, search_id: str) -> str:
        try:
            return self.forward[search_id]
        except KeyError:
            raise NotFoundError(search_id) from None

    def children(self, retrieve_id: str) -> list[str]:
        return self.reverse.get(retrieve_id, [])

    def remove_search(self, search_ids) -> None:
        for sid in search_ids:
            rid = self.forward.pop(sid, None)
            if rid is None:
                continue
            kids = self.reverse[rid]
            kids.remove(sid)
            if not kids:
                del self.reverse[rid]

    def rebuild_reverse(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for sid, rid in self.forward.items():
            out.setdefault(rid, []).append(sid)
        return out

    def dumps(self) -> bytes:
        parts = [_MAP_HEAD.pack(MAP_MAGIC, FORMAT_VERSION, len(self.forward))]
        parts.extend(id_to_bytes(sid) + id_to_bytes(rid) for sid, rid in self.forward.items())
        return b"".join(parts)

    @classmethod
    def loads(cls, data: bytes) -> "ParentMapping":
        magic, version, n = _MAP_HEAD.unpack_from(data, 0)
        if magic != MAP_MAGIC or version != FORMAT_VERSION:
            raise IndexStateError("bad mapping log header")
        if len(data) != MAP_HEADER_BYTES + MAP_RECORD_BYTES * n:
            raise IndexStateError("mapping log length does not match its record count")
        out = cls()
        mv = memoryview(data)
        pos = MAP_HEADER_BYTES
        for _ in range(n):
            sid = bytes_to_id("s", bytes(mv[pos : pos + 8]))
            rid = bytes_to_id("r", bytes(mv[pos + 8 : pos + 16]))
            out.forward[sid] = rid
            out.reverse.setdefault(rid, []).append(sid)
            pos += 16
        return out

    def mapping_size_bytes(self) -> int:
        """Size of the serialized forward map: fixed header plus 16 bytes per entry."""
        return MAP_HEADER_BYTES + MAP_RECORD_BYTES * len(self.forward)


@dataclass(frozen=True)
class StoredRetrieveChunk:
    retrieve_id: str
    doc_id: str
    span: TokenSpan
    text: str
    ordinal: int
    sibling_count: int

    @property
    def n_tokens(self) -> int:
        return len(self.span)


@dataclass(frozen=True)
class _Record:
    doc_id: str
    start: int
    end: int
    ordinal: int
    blob: bytes  # zlib-compressed UTF-8 text

    @property
    def text(self) -> str:
        return zlib.decompress(self.blob).decode("utf-8")


class DocStore:
    """Retrieve chunks keyed by id, text compressed at rest."""

    def __init__(self) -> None:
        self.records: dict[str, _Record] = {}
        self.by_doc: dict[str, list[str]] = {}

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, retrieve_id: str) -> bool:
        return retrieve_id in self.records

    def put(self, chunk: RetrieveChunk) -> None:
        old = self.records.get(chunk.retrieve_id)
        if old is not None:
            if (old.doc_id, old.start, old.end) != (chunk.doc_id, chunk.span.start, chunk.span.end):
                raise ConflictError(f"id collision on {chunk.retrieve_id}")
            return
        self.records[chunk.retrieve_id] = _Record(
            chunk.doc_id, chunk.span.start, chunk.span.end, chunk.ordinal,
            zlib.compress(chunk.text.encode("utf-8"), 6),
        )
        ids = self.by_doc.setdefault(chunk.doc_id, [])
        ids.append(chunk.retrieve_id)
        ids.sort(key=lambda r: self.records[r].ordinal)

    def delete(self, retrieve_id: str) -> None:
        rec = self.records.pop(retrieve_id, None)
        if rec is None:
            return
        ids = self.by_doc[rec.doc_id]
        ids.remove(retrieve_id)
        if not ids:
            del self.by_doc[rec.doc_id]

    def record(self, retrieve_id: str) -> _Record:
        return self.records[retrieve_id]

    def text_bytes(self) -> int:
        return sum(len(r.blob) for r in self.records.values())

    def dumps(self) -> tuple[bytes, bytes]:
        """``(docstore.dat, docstore.idx)`` payloads."""
        dat = bytearray()
        idx = [_DOC_HEAD.pack(DOC_MAGIC, FORMAT_VERSION, len(self.records))]
        for rid, rec in self.records.items():
            meta = json.dumps(
                [rid, rec.doc_id, rec.start, rec.end, rec.ordinal], separators=(",", ":")
            ).encode("utf-8")
            body = _DOC_META.pack(len(meta)) + meta + rec.blob
            idx.append(_DOC_ENTRY.pack(id_to_bytes(rid), len(dat), len(body)))
            dat += body
        return bytes(dat), b"".join(idx)

    @classmethod
    def loads(cls, dat: bytes, idx: bytes) -> "DocStore":
        magic, version, n = _DOC_HEAD.unpack_from(idx, 0)
        if magic != DOC_MAGIC or version != FORMAT_VERSION:
            raise IndexStateError("bad docstore index header")
        out = cls()
        pos = _DOC_HEAD.size
        for _ in range(n):
            raw, off, length = _DOC_ENTRY.unpack_from(idx, pos)
            pos += _DOC_ENTRY.size
            (mlen,) = _DOC_META.unpack_from(dat, off)
            rid, doc_id, start, end, ordinal = json.loads(dat[off + 4 : off + 4 + mlen])
            if id_to_bytes(rid) != raw:
                raise IndexStateError(f"docstore index/data disagree at offset {off}")
            out.records[rid] = _Record(doc_id, start, end, ordinal,
                                       bytes(dat[off + 4 + mlen : off + length]))
            out.by_doc.setdefault(doc_id, []).append(rid)
        for ids in out.by_doc.values():
            ids.sort(key=lambda r: out.records[r].ordinal)
        return out


class IndexDirectory:
    """Files of one index plus the writer lock and the commit journal."""

    def __init__(self, path) -> None:
        self.path = Path(path)
        self._lock_fd: int | None = None

    def exists(self) -> bool:
        return (self.path / MANIFEST).is_file()

    def is_empty(self) -> bool:
        return not self.path.exists() or not any(self.path.iterdir())

    def lock(self) -> None:
        """Take the single-writer lock; raises if another writer holds it."""
        if self._lock_fd is not None:
            return
        self.path.mkdir(parents=True, exist_ok=True)
        fd = os.open(self.path / LOCK, os.O_RDWR | os.O_CREAT, 0o644)
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            os.close(fd)
            raise IndexStateError(f"{self.path} is locked by another writer") from None
        self._lock_fd = fd

    def unlock(self) -> None:
        if self._lock_fd is not None:
            fcntl.flock(self._lock_fd, fcntl.LOCK_UN)
            os.close(self._lock_fd)
            self._lock_fd = None

    def read(self, name: str) -> bytes:
        return (self.path / name).read_bytes()

    def recover(self) -> None:
        """Finish or discard a commit interrupted by a crash."""
        journal = self.path / JOURNAL
        if journal.exists():
            try:
                names = json.loads(journal.read_text())["files"]
            except (ValueError, KeyError):
                names = None
            if names is not None:
                for name in names:
                    tmp = self.path / (name + ".tmp")
                    if tmp.exists():
                        os.replace(tmp, self.path / name)
            journal.unlink()
        for tmp in self.path.glob("*.tmp"):
            tmp.unlink()

    def commit(self, files: dict[str, bytes], hook=None) -> None:
        """Atomically replace ``files``. ``hook(stage)`` is called at
        ``"prepared"`` (temp files written) and ``"journaled"``."""
        self.path.mkdir(parents=True, exist_ok=True)
        for name, data in files.items():
            _write_synced(self.path / (name + ".tmp"), data)
        if hook:
            hook("prepared")
        _write_synced(self.path / JOURNAL, json.dumps({"files": sorted(files)}).encode())
        if hook:
            hook("journaled")
        for name in files:
            os.replace(self.path / (name + ".tmp"), self.path / name)
        (self.path / JOURNAL).unlink()
        _fsync_dir(self.path)

    def discard_pending(self) -> None:
        """Drop temp files of a commit that failed before its journal."""
        if not (self.path / JOURNAL).exists():
            for tmp in self.path.glob("*.tmp"):
                tmp.unlink()


def _write_synced(path: Path, data: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())


def _fsync_dir(path: Path) -> None:
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


def dump_json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8")
