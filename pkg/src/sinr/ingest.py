"""Corpus loading, normalization and whitespace tokenization."""

from __future__ import annotations

import logging
import os
import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple

from .errors import SpanError

log = logging.getLogger(__name__)

NORMAL_FORM = "NFC"
ELIGIBLE_SUFFIXES = (".txt", ".md")

_TOKEN_RE = re.compile(r"\S+")
_HEADING_RE = re.compile(r"^ {0,3}#{1,6}(\s|$)")
_RULE_RE = re.compile(r"^ {0,3}([-*_])( *\1){2,} *$")


class BoundaryKind(str, Enum):
    HEADING = "heading"
    PARAGRAPH = "paragraph-break"
    HARD = "hard-break"


# when several markers land on one token offset the strongest one is kept
_STRENGTH = {BoundaryKind.PARAGRAPH: 0, BoundaryKind.HEADING: 1, BoundaryKind.HARD: 2}


@dataclass(frozen=True)
class BoundaryMarker:
    kind: BoundaryKind
    token_offset: int


@dataclass(frozen=True)
class TokenSpan:
    start: int
    end: int

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise SpanError(f"invalid span [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def contains(self, other: "TokenSpan") -> bool:
        return self.start <= other.start and other.end <= self.end

    def overlaps(self, other: "TokenSpan") -> bool:
        return self.start < other.end and other.start < self.end


class Token(NamedTuple):
    text: str
    start: int  # character offset into the normalized source
    end: int


class Tokens(list):
    """A token list that remembers the text it was cut from."""

    def __init__(self, tokens, source: str) -> None:
        super().__init__(tokens)
        self.source = source


@dataclass
class Document:
    doc_id: str
    source_path: str
    text: str
    structure_hints: list[BoundaryMarker] = field(default_factory=list)
    _tokens: Tokens | None = field(default=None, repr=False, compare=False)

    @property
    def tokens(self) -> Tokens:
        if self._tokens is None:
            self._tokens = tokenize(self.text)
        return self._tokens

    def __len__(self) -> int:
        return len(self.tokens)


def normalize(text: str) -> str:
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    return unicodedata.normalize(NORMAL_FORM, text)


def tokenize(text: str) -> Tokens:
    """Split normalized ``text`` into maximal runs of non-whitespace."""
    text = unicodedata.normalize(NORMAL_FORM, text)
    return Tokens([Token(m.group(), *m.span()) for m in _TOKEN_RE.finditer(text)], text)


def detokenize(tokens: Tokens, span: TokenSpan) -> str:
    """Source text from the first to the last token of ``span``.

    Whitespace between tokens is preserved; whitespace before the first and
    after the last token is not part of any span.
    """
    if span.end > len(tokens):
        raise SpanError(f"span [{span.start}, {span.end}) exceeds {len(tokens)} tokens")
    return tokens.source[tokens[span.start].start : tokens[span.end - 1].end]


def extract_markers(text: str, tokens: Tokens) -> list[BoundaryMarker]:
    """Heading, blank-line and thematic-break markers by token offset."""
    found: dict[int, BoundaryKind] = {}

    def mark(offset: int, kind: BoundaryKind) -> None:
        if offset >= len(tokens):
            return
        prev = found.get(offset)
        if prev is None or _STRENGTH[kind] > _STRENGTH[prev]:
            found[offset] = kind

    starts = [t.start for t in tokens]
    pos = 0
    tok_i = 0
    blank_run = False
    pending_hard = False
    for line in text.split("\n"):
        # first token index at or after this line's start
        while tok_i < len(starts) and starts[tok_i] < pos:
            tok_i += 1
        stripped = line.strip()
        if not stripped:
            blank_run = True
        elif _RULE_RE.match(line):
            pending_hard = True
        else:
            if pending_hard:
                mark(tok_i, BoundaryKind.HARD)
                pending_hard = False
            if _HEADING_RE.match(line):
                mark(tok_i, BoundaryKind.HEADING)
            elif blank_run and tok_i > 0:
                mark(tok_i, BoundaryKind.PARAGRAPH)
            blank_run = False
        pos += len(line) + 1
    return [BoundaryMarker(kind, off) for off, kind in sorted(found.items())]


def make_document(doc_id: str, text: str, source_path: str = "") -> Document:
    text = normalize(text)
    tokens = tokenize(text)
    return Document(
        doc_id=doc_id,
        source_path=source_path or doc_id,
        text=text,
        structure_hints=extract_markers(text, tokens),
        _tokens=tokens,
    )


def read_document(path: Path, doc_id: str) -> Document:
    raw = path.read_bytes()
    return make_document(doc_id, raw.decode("utf-8"), str(path))


def load_corpus(root, errors: list | None = None) -> list[Document]:
    """Load every ``.txt``/``.md`` file under ``root`` as one document.

    ``doc_id`` is the path relative to ``root`` with ``/`` separators. Files
    that cannot be read or decoded are skipped and reported through
    ``errors`` as ``(doc_id, exception)`` pairs.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus root {root} is not a directory")
    paths = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in filenames:
            if name.endswith(ELIGIBLE_SUFFIXES):
                path = Path(dirpath) / name
                paths.append((path.relative_to(root).as_posix(), path))
    docs = []
    for doc_id, path in sorted(paths):
        try:
            docs.append(read_document(path, doc_id))
        except (OSError, UnicodeDecodeError) as exc:
            log.warning("skipping %s: %s", doc_id, exc)
            if errors is not None:
                errors.append((doc_id, exc))
    return docs
