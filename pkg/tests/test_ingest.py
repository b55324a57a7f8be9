import os
import unicodedata

import pytest
from hypothesis import given, strategies as st

from sinr.errors import SpanError
from sinr.ingest import (
    BoundaryKind, TokenSpan, detokenize, load_corpus, make_document, normalize, tokenize,
)

from conftest import para


def test_empty_text_has_no_tokens():
    assert tokenize("") == []


def test_runs_of_whitespace_separate_tokens():
    assert [t.text for t in tokenize("warranty claims  handled")] == ["warranty", "claims", "handled"]


def test_hand_counted_paragraph():
    text = ("The claim was filed on Monday,  and the adjuster -- after visits --\n"
            "approved it (with notes) before\tFriday's deadline.")
    # counted by hand: The claim was filed on Monday, and the adjuster -- after
    # visits -- approved it (with notes) before Friday's deadline.
    assert len(tokenize(text)) == 20


def test_token_offsets_point_into_source():
    text = "  alpha\tbeta\n\ngamma "
    toks = tokenize(text)
    assert [(t.start, t.end) for t in toks] == [(2, 7), (8, 12), (14, 19)]
    assert all(text[t.start : t.end] == t.text for t in toks)


def test_detokenize_inner_span():
    toks = tokenize("a b c d")
    assert detokenize(toks, TokenSpan(1, 3)) == "b c"


def test_detokenize_keeps_inner_whitespace():
    toks = tokenize("one  two\n\nthree")
    assert detokenize(toks, TokenSpan(0, 3)) == "one  two\n\nthree"


def test_empty_span_is_rejected():
    with pytest.raises(SpanError):
        TokenSpan(0, 0)
    with pytest.raises(IndexError):
        TokenSpan(3, 2)


def test_span_past_the_end_is_rejected():
    with pytest.raises(SpanError):
        detokenize(tokenize("a b"), TokenSpan(1, 3))


def test_normalization_is_nfc_and_unifies_newlines():
    decomposed = "café\r\nx"
    assert normalize(decomposed) == "café\nx"


@given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=200))
def test_full_span_round_trip(text):
    norm = normalize(text)
    toks = tokenize(norm)
    if not toks:
        assert norm.strip() == ""
        return
    assert detokenize(toks, TokenSpan(0, len(toks))) == norm.strip()


@given(st.text(max_size=200))
def test_tokenize_is_pure(text):
    assert tokenize(text) == tokenize(text)


def test_tokens_are_maximal_non_whitespace_runs():
    text = unicodedata.normalize("NFC", "x y z w")
    # no-break and em spaces are whitespace too
    assert [t.text for t in tokenize(text)] == ["x", "y", "z", "w"]


def test_heading_markers_at_hand_counted_offsets():
    # "## Alpha" is 2 tokens, then 208 body tokens: second heading at 210
    text = "## Alpha\n\n" + para(208) + "\n\n## Beta\n\n" + para(30, "b")
    doc = make_document("h.md", text)
    headings = [m.token_offset for m in doc.structure_hints if m.kind is BoundaryKind.HEADING]
    assert headings == [0, 210]


def test_paragraph_and_rule_markers():
    text = "a b c\n\nd e\n\n---\n\nf g\nh"
    doc = make_document("p.md", text)
    assert [(m.kind, m.token_offset) for m in doc.structure_hints] == [
        (BoundaryKind.PARAGRAPH, 3),
        (BoundaryKind.HARD, 6),  # "---" is token 5; the break opens the next line
    ]


@given(st.lists(st.sampled_from(["word", "## head", "", "---", "x y z"]), max_size=40))
def test_markers_strictly_increase_and_stay_in_range(lines):
    doc = make_document("m.md", "\n".join(lines))
    offsets = [m.token_offset for m in doc.structure_hints]
    assert offsets == sorted(set(offsets))
    assert all(0 <= o <= len(doc.tokens) for o in offsets)


def test_empty_directory_is_an_empty_corpus(tmp_path):
    assert load_corpus(tmp_path) == []


def test_corpus_order_and_ids(tmp_path):
    (tmp_path / "b.txt").write_text("bee")
    (tmp_path / "a.txt").write_text("ay")
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "c.md").write_text("# see")
    (tmp_path / "skip.pdf").write_text("not eligible")
    docs = load_corpus(tmp_path)
    assert [d.doc_id for d in docs] == ["a.txt", "b.txt", "sub/c.md"]


def test_load_is_deterministic(tmp_path):
    for i in range(5):
        (tmp_path / f"{i}.txt").write_text(para(30 + i, f"t{i}_"))
    assert load_corpus(tmp_path) == load_corpus(tmp_path)


def test_bad_files_are_reported_and_skipped(tmp_path):
    (tmp_path / "good.txt").write_text("fine words")
    (tmp_path / "bad.txt").write_bytes(b"\xff\xfe\xfa broken")
    unreadable = tmp_path / "locked.md"
    unreadable.write_text("secret")
    unreadable.chmod(0)
    errors = []
    docs = load_corpus(tmp_path, errors)
    unreadable.chmod(0o644)
    ids = [d for d, _ in errors]
    assert "bad.txt" in ids
    if os.geteuid() != 0:  # root can read anything
        assert "locked.md" in ids
    assert "good.txt" in [d.doc_id for d in docs]


def test_missing_root_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path / "nope")
