import json

import pytest
from hypothesis import given, settings, strategies as st

from sinr.engine import build_engine
from sinr.errors import ContractError
from sinr.evaluation import (
    BaselineConfig, NeedleSpec, baseline_windows, build_baseline, generate_needle_corpus,
    run_eval, window_count,
)
from sinr.evaluation.corpus import synthetic_corpus
from sinr.evaluation.figures import render_figures
from sinr.ingest import TokenSpan


def enumerate_windows(n, size, overlap):
    """Slide a window by size-overlap until one reaches the end."""
    out, start = [], 0
    while n > 0:
        end = min(start + size, n)
        out.append((start, end))
        if end == n:
            break
        start += size - overlap
    return out


def test_thousand_token_document_windows():
    assert baseline_windows(1000, BaselineConfig()) == [(0, 500), (450, 950), (900, 1000)]


def test_baseline_config_validation():
    with pytest.raises(ContractError):
        BaselineConfig(chunk_tokens=50, overlap_tokens=50)


@settings(max_examples=300)
@given(st.integers(0, 20_000), st.integers(2, 800), st.data())
def test_window_count_matches_enumeration(n, size, data):
    overlap = data.draw(st.integers(0, size - 1))
    cfg = BaselineConfig(chunk_tokens=size, overlap_tokens=overlap)
    wins = enumerate_windows(n, size, overlap)
    assert baseline_windows(n, cfg) == wins
    assert window_count(n, cfg) == len(wins)


def test_empty_corpus_baseline():
    base = build_baseline([])
    assert base.chunks == {}
    chunks, _ = base.search("anything", 5)
    assert chunks == []


@pytest.fixture(scope="module")
def needles():
    return generate_needle_corpus(NeedleSpec(cases=24), seed=7)


def test_needle_corpus_is_deterministic(needles):
    docs, cases = generate_needle_corpus(NeedleSpec(cases=24), seed=7)
    assert [d.text for d in docs] == [d.text for d in needles[0]]
    assert cases == needles[1]
    other, _ = generate_needle_corpus(NeedleSpec(cases=24), seed=8)
    assert [d.text for d in other] != [d.text for d in docs]


def test_needle_placement(needles):
    docs, cases = needles
    by_id = {d.doc_id: d for d in docs}
    windows = {d.doc_id: baseline_windows(len(d.tokens), BaselineConfig()) for d in docs}
    assert sum(c.straddles_boundary for c in cases) == 18
    for case in cases:
        doc = by_id[case.doc_id]
        fact = " ".join(t.text for t in doc.tokens[case.span.start : case.span.end])
        assert fact == case.gold_text
        assert set(case.query.split()) <= set(fact.split())
        inside = [w for w in windows[case.doc_id] if w[0] <= case.span.start and case.span.end <= w[1]]
        # straddling facts fit in no baseline window; the rest fit in one
        assert (not inside) == case.straddles_boundary
        if case.straddles_boundary:
            assert case.span.start < 500 < case.span.end


def test_needle_spec_validation():
    with pytest.raises(ContractError):
        NeedleSpec(fact_tokens=(20, 30))
    with pytest.raises(ContractError):
        NeedleSpec(query_words=20, key_words=12)


@pytest.fixture(scope="module")
def report(needles):
    docs, cases = needles
    engine = build_engine(docs)
    baseline = build_baseline(docs, embedder=engine.embedder, params=engine.params)
    return run_eval(engine, baseline, cases, k=5)


def test_sinr_keeps_straddling_facts_whole(report):
    assert report.hit_rate("sinr", "straddling") > report.hit_rate("baseline", "straddling")
    assert report.fragmentation_rate("sinr", "straddling") == 0.0
    assert report.fragmentation_rate("baseline", "straddling") > 0.0


def test_rates_are_fractions(report):
    for system in ("sinr", "baseline"):
        for which in ("all", "straddling", "inside"):
            assert 0.0 <= report.hit_rate(system, which) <= 1.0
            assert 0.0 <= report.fragmentation_rate(system, which) <= 1.0


def test_fragmented_cases_are_misses(report):
    for c in report.cases:
        assert not (c.sinr_hit and c.sinr_fragmented)
        assert not (c.baseline_hit and c.baseline_fragmented)
        assert c.sinr_parents <= c.sinr_hits


def test_report_lines_parse(report):
    lines = report.to_lines(timings=False).splitlines()
    records = [json.loads(line) for line in lines]
    assert [r["type"] for r in records].count("case") == 24
    assert records[-1]["type"] == "summary"
    assert "ms" not in report.to_lines(timings=False)


def test_mismatched_corpora_rejected(needles):
    docs, cases = needles
    engine = build_engine(docs[:5])
    with pytest.raises(ContractError):
        run_eval(engine, build_baseline(docs[:6]), cases)


def test_judging_on_hand_built_spans():
    from sinr.evaluation.harness import _judge

    class Case:
        doc_id, span = "d", TokenSpan(440, 520)

    assert _judge([("d", TokenSpan(400, 700))], Case) == (True, False)
    assert _judge([("d", TokenSpan(0, 500)), ("d", TokenSpan(450, 950))], Case) == (False, True)
    assert _judge([("x", TokenSpan(0, 1000))], Case) == (False, False)
    assert _judge([("d", TokenSpan(0, 500))], Case) == (False, False)


def test_figures_written(report, tmp_path):
    paths = render_figures(report, tmp_path)
    assert [p.name for p in paths] == ["quality.png", "context.png", "latency.png"]
    for p in paths:
        assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_synthetic_corpus_reproducible():
    a = synthetic_corpus(5, seed=2)
    assert [d.text for d in a] == [d.text for d in synthetic_corpus(5, seed=2)]
    assert all(200 <= len(d.tokens) <= 450 for d in a)


def test_baseline_chunk_text_is_window(needles):
    docs, _ = needles
    base = build_baseline(docs[:1])
    toks = docs[0].tokens
    for c in base.chunks.values():
        assert c.text.split() == [t.text for t in toks[c.span.start : c.span.end]]
        assert c.n_tokens == len(c.span) <= 500
