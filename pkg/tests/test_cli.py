import json

import pytest
from click.testing import CliRunner

from sinr.cli import EXIT_FINGERPRINT, EXIT_USAGE, main
from sinr.storage import MANIFEST, MAP_HEADER_BYTES

from conftest import para


def invoke(*args, env=None):
    return CliRunner().invoke(main, [str(a) for a in args], env=env, catch_exceptions=False)


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory, small_corpus):
    root = tmp_path_factory.mktemp("corpus")
    for doc in small_corpus[:12]:
        (root / doc.doc_id).write_text(doc.text, encoding="utf-8")
    (root / "sub").mkdir()
    (root / "sub" / "long.md").write_text(
        "\n\n".join([para(900, "alpha"), para(900, "beta")]), encoding="utf-8")
    return root


@pytest.fixture(scope="module")
def index(tmp_path_factory, corpus_dir):
    ix = tmp_path_factory.mktemp("ix") / "index"
    result = invoke("index", corpus_dir, "--index-dir", ix)
    assert result.exit_code == 0, result.output
    return ix, result.output


def copy_index(src, dst):
    dst.mkdir()
    for p in src.iterdir():
        if p.name != ".lock":
            (dst / p.name).write_bytes(p.read_bytes())
    return dst


def test_index_reports_counts_from_manifest(index):
    ix, out = index
    manifest = json.loads((ix / MANIFEST).read_text())
    assert f"n (search chunks):   {manifest['counts']['search_chunks']}" in out
    assert f"m (retrieve chunks): {manifest['counts']['retrieve_chunks']}" in out
    assert "indexed 13 documents" in out


def test_index_refuses_non_empty_dir(index, corpus_dir):
    ix, _ = index
    assert invoke("index", corpus_dir, "--index-dir", ix).exit_code == EXIT_USAGE


def test_index_empty_corpus(tmp_path):
    (tmp_path / "empty").mkdir()
    result = invoke("--format", "line-records", "index", tmp_path / "empty",
                    "--index-dir", tmp_path / "ix")
    rec = json.loads(result.output)
    assert (rec["n"], rec["m"], rec["documents"]) == (0, 0, 0)
    out = invoke("query", "anything", "--index-dir", tmp_path / "ix").output
    assert out.startswith("0 results")


def test_unreadable_file_aborts_index(tmp_path):
    (tmp_path / "c").mkdir()
    (tmp_path / "c" / "bad.txt").write_bytes(b"\xff\xfe\x00broken")
    result = CliRunner().invoke(main, ["index", str(tmp_path / "c"), "--index-dir",
                                       str(tmp_path / "ix")])
    assert result.exit_code == 1
    assert "bad.txt" in result.output
    assert not (tmp_path / "ix" / MANIFEST).exists()


def test_query_consolidates_twenty_hits(index):
    ix, _ = index
    words = " ".join(f"alpha{i}" for i in range(300, 320))
    out = invoke("query", words, "--index-dir", ix, "--k", 20).output
    header = out.splitlines()[0]
    n_results = int(header.split()[0])
    assert "(20 hits" in header and 0 < n_results < 20
    assert "sub/long.md" in out.splitlines()[1]


def test_query_line_records_one_per_parent(index):
    ix, _ = index
    out = invoke("--format", "line-records", "query", "alpha5 alpha6 beta7", "--index-dir", ix,
                 "--k", 10).output
    records = [json.loads(line) for line in out.splitlines()]
    assert [r["rank"] for r in records] == list(range(1, len(records) + 1))
    assert len({r["retrieve_id"] for r in records}) == len(records)
    assert all({"doc_id", "score", "tokens", "span", "text"} <= set(r) for r in records)


def test_query_trace_and_explain(index, tmp_path):
    ix, _ = index
    trace = tmp_path / "t.jsonl"
    out = invoke("query", "alpha40 alpha41", "--index-dir", ix, "--trace", trace,
                 "--explain").output
    assert "unique parents" in out
    assert json.loads(trace.read_text())["query"] == "alpha40 alpha41"


def test_fingerprint_mismatch_exit_code(index):
    ix, _ = index
    result = CliRunner().invoke(main, ["query", "x", "--index-dir", str(ix), "--seed", "99"])
    assert result.exit_code == EXIT_FINGERPRINT
    assert "seed=99" in result.output


def test_missing_index(tmp_path):
    for cmd in (["stats"], ["query", "x"]):
        result = CliRunner().invoke(main, [*cmd, "--index-dir", str(tmp_path / "none")])
        assert result.exit_code == EXIT_USAGE


def test_no_index_dir_anywhere():
    result = CliRunner().invoke(main, ["stats"], env={"SINR_INDEX_DIR": ""})
    assert result.exit_code == EXIT_USAGE


def test_update_cycle(index, tmp_path, corpus_dir):
    ix = copy_index(index[0], tmp_path / "ix")
    target = corpus_dir / "sub" / "long.md"
    out = invoke("update", target, "--index-dir", ix).output
    assert out.startswith("sub/long.md: no-op")

    edited = tmp_path / "long.md"
    edited.write_text("\n\n".join([para(900, "alpha"), para(900, "gamma")]), encoding="utf-8")
    out = invoke("update", edited, "--doc-id", "sub/long.md", "--index-dir", ix).output
    assert "applied" in out and "timings (ms): identify=" in out
    out = invoke("query", " ".join(f"gamma{i}" for i in range(100, 130)), "--index-dir", ix,
                 "--k", 3).output
    assert "sub/long.md" in out.splitlines()[1]

    assert "no-op" in invoke("update", "--delete", "never-there.md", "--index-dir", ix).output
    assert "deleted" in invoke("update", "--delete", "sub/long.md", "--index-dir", ix).output
    rec = json.loads(invoke("--format", "line-records", "stats", "--index-dir", ix).output)
    assert rec["documents"] == 12


def test_update_needs_one_target(index):
    result = CliRunner().invoke(main, ["update", "--index-dir", str(index[0])])
    assert result.exit_code == EXIT_USAGE


def test_stats(index):
    ix, _ = index
    rec = json.loads(invoke("--format", "line-records", "stats", "--index-dir", ix).output)
    assert rec["mapping_bytes"] == 16 * rec["n"]
    assert (ix / "mapping.log").stat().st_size == rec["mapping_bytes"] + MAP_HEADER_BYTES
    assert rec["embedding_bytes"] == 4 * 256 * rec["n"]
    assert rec["mapping_embedding_ratio"] < 0.02
    assert rec["n_per_m"] == pytest.approx(rec["n"] / rec["m"])


def test_stats_empty_index(tmp_path):
    (tmp_path / "c").mkdir()
    invoke("index", tmp_path / "c", "--index-dir", tmp_path / "ix")
    rec = json.loads(invoke("--format", "line-records", "stats", "--index-dir",
                            tmp_path / "ix").output)
    assert rec["n"] == rec["m"] == rec["mapping_bytes"] == rec["embedding_bytes"] == 0


def strip_timings(lines):
    out = []
    for line in lines.splitlines():
        rec = json.loads(line)
        for key in ("sinr_timings", "baseline_timings", "latency_ms"):
            rec.pop(key, None)
        out.append(rec)
    return out


def test_eval_is_reproducible_and_sized(tmp_path):
    args = ["--format", "line-records", "eval", "--seed", 7, "--cases", 50]
    a, b = invoke(*args).output, invoke(*args).output
    assert strip_timings(a) == strip_timings(b)
    records = strip_timings(a)
    assert sum(r["type"] == "case" for r in records) == 50


def test_eval_text_and_figures(tmp_path):
    out = invoke("eval", "--cases", 8, "--out", tmp_path / "rep").output
    assert len([l for l in out.splitlines() if l.startswith("case-")]) == 8
    names = sorted(p.name for p in (tmp_path / "rep").iterdir())
    assert names == ["context.png", "latency.png", "quality.png", "report.jsonl", "summary.txt"]


def test_config_file_and_precedence(tmp_path, corpus_dir):
    cfg = tmp_path / "sinr.conf"
    cfg.write_text(f"# settings\nindex_dir = {tmp_path / 'from-config'}\nwindow_tokens = 120\n"
                   "stride_tokens = 60\nformat = line-records\n")
    rec = json.loads(invoke("--config", cfg, "index", corpus_dir).output)
    assert rec["index_dir"] == str(tmp_path / "from-config")
    manifest = json.loads((tmp_path / "from-config" / MANIFEST).read_text())
    assert manifest["chunking"]["window_tokens"] == 120

    # a flag beats the config, the config beats the environment
    rec = json.loads(invoke("--config", cfg, "index", corpus_dir, "--index-dir",
                            tmp_path / "flag", "--window-tokens", 140).output)
    assert rec["index_dir"] == str(tmp_path / "flag")
    assert json.loads((tmp_path / "flag" / MANIFEST).read_text())["chunking"]["window_tokens"] == 140
    rec = json.loads(invoke("--config", cfg, "stats", env={"SINR_INDEX_DIR": str(tmp_path / "flag")}).output)
    assert rec["n"] == json.loads((tmp_path / "from-config" / MANIFEST).read_text())["counts"]["search_chunks"]


def test_env_index_dir(index):
    ix, _ = index
    out = invoke("stats", env={"SINR_INDEX_DIR": str(ix)}).output
    assert out.startswith("documents:              13")


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "bad.conf"
    cfg.write_text("colour = blue\n")
    assert CliRunner().invoke(main, ["--config", str(cfg), "stats"]).exit_code == EXIT_USAGE
