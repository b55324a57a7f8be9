"""``sinr`` command line: index, query, update, stats, eval.

Exit codes: 0 ok, 1 runtime failure, 2 usage or index-state error,
3 embedder fingerprint mismatch.
"""

from __future__ import annotations

import configparser
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click

from .chunker import ChunkingConfig
from .embedding import EmbedderSpec, make_embedder
from .engine import Engine, build_engine, build_index_dir
from .errors import FingerprintMismatch, IndexStateError, SinrError
from .index import BACKENDS, HnswParams
from .ingest import load_corpus, read_document
from .query import QueryRequest, explain, retrieve, write_trace
from .storage import (
    DOCSTORE_DAT, DOCSTORE_IDX, INDEX_FILES, MAP_HEADER_BYTES, MAPPING, VECTORS,
)
from .updater import delete_document, update_document

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_FINGERPRINT = 0, 1, 2, 3
ENV_INDEX_DIR = "SINR_INDEX_DIR"

log = logging.getLogger("sinr")

CHUNK_KEYS = tuple(ChunkingConfig.KEYS)
EMBED_KEYS = ("provider", "dim", "seed", "url")
INDEX_KEYS = ("max_links", "ef_construction", "ef_search", "level_seed", "backend")
CONFIG_KEYS = ("index_dir", "format") + CHUNK_KEYS + EMBED_KEYS + INDEX_KEYS
_INT_KEYS = set(CHUNK_KEYS) | {"dim", "seed", "max_links", "ef_construction", "ef_search",
                               "level_seed"}


class CliFailure(click.ClickException):
    def __init__(self, message: str, code: int) -> None:
        super().__init__(message)
        self.exit_code = code


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` comments; no sections needed."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    try:
        text = Path(path).read_text(encoding="utf-8")
        parser.read_string("[sinr]\n" + text)
    except (OSError, configparser.Error) as exc:
        raise CliFailure(f"cannot read config {path}: {exc}", EXIT_USAGE) from None
    out = {}
    for key, value in parser["sinr"].items():
        if key not in CONFIG_KEYS:
            raise CliFailure(f"unknown config key {key!r} in {path}", EXIT_USAGE)
        if key in _INT_KEYS:
            try:
                value = int(value, 0)
            except ValueError:
                raise CliFailure(f"config key {key} needs an integer", EXIT_USAGE) from None
        out[key] = value
    return out


class Settings:
    """Defaults < config file < command-line flags."""

    def __init__(self, config: dict, fmt: str | None) -> None:
        self.config = config
        self.format = fmt or config.get("format", "text")
        if self.format not in ("text", "line-records"):
            raise CliFailure(f"unknown format {self.format!r}", EXIT_USAGE)

    def value(self, key: str, flag):
        return flag if flag is not None else self.config.get(key)

    def index_dir(self, flag) -> Path:
        path = flag or self.config.get("index_dir") or os.environ.get(ENV_INDEX_DIR)
        if not path:
            raise CliFailure(f"no index directory: pass --index-dir or set {ENV_INDEX_DIR}",
                             EXIT_USAGE)
        return Path(path)

    def chunking(self, flags: dict) -> ChunkingConfig:
        values = {k: self.value(k, flags.get(k)) for k in CHUNK_KEYS}
        return ChunkingConfig.from_dict({k: v for k, v in values.items() if v is not None})

    def embedder_spec(self, flags: dict, base: EmbedderSpec | None = None) -> EmbedderSpec:
        spec = base or EmbedderSpec()
        changes = {k: self.value(k, flags.get(k)) for k in EMBED_KEYS}
        changes = {k: v for k, v in changes.items() if v is not None}
        if changes.get("provider") == "local-hash":
            changes.setdefault("url", None)
        if changes and spec.provider == "remote":
            changes["provider_fingerprint"] = None
        return replace(spec, **changes)

    def params(self, flags: dict) -> tuple[HnswParams, str]:
        base = HnswParams()
        values = {k: self.value(k, flags.get(k)) for k in INDEX_KEYS}
        params = replace(base, **{k: v for k, v in values.items()
                                  if v is not None and k != "backend"})
        return params, values["backend"] or "hnsw"

    def emit(self, record: dict, text: str) -> None:
        if self.format == "line-records":
            click.echo(json.dumps(record, ensure_ascii=False, sort_keys=True,
                                  separators=(",", ":")))
        else:
            click.echo(text)


def _settings() -> Settings:
    return click.get_current_context().find_object(Settings)


def _run(fn):
    """Map library errors onto exit codes."""
    try:
        return fn()
    except FingerprintMismatch as exc:
        raise CliFailure(str(exc), EXIT_FINGERPRINT) from None
    except IndexStateError as exc:
        raise CliFailure(str(exc), EXIT_USAGE) from None
    except SinrError as exc:
        raise CliFailure(f"{type(exc).__name__}: {exc}", EXIT_FAILURE) from None
    except OSError as exc:
        raise CliFailure(str(exc), EXIT_FAILURE) from None


def _open(path: Path, **kwargs) -> Engine:
    if not (path / INDEX_FILES[0]).is_file():
        raise CliFailure(f"no index at {path}", EXIT_USAGE)
    return Engine.open(path, **kwargs)


index_dir_option = click.option("--index-dir", type=click.Path(file_okay=False),
                                help=f"Index directory (default: ${ENV_INDEX_DIR}).")


def embedder_options(fn):
    for name, kind, text in reversed((
        ("provider", click.Choice(["local-hash", "remote"]), "Embedding provider."),
        ("dim", click.IntRange(min=1), "Embedding dimension."),
        ("seed", int, "Hash seed of the local embedder."),
        ("url", str, "Endpoint of the remote embedder."),
    )):
        fn = click.option(f"--{name}", type=kind, default=None, help=text)(fn)
    return fn


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="Flat key = value config file.")
@click.option("--format", "fmt", type=click.Choice(["text", "line-records"]), default=None,
              help="Output format.")
@click.option("-v", "--verbose", is_flag=True, help="Diagnostics on stderr.")
@click.pass_context
def main(ctx: click.Context, config_path, fmt, verbose) -> None:
    """Dual-layer retrieval: small windows are searched, their structural
    parents are returned."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    if verbose:
        logging.getLogger("numba").setLevel(logging.WARNING)
        logging.getLogger("matplotlib").setLevel(logging.WARNING)
    ctx.obj = Settings(read_config(config_path) if config_path else {}, fmt)


def _file_sizes(path: Path) -> dict:
    sizes = {name: (path / name).stat().st_size for name in INDEX_FILES}
    return {
        "vectors": sizes[VECTORS],
        "mapping": sizes[MAPPING],
        "docstore": sizes[DOCSTORE_DAT] + sizes[DOCSTORE_IDX],
        "total": sum(sizes.values()),
    }


@main.command("index")
@click.argument("corpus_dir", type=click.Path(file_okay=False))
@index_dir_option
@click.option("--force", is_flag=True, help="Overwrite an existing index.")
@click.option("--window-tokens", type=int)
@click.option("--stride-tokens", type=int)
@click.option("--min-retrieve-tokens", type=int)
@click.option("--max-retrieve-tokens", type=int)
@click.option("--min-tail-tokens", type=int)
@embedder_options
@click.option("--max-links", type=click.IntRange(min=2))
@click.option("--ef-construction", type=click.IntRange(min=1))
@click.option("--ef-search", type=click.IntRange(min=1))
@click.option("--backend", type=click.Choice(BACKENDS))
def cmd_index(corpus_dir, index_dir, force, **flags) -> None:
    """Build an index over every .txt/.md file under CORPUS_DIR."""
    s = _settings()
    path = s.index_dir(index_dir)

    def run():
        chunking = s.chunking(flags)
        spec = s.embedder_spec(flags)
        params, backend = s.params(flags)
        if path.exists() and any(path.iterdir()) and not force:
            raise CliFailure(f"{path} is not empty (use --force to overwrite)", EXIT_USAGE)
        errors: list = []
        docs = load_corpus(corpus_dir, errors)
        if errors:
            for doc_id, exc in errors:
                click.echo(f"ingest error: {doc_id}: {exc}", err=True)
            raise CliFailure(f"{len(errors)} file(s) could not be read; nothing written",
                             EXIT_FAILURE)
        engine = build_index_dir(docs, path, force=force, corpus_root=corpus_dir,
                                 chunking=chunking, embedder_spec=spec, params=params,
                                 backend=backend)
        try:
            counts = engine.counts
        finally:
            engine.close()
        sizes = _file_sizes(path)
        record = {"type": "index", "index_dir": str(path), "documents": counts["documents"],
                  "n": counts["search_chunks"], "m": counts["retrieve_chunks"], "bytes": sizes}
        s.emit(record, "\n".join([
            f"indexed {counts['documents']} documents into {path}",
            f"n (search chunks):   {record['n']}",
            f"m (retrieve chunks): {record['m']}",
            f"bytes: vectors={sizes['vectors']} mapping={sizes['mapping']} "
            f"docstore={sizes['docstore']} total={sizes['total']}",
        ]))

    _run(run)


@main.command("query")
@click.argument("text")
@index_dir_option
@click.option("--k", type=click.IntRange(min=1), default=20, show_default=True,
              help="Search hits before parent consolidation.")
@click.option("--max-context-tokens", type=click.IntRange(min=1))
@click.option("--max-parents", type=click.IntRange(min=1))
@click.option("--trace", "trace_path", type=click.Path(dir_okay=False),
              help="Append the query trace record to this file.")
@click.option("--explain", "show_explain", is_flag=True, help="Print the hit-to-parent chain.")
@embedder_options
def cmd_query(text, index_dir, k, max_context_tokens, max_parents, trace_path, show_explain,
              **flags) -> None:
    """Retrieve parent chunks for TEXT."""
    s = _settings()
    path = s.index_dir(index_dir)

    def run():
        engine = _open(path)
        spec = s.embedder_spec(flags, base=engine.embedder_spec)
        embedder = None
        if spec != engine.embedder_spec:
            embedder = make_embedder(spec)
        req = QueryRequest(text, k=k, max_context_tokens=max_context_tokens,
                           max_parents=max_parents)
        result = retrieve(req, engine, embedder=embedder)
        if trace_path:
            write_trace(trace_path, result.trace)
        scores = {p.retrieve_id: p.best_score for p in result.trace.parents}
        if s.format == "line-records":
            for rank, chunk in enumerate(result.parents, 1):
                s.emit({"rank": rank, "retrieve_id": chunk.retrieve_id, "doc_id": chunk.doc_id,
                        "score": scores[chunk.retrieve_id], "tokens": chunk.n_tokens,
                        "span": [chunk.span.start, chunk.span.end], "text": chunk.text}, "")
            return
        click.echo(f"{len(result.parents)} results "
                   f"({len(result.trace.hits)} hits, {result.total_context_tokens} tokens)")
        for rank, chunk in enumerate(result.parents, 1):
            preview = " ".join(chunk.text.split()[:12])
            click.echo(f"{rank:>3}. {chunk.retrieve_id}  score={scores[chunk.retrieve_id]:.4f}  "
                       f"tokens={chunk.n_tokens}  {chunk.doc_id}[{chunk.span.start}:"
                       f"{chunk.span.end}]  {preview}")
        if result.over_budget:
            click.echo("warning: the top parent alone exceeds --max-context-tokens", err=True)
        if show_explain:
            click.echo(explain(result.trace), nl=False)

    _run(run)


@main.command("update")
@click.argument("file", required=False, type=click.Path(dir_okay=False))
@index_dir_option
@click.option("--doc-id", help="Document id (default: path relative to the indexed corpus).")
@click.option("--delete", "delete_id", metavar="DOC_ID", help="Remove a document.")
def cmd_update(file, index_dir, doc_id, delete_id) -> None:
    """Re-index FILE, or remove a document with --delete."""
    s = _settings()
    path = s.index_dir(index_dir)
    if bool(file) == bool(delete_id):
        raise click.UsageError("give exactly one of FILE or --delete")

    def run():
        engine = _open(path, writable=True)
        try:
            if delete_id:
                report = delete_document(delete_id, engine)
            else:
                report = update_document(
                    read_document(Path(file), doc_id or _default_doc_id(engine, Path(file))),
                    engine)
        except SinrError as exc:
            log.debug("update failed", exc_info=True)
            raise CliFailure(f"update rolled back: {type(exc).__name__}: {exc}",
                             EXIT_FAILURE) from None
        finally:
            engine.close()
        t = report.timings
        s.emit({"type": "update", **report.to_record()}, "\n".join([
            f"{report.doc_id}: {report.status}",
            f"search chunks -{report.removed_search} +{report.added_search}, "
            f"retrieve chunks -{report.removed_retrieve} +{report.added_retrieve}",
            "timings (ms): " + " ".join(f"{k}={t[k] * 1e3:.3f}"
                                        for k in ("identify", "delete", "reembed", "update")),
        ]))

    _run(run)


def _default_doc_id(engine: Engine, file: Path) -> str:
    root = engine.extra.get("corpus_root")
    if root:
        try:
            return file.resolve().relative_to(root).as_posix()
        except ValueError:
            pass
    return file.name


def stats_record(engine: Engine) -> dict:
    counts = engine.counts
    n, m = counts["search_chunks"], counts["retrieve_chunks"]
    embedding = 4 * engine.embedder_spec.dim * n
    mapping = engine.mapping.mapping_size_bytes() - MAP_HEADER_BYTES if n else 0
    return {
        "type": "stats",
        "documents": counts["documents"],
        "n": n,
        "m": m,
        "n_per_m": n / m if m else 0.0,
        "embedding_bytes": embedding,
        "mapping_bytes": mapping,
        "text_bytes": engine.docstore.text_bytes(),
        "mapping_embedding_ratio": mapping / embedding if embedding else 0.0,
    }


@main.command("stats")
@index_dir_option
def cmd_stats(index_dir) -> None:
    """Storage accounting for an index."""
    s = _settings()
    path = s.index_dir(index_dir)

    def run():
        engine = _open(path)
        rec = stats_record(engine)
        s.emit(rec, "\n".join([
            f"documents:              {rec['documents']}",
            f"n (search chunks):      {rec['n']}",
            f"m (retrieve chunks):    {rec['m']}",
            f"n/m:                    {rec['n_per_m']:.3f}",
            f"embedding bytes:        {rec['embedding_bytes']}",
            f"mapping bytes:          {rec['mapping_bytes']}",
            f"text bytes:             {rec['text_bytes']}",
            f"mapping/embedding:      {100 * rec['mapping_embedding_ratio']:.3f}%",
        ]))

    _run(run)


@main.command("eval")
@index_dir_option
@click.option("--force", is_flag=True, help="Overwrite --index-dir if it is not empty.")
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--cases", type=click.IntRange(min=1), default=60, show_default=True)
@click.option("--k", type=click.IntRange(min=1), default=5, show_default=True)
@click.option("--dedup-k", type=click.IntRange(min=1), default=20, show_default=True,
              help="Hit count for measuring parent consolidation.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              help="Write report.jsonl, summary.txt and PNG figures here.")
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--backend", type=click.Choice(BACKENDS))
def cmd_eval(index_dir, force, seed, cases, k, dedup_k, out_dir, workers, backend) -> None:
    """Compare against uniform 500/50 chunking on a planted-fact corpus."""
    from .evaluation import NeedleSpec, build_baseline, generate_needle_corpus, run_eval

    s = _settings()

    def run():
        docs, needle_cases = generate_needle_corpus(NeedleSpec(cases=cases), seed=seed)
        params, default_backend = s.params({})
        kwargs = dict(chunking=s.chunking({}), embedder_spec=s.embedder_spec({}), params=params,
                      backend=backend or default_backend)
        if index_dir:
            engine = build_index_dir(docs, index_dir, force=force, **kwargs)
            engine.close()
        else:
            engine = build_engine(docs, **kwargs)
        baseline = build_baseline(docs, embedder=engine.embedder, params=engine.params,
                                  backend=engine.backend)
        report = run_eval(engine, baseline, needle_cases, k, dedup_k=dedup_k, workers=workers)
        if s.format == "line-records":
            click.echo(report.to_lines(), nl=False)
        else:
            click.echo(f"{'case':<10}{'straddles':>10}{'sinr':>6}{'base':>6}"
                       f"{'parents':>9}{'sinr_tok':>10}{'base_tok':>10}")
            for c in report.cases:
                click.echo(f"{c.case_id:<10}{'yes' if c.straddles_boundary else 'no':>10}"
                           f"{int(c.sinr_hit):>6}{int(c.baseline_hit):>6}{c.sinr_parents:>9}"
                           f"{c.sinr_context_tokens:>10}{c.baseline_context_tokens:>10}")
            click.echo("")
            click.echo(report.table(), nl=False)
        if out_dir:
            from .evaluation.figures import render_figures

            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / "report.jsonl").write_text(report.to_lines(), encoding="utf-8")
            (out / "summary.txt").write_text(report.table(), encoding="utf-8")
            for fig in render_figures(report, out):
                log.info("wrote %s", fig)

    _run(run)


if __name__ == "__main__":
    main()
