"""Side-by-side comparison of the dual-layer engine and the uniform baseline."""

from __future__ import annotations

import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from ..errors import ContractError
from ..query import QueryRequest, retrieve

REPORT_FORMAT_VERSION = 1
SINR_STAGES = ("embed", "search", "map", "fetch")
BASELINE_STAGES = ("embed", "search")

# stands in for "contextual recall", which has no formal definition upstream
HIT_DEFINITION = "full containment of the gold span in one returned chunk"


@dataclass
class CaseResult:
    case_id: str
    straddles_boundary: bool
    sinr_hit: bool
    baseline_hit: bool
    sinr_fragmented: bool
    baseline_fragmented: bool
    sinr_hits: int
    sinr_parents: int
    sinr_context_tokens: int
    baseline_context_tokens: int
    dedup_hits: int
    dedup_parents: int
    sinr_timings: dict[str, float] = field(default_factory=dict)
    baseline_timings: dict[str, float] = field(default_factory=dict)

    def to_record(self, timings: bool = True) -> dict:
        rec = {
            "type": "case",
            "case_id": self.case_id,
            "straddles_boundary": self.straddles_boundary,
            "sinr_hit": self.sinr_hit,
            "baseline_hit": self.baseline_hit,
            "sinr_fragmented": self.sinr_fragmented,
            "baseline_fragmented": self.baseline_fragmented,
            "sinr_hits": self.sinr_hits,
            "sinr_parents": self.sinr_parents,
            "sinr_context_tokens": self.sinr_context_tokens,
            "baseline_context_tokens": self.baseline_context_tokens,
            "dedup_hits": self.dedup_hits,
            "dedup_parents": self.dedup_parents,
        }
        if timings:
            rec["sinr_timings"] = self.sinr_timings
            rec["baseline_timings"] = self.baseline_timings
        return rec


def _rate(flags) -> float:
    flags = list(flags)
    return sum(flags) / len(flags) if flags else 0.0


def _mean(values) -> float:
    values = list(values)
    return statistics.fmean(values) if values else 0.0


@dataclass
class EvalReport:
    k: int
    dedup_k: int
    cases: list[CaseResult]
    fingerprint: str
    corpus_hash: str

    def _subset(self, which: str) -> list[CaseResult]:
        if which == "straddling":
            return [c for c in self.cases if c.straddles_boundary]
        if which == "inside":
            return [c for c in self.cases if not c.straddles_boundary]
        return list(self.cases)

    def hit_rate(self, system: str, which: str = "all") -> float:
        return _rate(getattr(c, f"{system}_hit") for c in self._subset(which))

    def fragmentation_rate(self, system: str, which: str = "all") -> float:
        return _rate(getattr(c, f"{system}_fragmented") for c in self._subset(which))

    def latency_ms(self) -> dict[str, dict[str, float]]:
        return {
            "sinr": {s: 1e3 * _mean(c.sinr_timings[s] for c in self.cases) for s in SINR_STAGES},
            "baseline": {s: 1e3 * _mean(c.baseline_timings[s] for c in self.cases)
                         for s in BASELINE_STAGES},
        }

    def summary(self, timings: bool = True) -> dict:
        out = {
            "type": "summary",
            "format_version": REPORT_FORMAT_VERSION,
            "hit_definition": HIT_DEFINITION,
            "k": self.k,
            "dedup_k": self.dedup_k,
            "cases": len(self.cases),
            "straddling_cases": len(self._subset("straddling")),
            "fingerprint": self.fingerprint,
            "corpus_hash": self.corpus_hash,
        }
        for system in ("sinr", "baseline"):
            for which in ("all", "straddling", "inside"):
                out[f"{system}_hit_rate_{which}"] = self.hit_rate(system, which)
                out[f"{system}_fragmentation_{which}"] = self.fragmentation_rate(system, which)
        out["sinr_mean_parents"] = _mean(c.sinr_parents for c in self.cases)
        out["sinr_mean_dedup_parents"] = _mean(c.dedup_parents for c in self.cases)
        out["sinr_mean_dedup_hits"] = _mean(c.dedup_hits for c in self.cases)
        out["sinr_mean_context_tokens"] = _mean(c.sinr_context_tokens for c in self.cases)
        out["baseline_mean_context_tokens"] = _mean(c.baseline_context_tokens for c in self.cases)
        if timings:
            out["latency_ms"] = self.latency_ms()
        return out

    def to_records(self, timings: bool = True) -> list[dict]:
        return [c.to_record(timings) for c in self.cases] + [self.summary(timings)]

    def to_lines(self, timings: bool = True) -> str:
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n"
                       for r in self.to_records(timings))

    def table(self) -> str:
        s = self.summary()
        rows = [
            ("hit@%d (all)" % self.k, "hit_rate_all", "{:.3f}"),
            ("hit@%d (straddling)" % self.k, "hit_rate_straddling", "{:.3f}"),
            ("hit@%d (inside)" % self.k, "hit_rate_inside", "{:.3f}"),
            ("fragmentation (all)", "fragmentation_all", "{:.3f}"),
            ("fragmentation (straddling)", "fragmentation_straddling", "{:.3f}"),
            ("mean context tokens", "mean_context_tokens", "{:.1f}"),
        ]
        lines = [f"{'metric':<30}{'sinr':>12}{'baseline':>12}"]
        for label, key, fmt in rows:
            lines.append(f"{label:<30}{fmt.format(s['sinr_' + key]):>12}"
                         f"{fmt.format(s['baseline_' + key]):>12}")
        lines.append(f"{'unique parents @%d' % self.k:<30}{s['sinr_mean_parents']:>12.2f}{'-':>12}")
        lines.append(f"{'hits -> parents @%d' % self.dedup_k:<30}"
                     f"{s['sinr_mean_dedup_hits']:>5.1f} -> {s['sinr_mean_dedup_parents']:<4.1f}{'-':>12}")
        lat = s["latency_ms"]
        lines.append("latency ms  sinr: " + " ".join(f"{k}={v:.3f}" for k, v in lat["sinr"].items()))
        lines.append("latency ms  base: " + " ".join(f"{k}={v:.3f}" for k, v in lat["baseline"].items()))
        lines.append(f"cases: {s['cases']} ({s['straddling_cases']} straddling); hit = {HIT_DEFINITION}")
        return "\n".join(lines) + "\n"


def _judge(chunks, case) -> tuple[bool, bool]:
    """``(hit, fragmented)`` for ``(doc_id, span)`` pairs returned by a system."""
    spans = [span for doc_id, span in chunks if doc_id == case.doc_id]
    hit = any(span.contains(case.span) for span in spans)
    touching = sum(span.overlaps(case.span) for span in spans)
    return hit, (not hit and touching >= 2)


def _run_case(engine, baseline, case, k: int, dedup_k: int) -> CaseResult:
    res = retrieve(QueryRequest(case.query, k=k), engine)
    wide = retrieve(QueryRequest(case.query, k=dedup_k), engine) if dedup_k != k else res
    base_chunks, base_timings = baseline.search(case.query, k)
    s_hit, s_frag = _judge([(p.doc_id, p.span) for p in res.parents], case)
    b_hit, b_frag = _judge([(c.doc_id, c.span) for c in base_chunks], case)
    return CaseResult(
        case_id=case.case_id,
        straddles_boundary=case.straddles_boundary,
        sinr_hit=s_hit, baseline_hit=b_hit,
        sinr_fragmented=s_frag, baseline_fragmented=b_frag,
        sinr_hits=len(res.trace.hits),
        sinr_parents=len(res.parents),
        sinr_context_tokens=res.total_context_tokens,
        baseline_context_tokens=sum(c.n_tokens for c in base_chunks),
        dedup_hits=len(wide.trace.hits),
        dedup_parents=len(wide.parents),
        sinr_timings=dict(res.trace.timings),
        baseline_timings=base_timings,
    )


def run_eval(engine, baseline, cases, k: int = 5, *, dedup_k: int = 20,
             workers: int = 1) -> EvalReport:
    """Query both systems with every case and score them.

    Raises :class:`ContractError` unless both were built over the same
    documents with the same embedder.
    """
    if k < 1 or dedup_k < 1:
        raise ContractError("k must be >= 1")
    if engine.corpus_hash() != baseline.corpus_hash():
        raise ContractError("engine and baseline were built over different corpora")
    if engine.fingerprint != baseline.fingerprint:
        raise ContractError(
            f"embedder differs: engine={engine.fingerprint} baseline={baseline.fingerprint}")
    cases = list(cases)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda c: _run_case(engine, baseline, c, k, dedup_k), cases))
    else:
        results = [_run_case(engine, baseline, c, k, dedup_k) for c in cases]
    return EvalReport(k=k, dedup_k=dedup_k, cases=results, fingerprint=engine.fingerprint,
                      corpus_hash=engine.corpus_hash())
