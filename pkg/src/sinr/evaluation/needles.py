"""Synthetic corpora with planted facts ("needles") at known token spans."""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass

from ..errors import ContractError
from ..ingest import Document, TokenSpan, make_document

_FILLER_ONSETS = "b d f g h k l m n p r s t v w".split()
_FILLER_VOWELS = "a e i o u".split()
_FACT_ONSETS = "zr kw xv qu zh".split()
_FACT_VOWELS = "ai eo ua ye".split()


def _syllables(onsets, vowels):
    return [o + v for o, v in itertools.product(onsets, vowels)]


def _lexicon(syllables, size: int, rng: random.Random, n_syl: tuple[int, int]) -> list[str]:
    words: set[str] = set()
    while len(words) < size:
        words.add("".join(rng.choice(syllables) for _ in range(rng.randint(*n_syl))))
    return sorted(words)


@dataclass(frozen=True)
class NeedleCase:
    case_id: str
    query: str
    gold_text: str
    doc_id: str
    span: TokenSpan
    straddles_boundary: bool


@dataclass(frozen=True)
class NeedleSpec:
    """Shape of a generated corpus.

    ``boundary`` is the uniform-chunk length whose first multiple straddling
    facts cross; ``straddle_period`` = 4 makes three of every four cases
    straddling.
    """

    cases: int = 60
    doc_tokens: int = 1300
    boundary: int = 500
    boundary_overlap: int = 50
    fact_tokens: tuple[int, int] = (60, 90)
    paragraph_tokens: tuple[int, int] = (70, 180)
    key_words: int = 12
    query_words: int = 8
    straddle_period: int = 4

    def __post_init__(self) -> None:
        lo, hi = self.fact_tokens
        if lo < self.boundary_overlap + 2 or lo > hi:
            raise ContractError("facts must be longer than the baseline overlap plus one")
        if self.doc_tokens < self.boundary + 3 * self.paragraph_tokens[1]:
            raise ContractError("documents too short for the boundary plan")
        if self.query_words > self.key_words:
            raise ContractError("query_words must not exceed key_words")


def _paragraphs(total: int, lo: int, hi: int, rng: random.Random) -> list[int]:
    """Split ``total`` tokens into paragraph lengths within ``[lo, hi]``
    (the last one may be shorter only if ``total < lo``)."""
    out = []
    rest = total
    while rest > hi:
        cap = min(hi, rest - lo)
        out.append(rng.randint(lo, cap))
        rest -= out[-1]
    if rest:
        out.append(rest)
    return out


def generate_needle_corpus(spec: NeedleSpec | None = None, seed: int = 7):
    """Deterministic ``(documents, cases)``; one document per case.

    Straddling facts start before the second uniform window
    (``boundary - overlap``) and end after token ``boundary``, so no uniform
    window of ``boundary`` tokens with ``overlap`` overlap holds them whole.
    Every fact sits inside a single paragraph.
    """
    spec = spec or NeedleSpec()
    rng = random.Random(seed)
    filler = _lexicon(_syllables(_FILLER_ONSETS, _FILLER_VOWELS), 3000, rng, (2, 3))
    facts = _lexicon(_syllables(_FACT_ONSETS, _FACT_VOWELS), spec.cases * spec.key_words * 2, rng, (3, 4))
    rng.shuffle(facts)
    # zipf-ish weights so filler has common and rare words like prose does
    weights = [1.0 / (r + 10) for r in range(len(filler))]
    p_lo, p_hi = spec.paragraph_tokens
    stride = spec.boundary - spec.boundary_overlap
    width = len(str(spec.cases - 1))

    docs: list[Document] = []
    cases: list[NeedleCase] = []
    for i in range(spec.cases):
        keys = facts[i * spec.key_words : (i + 1) * spec.key_words]
        straddle = i % spec.straddle_period != spec.straddle_period - 1
        n_fact = rng.randint(*spec.fact_tokens)
        fact = [w if rng.random() < 0.5 else rng.choice(keys)
                for w in rng.choices(filler, weights, k=n_fact)]
        for j, key in enumerate(keys):  # every key word appears at least once
            fact[j * n_fact // len(keys)] = key
        pre = rng.randint(5, 25)
        post = rng.randint(5, 25)
        if straddle:
            start = rng.randint(spec.boundary - n_fact + 1, stride - 1)
        else:
            # well inside the second uniform window and clear of the boundary
            start = rng.randint(spec.boundary + 100, spec.boundary + stride - n_fact - post - 50)
        head = _paragraphs(start - pre, p_lo, p_hi, rng)
        tail_start = start + n_fact + post
        tail = _paragraphs(max(spec.doc_tokens - tail_start, p_lo), p_lo, p_hi, rng)

        paragraphs = [rng.choices(filler, weights, k=n) for n in head]
        paragraphs.append(rng.choices(filler, weights, k=pre) + fact
                          + rng.choices(filler, weights, k=post))
        paragraphs += [rng.choices(filler, weights, k=n) for n in tail]
        doc_id = f"needle-{i:0{width}d}.txt"
        doc = make_document(doc_id, "\n\n".join(" ".join(p) for p in paragraphs) + "\n", doc_id)
        span = TokenSpan(start, start + n_fact)
        gold = " ".join(fact)
        if " ".join(t.text for t in doc.tokens[span.start : span.end]) != gold:
            raise AssertionError("planted fact is not where it was placed")
        query = " ".join(rng.sample(keys, spec.query_words))
        docs.append(doc)
        cases.append(NeedleCase(f"case-{i:0{width}d}", query, gold, doc_id, span, straddle))
    return docs, cases
