"""Synthetic Markdown-ish corpora with topical vocabulary, for scale tests."""

from __future__ import annotations

import random

import numpy as np

from ..ingest import Document, make_document
from .needles import _FILLER_ONSETS, _FILLER_VOWELS, _lexicon, _syllables


def synthetic_corpus(n_docs: int, seed: int = 0, *, tokens: tuple[int, int] = (200, 400),
                     paragraph_tokens: tuple[int, int] = (40, 160), topics: int = 50,
                     topic_share: float = 0.5, heading_every: int = 3) -> list[Document]:
    """``n_docs`` documents with ids ``doc-00000.md`` ...

    Each document draws from one topic's vocabulary (``topic_share`` of its
    words) mixed with a shared Zipf-weighted vocabulary, so embeddings of
    same-topic chunks cluster the way real prose does. A ``##`` heading
    opens every ``heading_every``-th paragraph.
    """
    rng = random.Random(seed)
    gen = np.random.default_rng(seed)
    syl = _syllables(_FILLER_ONSETS, _FILLER_VOWELS)
    common = _lexicon(syl, 2000, rng, (1, 2))
    weights = 1.0 / (np.arange(len(common)) + 5.0)
    weights /= weights.sum()
    pool = [w for w in _lexicon(syl, topics * 150 + 2000, rng, (3, 4)) if w not in common]
    rng.shuffle(pool)
    vocab = [pool[t * 150 : (t + 1) * 150] for t in range(topics)]
    common_arr = np.array(common)
    width = max(5, len(str(n_docs - 1)))

    docs = []
    for i in range(n_docs):
        topic = vocab[rng.randrange(topics)]
        topic_arr = np.array(topic)
        remaining = rng.randint(*tokens)
        parts = []
        p = 0
        while remaining > 0:
            n = min(remaining, rng.randint(*paragraph_tokens))
            remaining -= n
            words = np.where(gen.random(n) < topic_share,
                             topic_arr[gen.integers(0, len(topic), n)],
                             common_arr[gen.choice(len(common), n, p=weights)])
            para = " ".join(words.tolist())
            if p % heading_every == 0:
                para = "## " + " ".join(rng.sample(topic, 2)) + "\n\n" + para
            parts.append(para)
            p += 1
        doc_id = f"doc-{i:0{width}d}.md"
        docs.append(make_document(doc_id, "\n\n".join(parts) + "\n", doc_id))
    return docs
