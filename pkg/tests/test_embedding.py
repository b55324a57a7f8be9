import hashlib
import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sinr.embedding import (
    EmbedderSpec, HashEmbedder, RemoteEmbedder, embed_batch, embed_text, make_embedder,
    similarity,
)
from sinr.errors import ContractError, TransportError


def reference_embed(text, dim=256, seed=0x51A2):
    """Straight transcription of the hashing scheme, in pure Python."""
    acc = [0] * dim
    for tok in text.split():
        h = int.from_bytes(hashlib.blake2b(tok.lower().encode(), digest_size=8,
                                           key=seed.to_bytes(8, "little")).digest(), "little")
        acc[h % dim] += -1 if h >> 63 else 1
    norm = math.sqrt(sum(v * v for v in acc))
    return [v / norm if norm else 0.0 for v in acc]


def cos(a, b):
    return sum(x * y for x, y in zip(a, b))


def test_empty_text_is_zero_vector():
    v = embed_text("")
    assert v.shape == (256,) and not v.any()


def test_matches_reference_implementation():
    text = "Warranty claims are handled by the regional office within 30 days"
    assert np.allclose(embed_text(text), reference_embed(text), atol=1e-7)


def test_deterministic():
    assert np.array_equal(embed_text("same text"), embed_text("same text"))


@given(st.text(min_size=1).filter(lambda t: t.split()))
def test_unit_norm(text):
    v = embed_text(text).astype(np.float64)
    # a text whose signed counts cancel exactly embeds to zero
    assert abs(np.linalg.norm(v) - 1.0) <= 1e-6 or not v.any()


def test_closer_text_scores_higher():
    a, b, c = ("warranty claim process", "warranty claim process extra",
               "orbital mechanics launch window")
    ref_ab = cos(reference_embed(a), reference_embed(b))
    ref_ac = cos(reference_embed(a), reference_embed(c))
    assert ref_ab > ref_ac
    assert similarity(embed_text(a), embed_text(b)) == pytest.approx(ref_ab, abs=1e-6)
    assert similarity(embed_text(a), embed_text(c)) == pytest.approx(ref_ac, abs=1e-6)


def test_batch_matches_single_calls(small_corpus):
    texts = [d.text[:200] for d in small_corpus] * 25
    assert len(texts) == 1000
    batch = embed_batch(texts)
    assert np.array_equal(batch, np.stack([embed_text(t) for t in texts]))
    assert embed_batch([]).shape == (0, 256)
    assert np.array_equal(embed_batch(["a", "b"]), np.stack([embed_text("a"), embed_text("b")]))


def test_case_insensitive():
    assert np.array_equal(embed_text("Hello WORLD"), embed_text("hello world"))


def test_fingerprint_names_seed_and_dim():
    spec = EmbedderSpec(dim=64, seed=3)
    assert HashEmbedder(spec).fingerprint == "local-hash/blake2b-64/seed=3/dim=64/v1"
    assert EmbedderSpec(dim=64, seed=4).fingerprint != spec.fingerprint


def test_spec_validation():
    with pytest.raises(ContractError):
        EmbedderSpec(provider="magic")
    with pytest.raises(ContractError):
        EmbedderSpec(dim=0)
    with pytest.raises(ContractError):
        EmbedderSpec(provider="remote")


def test_spec_dict_round_trip():
    spec = EmbedderSpec(dim=32, seed=9)
    assert EmbedderSpec.from_dict(spec.to_dict()) == spec


# -- similarity ----------------------------------------------------------


def test_similarity_basics():
    v = embed_text("some words here")
    assert similarity(v, v) == pytest.approx(1.0)
    assert similarity(v, -v) == pytest.approx(-1.0)
    e1, e2 = np.eye(4)[:2]
    assert similarity(e1, e2) == 0.0
    assert similarity(np.zeros(4), e1) == 0.0


def test_similarity_dimension_mismatch():
    with pytest.raises(ContractError):
        similarity(np.ones(3), np.ones(4))


@settings(max_examples=100)
@given(st.lists(st.floats(-10, 10), min_size=8, max_size=8),
       st.lists(st.floats(-10, 10), min_size=8, max_size=8))
def test_similarity_symmetric_and_bounded(a, b):
    s = similarity(a, b)
    assert abs(s - similarity(b, a)) <= 1e-12
    assert -1.0 <= s <= 1.0


# -- remote provider -----------------------------------------------------


class FakeService:
    """Local HTTP server speaking the embedding wire contract."""

    def __init__(self, dim=8, fingerprint="fake-model/v3", fail_first=0, status=503,
                 wrong_dim=False):
        self.requests = []
        self.fail_left = fail_first
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                outer.requests.append((self.path, body))
                if outer.fail_left > 0:
                    outer.fail_left -= 1
                    self.send_response(status)
                    self.send_header("Retry-After", "0")
                    self.end_headers()
                    return
                d = body["dim"] + (1 if wrong_dim else 0)
                vectors = [[float(len(t))] + [0.0] * (d - 1) for t in body["texts"]]
                payload = json.dumps({"vectors": vectors, "fingerprint": fingerprint}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def remote(url, **kwargs):
    return make_embedder(EmbedderSpec(provider="remote", dim=8, url=url),
                         backoff=0.0, **kwargs)


def test_remote_wire_contract_and_order():
    with FakeService() as svc:
        emb = remote(svc.url, batch_size=2, parallelism=3)
        out = emb.embed_batch(["a", "bb", "ccc", "dddd", "eeeee"])
        assert out[:, 0].tolist() == [1, 2, 3, 4, 5]
        assert emb.fingerprint == "fake-model/v3"
        paths = {p for p, _ in svc.requests}
        assert paths == {"/embed"}
        assert all(b["dim"] == 8 and len(b["texts"]) <= 2 for _, b in svc.requests)


def test_remote_retries_then_succeeds():
    with FakeService(fail_first=2) as svc:
        emb = remote(svc.url, retries=2)
        assert emb.embed_text("abc")[0] == 3.0


def test_remote_gives_up_with_metadata():
    with FakeService(fail_first=10, status=429) as svc:
        emb = remote(svc.url, retries=1)
        with pytest.raises(TransportError) as info:
            emb.embed_batch(["x"])
        assert info.value.attempts == 2
        assert info.value.status == 429
        assert info.value.retry_after == 0.0


def test_remote_unreachable():
    emb = remote("http://127.0.0.1:9", retries=0, timeout=1.0)
    with pytest.raises(TransportError) as info:
        emb.embed_text("x")
    assert info.value.status is None


def test_remote_dimension_mismatch():
    with FakeService(wrong_dim=True) as svc:
        with pytest.raises(ContractError):
            remote(svc.url).embed_batch(["x"])


def test_remote_batch_fails_as_a_whole():
    with FakeService(fail_first=1, status=500) as svc:
        emb = remote(svc.url, retries=0, batch_size=1, parallelism=1)
        with pytest.raises(TransportError):
            emb.embed_batch(["a", "b", "c"])


def test_remote_needs_remote_spec():
    with pytest.raises(ContractError):
        RemoteEmbedder(EmbedderSpec())
