"""Text encoders: a local signed feature-hashing embedder and a remote client.

Both implement ``embed_batch(texts) -> (n, dim) float32 array`` and carry a
``fingerprint`` that the index manifest records.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ContractError, TransportError
from .ingest import tokenize

log = logging.getLogger(__name__)

LOCAL_HASH = "local-hash"
REMOTE = "remote"
DEFAULT_SEED = 0x51A2


@dataclass(frozen=True)
class EmbedderSpec:
    provider: str = LOCAL_HASH
    dim: int = 256
    seed: int = DEFAULT_SEED
    url: str | None = None
    provider_fingerprint: str | None = None

    def __post_init__(self) -> None:
        if self.provider not in (LOCAL_HASH, REMOTE):
            raise ContractError(f"unknown embedding provider {self.provider!r}")
        if self.dim < 1:
            raise ContractError("dim must be positive")
        if self.provider == REMOTE and not self.url:
            raise ContractError("remote provider needs a url")

    @property
    def fingerprint(self) -> str:
        if self.provider == LOCAL_HASH:
            return f"local-hash/blake2b-64/seed={self.seed}/dim={self.dim}/v1"
        return self.provider_fingerprint or f"remote/{self.url}/dim={self.dim}"

    def to_dict(self) -> dict:
        out = {"provider": self.provider, "dim": self.dim, "fingerprint": self.fingerprint}
        if self.provider == LOCAL_HASH:
            out["seed"] = self.seed
        else:
            out["url"] = self.url
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EmbedderSpec":
        provider = data.get("provider", LOCAL_HASH)
        return cls(
            provider=provider,
            dim=int(data.get("dim", 256)),
            seed=int(data.get("seed", DEFAULT_SEED)),
            url=data.get("url"),
            provider_fingerprint=data.get("fingerprint") if provider == REMOTE else None,
        )


@lru_cache(maxsize=1 << 18)
def _bucket(token: str, dim: int, seed: int) -> tuple[int, float]:
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=8, key=seed.to_bytes(8, "little")
    ).digest()
    h = int.from_bytes(digest, "little")
    sign = -1.0 if (h >> 63) & 1 else 1.0
    return h % dim, sign


class HashEmbedder:
    """Signed feature hashing of lowercased whitespace tokens, L2-normalized.

    Counts are integers, so the accumulation is exact and independent of
    summation order; the only rounding is the final normalization.
    """

    def __init__(self, spec: EmbedderSpec | None = None) -> None:
        self.spec = spec or EmbedderSpec()
        if self.spec.provider != LOCAL_HASH:
            raise ContractError("HashEmbedder needs a local-hash spec")
        self.dim = self.spec.dim
        self.fingerprint = self.spec.fingerprint

    def _embed_one(self, text: str, out: np.ndarray) -> None:
        dim, seed = self.dim, self.spec.seed
        acc = [0.0] * dim
        for tok in tokenize(text):
            b, sign = _bucket(tok.text.lower(), dim, seed)
            acc[b] += sign
        norm = math.sqrt(math.fsum(v * v for v in acc))
        if norm > 0.0:
            out[:] = [v / norm for v in acc]

    def embed_text(self, text: str) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.float32)
        self._embed_one(text, out)
        return out

    def embed_batch(self, texts) -> np.ndarray:
        texts = list(texts)
        out = np.zeros((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            self._embed_one(text, out[i])
        return out


class RemoteEmbedder:
    """Client for an embedding service speaking the ``POST /embed`` contract.

    Request ``{"texts": [...], "dim": d}``; response
    ``{"vectors": [[...], ...], "fingerprint": "..."}``. Batches larger than
    ``batch_size`` are split and sent with at most ``parallelism`` requests in
    flight; any failing sub-request fails the whole batch.
    """

    def __init__(self, spec: EmbedderSpec, *, timeout: float = 30.0, retries: int = 2,
                 backoff: float = 0.25, batch_size: int = 64, parallelism: int = 4) -> None:
        if spec.provider != REMOTE:
            raise ContractError("RemoteEmbedder needs a remote spec")
        self.spec = spec
        self.dim = spec.dim
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.batch_size = batch_size
        self.parallelism = parallelism
        self._fingerprint = spec.provider_fingerprint

    @property
    def fingerprint(self) -> str:
        if self._fingerprint is None:
            # the service names its own model; ask it once
            self._post([""])
        return self._fingerprint

    def _post(self, texts: list[str]) -> list[list[float]]:
        url = self.spec.url.rstrip("/") + "/embed"
        body = json.dumps({"texts": texts, "dim": self.dim}).encode("utf-8")
        last: Exception | None = None
        status = None
        retry_after = None
        for attempt in range(1, self.retries + 2):
            req = urllib.request.Request(
                url, data=body, headers={"Content-Type": "application/json"}, method="POST"
            )
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                break
            except urllib.error.HTTPError as exc:
                last, status = exc, exc.code
                header = exc.headers.get("Retry-After") if exc.headers else None
                retry_after = float(header) if header and header.isdigit() else None
            except (urllib.error.URLError, OSError) as exc:
                last, status = exc, None
            if attempt <= self.retries:
                time.sleep(retry_after if retry_after is not None else self.backoff * attempt)
        else:
            raise TransportError(
                f"embedding service {url} failed: {last}",
                attempts=self.retries + 1, status=status, retry_after=retry_after,
            )

        vectors = payload.get("vectors")
        fp = payload.get("fingerprint")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ContractError("embedding service returned the wrong number of vectors")
        for v in vectors:
            if len(v) != self.dim:
                raise ContractError(f"embedding service returned dim {len(v)}, expected {self.dim}")
        if self._fingerprint is None:
            self._fingerprint = fp
        elif fp != self._fingerprint:
            raise ContractError(f"embedding service fingerprint changed to {fp!r}")
        return vectors

    def embed_batch(self, texts) -> np.ndarray:
        texts = list(texts)
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        parts = [texts[i : i + self.batch_size] for i in range(0, len(texts), self.batch_size)]
        with ThreadPoolExecutor(max_workers=max(1, self.parallelism)) as pool:
            results = list(pool.map(self._post, parts))
        rows = [v for part in results for v in part]
        return np.asarray(rows, dtype=np.float32).reshape(len(texts), self.dim)

    def embed_text(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]


def make_embedder(spec: EmbedderSpec, **kwargs):
    if spec.provider == LOCAL_HASH:
        return HashEmbedder(spec)
    return RemoteEmbedder(spec, **kwargs)


def embed_text(text: str, spec: EmbedderSpec | None = None) -> np.ndarray:
    return make_embedder(spec or EmbedderSpec()).embed_text(text)


def embed_batch(texts, spec: EmbedderSpec | None = None) -> np.ndarray:
    return make_embedder(spec or EmbedderSpec()).embed_batch(texts)


def similarity(a, b) -> float:
    """Cosine similarity; 0.0 when either vector is zero."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ContractError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return max(-1.0, min(1.0, float(a @ b) / (na * nb)))
