"""Exception hierarchy shared by every layer of the engine."""


class SinrError(Exception):
    """Base class for all engine errors."""


class SpanError(SinrError, IndexError):
    """A token span is empty, reversed, or outside the token sequence."""


class ContractError(SinrError, ValueError):
    """Inputs violate an interface contract (dimension, config, corpus)."""


class FingerprintMismatch(ContractError):
    """The query embedder differs from the embedder the index was built with."""

    def __init__(self, expected: str, actual: str) -> None:
        super().__init__(
            f"embedder fingerprint mismatch: index={expected!r} query={actual!r}"
        )
        self.expected = expected
        self.actual = actual


class ConflictError(SinrError):
    """A write would contradict existing state (duplicate id, re-parenting)."""


class NotFoundError(SinrError, KeyError):
    """A referenced id does not exist."""

    def __str__(self) -> str:
        return Exception.__str__(self)


class TransportError(SinrError):
    """Remote embedding provider could not be reached or answered non-200."""

    def __init__(self, message: str, *, attempts: int, status: int | None = None,
                 retry_after: float | None = None) -> None:
        super().__init__(message)
        self.attempts = attempts
        self.status = status
        self.retry_after = retry_after


class IndexStateError(SinrError):
    """Index directory is missing, locked, corrupt, or not empty when it must be."""
