"""Exception hierarchy.

Two broad families matter for the CLI exit-code contract: DataError (bad or
inconsistent user data, exit code 2) and ProviderError (a model backend
failed or misbehaved, exit code 3).
"""

from __future__ import annotations


class ItmdetectError(Exception):
    """Base class for all errors raised by this package."""


class DataError(ItmdetectError):
    """Invalid input data, configuration, or file contents."""


class ProviderError(ItmdetectError):
    """A caption/embedding/detection backend failed or broke its contract."""


# --- core representation ---

class ZeroNormEmbedding(DataError):
    """Embedding norm is at or below the normalization floor."""


class DimensionMismatch(DataError):
    """Two vectors (or a vector and a model) disagree on dimension."""


class EmptyObjectSet(DataError):
    """No detected objects and the configured policy forbids a zero local distance."""


# --- classifier ---

class EmptyBatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class SingleClassDataset(DataError):
    """Training manifest contains only one of the two labels."""


class NonFiniteLoss(ItmdetectError):
    """Training loss became NaN or infinite; run aborted."""


# --- manifests and binary files ---

class ParseError(DataError):
    """Malformed manifest line; message carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DuplicateId(DataError):
    pass


class FormatError(DataError):
    """Bad magic, version, or payload size in a binary artifact."""


class EmptyExport(DataError):
    pass


class AllSamplesFailed(DataError):
    pass


class SampleError(ItmdetectError):
    """Wraps a failure while featurizing one sample, tagged with its id."""

    def __init__(self, sample_id: str, cause: Exception):
        super().__init__(f"sample {sample_id!r}: {cause}")
        self.sample_id = sample_id
        self.cause = cause


# --- metrics ---

class EmptyInput(DataError):
    pass


class NoPositives(DataError):
    """Ranking metrics need at least one fake sample."""


# --- perturbations ---

class InvalidSigma(DataError):
    pass


class EncodeError(DataError):
    pass


# --- providers ---

class InvalidInput(DataError):
    """Caller violated a provider precondition (e.g. empty text)."""


class ImageDecodeError(ProviderError):
    pass


class RemoteError(ProviderError):
    """Non-2xx response from a remote model service."""

    def __init__(self, status: int, body: str):
        excerpt = body if len(body) <= 200 else body[:200] + "..."
        super().__init__(f"HTTP {status}: {excerpt}")
        self.status = status
        self.body = excerpt


class Timeout(ProviderError):
    pass


class ProtocolViolation(ProviderError):
    """Remote service returned structurally invalid data."""


class MissingArtifact(ProviderError):
    """File-backed provider has no stored value for the request; it never fabricates."""
