"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for every error raised by this package."""


class NotFoundError(PipelineError):
    """A required path or resource does not exist."""


class ParseError(PipelineError):
    """A corpus file could not be parsed."""

    def __init__(self, message: str, source: str | None = None, location: str | None = None):
        self.source = source
        self.location = location
        detail = message
        if source:
            detail = f"{source}: {detail}"
        if location:
            detail = f"{detail} (at {location})"
        super().__init__(detail)


class ConfigError(PipelineError):
    """Invalid configuration or invalid arguments to a stage."""


class ValidationError(PipelineError):
    """Input data violates a documented precondition."""


class TransportError(PipelineError):
    """Network failure that persisted through the retry policy."""


class ApiError(PipelineError):
    """Endpoint answered with a non-2xx status."""

    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"endpoint returned HTTP {status}: {body[:200]}")


class CapabilityError(PipelineError):
    """Endpoint lacks a capability a stage requires (e.g. echo logprobs)."""


class CacheError(PipelineError):
    """A cache entry is corrupt; callers treat this as a miss."""


class StageError(PipelineError):
    """A pipeline stage cannot run (missing prerequisite, held lock, ...)."""


class IoError(PipelineError):
    """Filesystem write failure on an output artifact."""
