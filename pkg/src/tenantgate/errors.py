"""Shared exception taxonomy.

Every error that crosses a module boundary derives from TenantGateError so
the gateway can map it to a wire status in one place.
"""

from __future__ import annotations


class TenantGateError(Exception):
    """Base class for all package errors."""


class ValidationError(TenantGateError):
    """A caller-supplied value violates a documented precondition."""


class AuthenticationError(TenantGateError):
    """Missing or malformed credentials; no principal could be established."""


class AuthorizationError(TenantGateError):
    """An authenticated principal is not permitted on the target resource."""


class NotFoundError(TenantGateError):
    """A referenced resource id does not exist."""


class ConflictError(TenantGateError):
    """An insert collides with an existing id."""


class ConfigurationError(TenantGateError):
    """Components were wired together inconsistently (e.g. dimension mismatch)."""


class UnsupportedPolicyError(TenantGateError):
    """A policy cannot be compiled into a storage metadata predicate."""


class PolicyViolationError(TenantGateError):
    """A safety gate blocked the request content."""

    def __init__(self, message: str, category: str | None = None):
        super().__init__(message)
        self.category = category


class ToolLocusError(TenantGateError):
    """A client-locus tool was asked to run inside the server."""


class MaxStepsExceededError(TenantGateError):
    """The orchestration loop hit its step bound before terminating.

    Carries the partial execution sequence for diagnostics; handlers must not
    serialize step contents into client-visible error bodies.
    """

    def __init__(self, message: str, partial_steps: list | None = None):
        super().__init__(message)
        self.partial_steps = partial_steps or []


class InsufficientSamplesError(TenantGateError):
    """A benchmark cell completed too few requests to report a rate."""


class GatewayUnreachableError(TenantGateError):
    """The target gateway did not answer health checks."""


class UndefinedRateError(TenantGateError):
    """A rate metric was requested over an empty denominator."""
