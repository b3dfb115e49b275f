"""
Typed errors raised by the simulation engines.
The CLI and the API map these onto exit codes and HTTP status codes.
"""

from typing import Optional


class ISCSCError(Exception):
    """Base class for every error raised by the toolkit."""


class DomainError(ISCSCError, ValueError):
    """An input lies outside the domain of a physical model (e.g. a pose inside the array)."""


class ConfigurationError(ISCSCError, ValueError):
    """A configuration file or override is malformed, unknown or physically meaningless."""


class InfeasibleError(ISCSCError):
    """
    A plan cannot satisfy its constraints.

    Attributes:
        reason (str): One of "power", "cpu", "subproblem", "exhausted", "placement"
        detail (Optional[dict]): Extra context for logs and reports
    """

    def __init__(self, message: str, reason: str = "subproblem", detail: Optional[dict] = None):
        super().__init__(message)
        self.reason = reason
        self.detail = detail or {}


class PlacementError(InfeasibleError):
    """Scenario placement ran out of rejection attempts."""

    def __init__(self, message: str, detail: Optional[dict] = None):
        super().__init__(message, reason="placement", detail=detail)


class SolverError(ISCSCError):
    """The conic solver failed or returned a status we cannot interpret."""

    def __init__(self, message: str, status: Optional[str] = None):
        super().__init__(message)
        self.status = status


EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INFEASIBLE = 2


def exit_code_for(error: BaseException) -> int:
    """Exit code used by the CLI for an exception."""
    if isinstance(error, (ConfigurationError, InfeasibleError)):
        return EXIT_INFEASIBLE
    return EXIT_INTERNAL


def http_status_for(error: BaseException) -> int:
    """HTTP status used by the API for an exception."""
    if isinstance(error, (DomainError, ConfigurationError)):
        return 422
    if isinstance(error, InfeasibleError):
        return 409
    return 500
