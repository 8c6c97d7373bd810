"""Exception taxonomy shared across the package.

Every error raised deliberately by this package derives from RubriconError,
so callers can catch one base class at the CLI boundary.
"""
from __future__ import annotations


class RubriconError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RubriconError):
    """A configuration value or combination of values is unusable."""


class ParseError(RubriconError):
    """Structured input (config file or model reply) could not be parsed."""


class ValidationError(RubriconError):
    """A domain invariant was violated; the message names the field."""


class LayoutError(RubriconError):
    """A crop rectangle leaves the page or a layout entry is inconsistent."""


class DuplicateMarkerError(RubriconError):
    """The same solution marker occurs more than once on one page."""

    def __init__(self, problem_id: str):
        super().__init__(f"solution marker for problem {problem_id} occurs more than once")
        self.problem_id = problem_id


class BackendError(RubriconError):
    """Base class for model-backend failures."""


class TransportError(BackendError):
    """Network failure or retryable server error that exhausted retries."""


class RefusalError(BackendError):
    """The remote endpoint rejected the request; retrying will not help."""


class BudgetError(BackendError):
    """The configured request cap for a backend was exceeded."""


class CacheIOError(BackendError):
    """The response cache directory could not be read or written."""


class DegenerateSampleSetError(RubriconError):
    """Too few valid samples remain to aggregate."""

    def __init__(self, message: str, *, valid: int = 0, dropped: int = 0):
        super().__init__(message)
        self.valid = valid
        self.dropped = dropped


class EmptySeriesError(RubriconError):
    """A metric was requested over an empty series."""


class UndefinedAlphaError(RubriconError):
    """Agreement is undefined because expected disagreement is zero."""


class StoreError(RubriconError):
    """A run store could not be read or written."""


class StoreLockedError(StoreError):
    """Another writer holds the run lock."""


class UnknownTaskError(StoreError):
    """No review task exists with the given id."""

    def __init__(self, task_id: str):
        super().__init__(f"unknown review task: {task_id}")
        self.task_id = task_id


class AlreadyResolvedError(StoreError):
    """The review task was already resolved by an earlier call."""

    def __init__(self, task_id: str, reviewer: str):
        super().__init__(f"task {task_id} already resolved by {reviewer}")
        self.task_id = task_id
        self.reviewer = reviewer


class InvalidPointsError(StoreError):
    """A resolution's points value is not assignable for the problem."""
