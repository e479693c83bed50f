"""Shared exception hierarchy.

Every domain error raised by this package subclasses KibamError so callers
(and the CLI) can distinguish domain failures from programming errors.
"""


class KibamError(Exception):
    """Base class for all domain errors raised by this package."""
