"""Exception hierarchy shared across the package.

Every input problem derives from :class:`InputError` so the CLI can map it to
exit code 2 without knowing the concrete type.
"""

from __future__ import annotations


class BdsError(Exception):
    """Base class for all package errors."""


class InputError(BdsError, ValueError):
    """Bad input data: a document, a box, a score, a reference."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class MissingFile(InputError):
    pass


class MalformedDocument(InputError):
    pass


class DanglingReference(InputError):
    pass


class InvalidBox(InputError):
    pass


class ScoreOutOfRange(InputError):
    pass


class DuplicateModel(InputError):
    pass


class EmptyDataset(InputError):
    pass


class EmptyOutcomeList(BdsError, ValueError):
    pass


class InsufficientModels(BdsError, ValueError):
    pass


class NoArms(BdsError, ValueError):
    pass


class ArmOutOfRange(BdsError, IndexError):
    pass


class PlacementFailure(BdsError, RuntimeError):
    """Rejection sampling could not place the requested boxes."""


class UnsupportedSpec(BdsError, ValueError):
    pass


class InstanceTooLarge(BdsError, ValueError):
    pass


class NonIntegerInput(BdsError, ValueError):
    pass

class InvariantViolation(BdsError, AssertionError):
    """An internal accounting check failed."""
