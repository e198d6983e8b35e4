"""Exception hierarchy shared across the library."""


class LocalInterpError(Exception):
    """Base class for all library errors."""


class InvalidArgument(LocalInterpError):
    pass


class DegenerateGeometry(LocalInterpError):
    pass


class ImageTooSmall(LocalInterpError):
    pass


class IncompleteAssignment(LocalInterpError):
    pass


class IncompleteAnnotation(LocalInterpError):
    pass


class SingleClassTraining(LocalInterpError):
    pass


class InsufficientData(LocalInterpError):
    pass


class NoNegativesAvailable(LocalInterpError):
    pass


class NoInterpretation(LocalInterpError):
    """Raised when no gate-passing assignment exists for some slot."""

    def __init__(self, slot_id: str, message: str | None = None):
        self.slot_id = slot_id
        super().__init__(message or f"no gate-passing candidate for slot {slot_id!r}")


class BudgetExceeded(LocalInterpError):
    pass


class FormatError(LocalInterpError):
    """Unreadable or version-incompatible file."""
