class DomainError(ValueError):
    """An input lies outside the domain where an operation is defined."""


class ContractViolation(RuntimeError):
    """A constructed object failed one of its verification checks.

    ``point`` carries the offending location when there is one.
    """

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class ConvexityError(DomainError):
    """Barrier search could not separate: the domain is not strictly convex at the point."""
