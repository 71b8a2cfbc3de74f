"""Exception and warning types shared across the package."""


class DomainError(ValueError):
    """Input outside the domain an operation supports."""


class FitError(RuntimeError):
    """A least-squares fit failed or produced a non-physical result."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SubspaceError(DomainError):
    """Requested electron manifold cannot be isolated at this field."""


class PerturbativeValidityWarning(UserWarning):
    """Field is outside the regime of a perturbative approximation."""


class FitQualityWarning(UserWarning):
    """Fit converged but its design or diagnostics are questionable."""
