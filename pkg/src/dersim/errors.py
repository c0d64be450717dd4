"""Exception types raised across the package."""


class GeometryError(ValueError):
    """Invalid or degenerate rod geometry."""


class DegenerateTransportError(GeometryError):
    """Parallel transport between (nearly) antiparallel tangents."""


class KinkError(GeometryError):
    """Two consecutive edges fold back onto each other."""


class DegenerateEdgeError(GeometryError):
    """An edge has (nearly) zero length."""


class SingularTwistError(ValueError):
    """The quasi-static twist system has no unique solution."""


class DivergedError(RuntimeError):
    """The time integration blew up."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConstraintError(RuntimeError):
    """The inextensibility projection did not converge."""

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst


class NotSettledError(RuntimeError):
    """A success check was requested on a wire that is still moving."""


class ValidationFailure(RuntimeError):
    """A validation experiment did not produce the expected phenomenon."""


class ConfigError(ValueError):
    """A configuration document is missing or malformed."""
