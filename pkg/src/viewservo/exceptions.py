"""Error types shared across the package."""


class ViewServoError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ViewServoError):
    """Invalid model/scenario configuration or dimension mismatch."""


class DegenerateGeometryError(ViewServoError):
    """Geometry does not admit the requested computation (coincident points, camera on plane)."""


class EstimationError(ViewServoError):
    """Homography estimation failed (degenerate sample or no consensus)."""


class InsufficientFeaturesError(EstimationError):
    """Fewer features than the operation requires."""


class PathNotFoundError(ViewServoError):
    """No route between the requested graph vertices."""


class UndefinedMetricError(ViewServoError):
    """Metric requested over an empty set."""


class NumericError(ViewServoError):
    """Iterative numeric routine failed to converge."""


class ServoFailure(ViewServoError):
    """Closed-loop servo aborted; carries the partial metrics log."""

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = records or []


class ProtocolError(ViewServoError):
    """Inbound wire message violates the documented envelope or payload schema."""
