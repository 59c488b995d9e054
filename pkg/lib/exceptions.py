from typing import Any, Dict, Optional


class PolylabError(Exception):
    """Base exception for all polylab errors"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.details = details or {}


class ConfigError(PolylabError):
    """Raised when an experiment or fit configuration is invalid"""

    pass


class GeometryError(PolylabError):
    """Base class for polytope computation failures"""

    pass


class EmptyPolytope(GeometryError):
    """Raised when a halfspace system has no feasible vertex"""

    pass


class Unbounded(GeometryError):
    """Raised when the normals of a halfspace system do not positively span R^d"""

    pass


class DegenerateInput(GeometryError):
    """Raised when points lie in a proper affine subspace"""

    pass


class DimensionMismatch(PolylabError, ValueError):
    """Raised when vector or matrix shapes disagree"""

    pass


class BoundaryHit(PolylabError):
    """Raised when the ground-state argmin touches the edge of the state box"""

    pass


class RetryExhausted(PolylabError):
    """Raised when a problem generator runs out of resampling attempts"""

    pass


class OracleFailure(PolylabError):
    """Raised when a membership oracle cannot answer"""

    pass


class NoExit(OracleFailure):
    """Raised when a line search stays inside up to its maximum radius"""

    pass


class SolverFailure(PolylabError):
    """Raised when the conic solver reports an infeasible or inaccurate result"""

    pass


class MaxItersExceeded(UserWarning):
    """Emitted when the convex-concave loop stops before the assignment repeats"""

    pass


class NoResults(PolylabError):
    """Raised when a report is requested for a directory without results"""

    pass


class InconsistentDataset(PolylabError):
    """Raised when stored pairs no longer straddle the oracle's boundary"""

    pass
