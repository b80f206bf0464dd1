"""
Error hierarchy for GrassGP

Library code raises these; only the CLI layer catches them and maps them
to exit codes. Every error carries a ``context`` dict that callers fill in
as the error propagates (cluster id, sample id, file, line).
"""

from typing import Any, Dict, Optional


class GrassGPError(Exception):
    """Base class for all GrassGP errors"""

    def __init__(self, message: str = "", **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = dict(context)

    def with_context(self, **context: Any) -> "GrassGPError":
        """Attach extra context without overwriting what is already there"""
        for key, value in context.items():
            self.context.setdefault(key, value)
        return self

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{k}={v}" for k, v in sorted(self.context.items()))
        return f"{self.message} ({details})"


# Geometry

class ShapeMismatch(GrassGPError, ValueError):
    """Array shapes disagree with what the operation needs"""


class AmbientMismatch(ShapeMismatch):
    """Two subspaces live in ambient spaces of different dimension"""


class ZeroMatrix(GrassGPError, ValueError):
    """Snapshot has no singular value above the absolute floor"""


class SingularOverlap(GrassGPError, ArithmeticError):
    """X0^T X1 is numerically singular: a principal angle sits at pi/2"""


class NoConvergence(GrassGPError, RuntimeError):
    """Iterative Karcher mean hit max_iter before the gradient vanished"""

    def __init__(self, message: str = "", result: Optional[Any] = None, **context: Any):
        super().__init__(message, **context)
        self.result = result


KarcherNoConvergence = NoConvergence


# Clustering

class IsolatedVertex(GrassGPError, ValueError):
    """A vertex of the similarity graph has zero degree"""


class EmptyCluster(GrassGPError, RuntimeError):
    """k-means left at least one cluster without members"""


class BudgetExhausted(GrassGPError, RuntimeError):
    """Cluster-count search reached n_max without meeting the error criterion"""

    def __init__(
        self,
        message: str = "",
        labels: Optional[Any] = None,
        diagnostics: Optional[Any] = None,
        model: Optional[Any] = None,
        **context: Any,
    ):
        super().__init__(message, **context)
        self.labels = labels
        self.diagnostics = diagnostics
        self.model = model


# Gaussian processes

class NonpositiveLengthScale(GrassGPError, ValueError):
    """RBF length-scale must be strictly positive"""


class IllConditioned(GrassGPError, ArithmeticError):
    """Cholesky failed even at the largest permitted nugget"""


class DimensionMismatch(ShapeMismatch):
    """Query point dimension differs from the training inputs"""


# Pipeline

class ShapeError(ShapeMismatch):
    """Snapshot or matricization shape is inconsistent"""


class SingularPrediction(GrassGPError, ArithmeticError):
    """A predicted tangent vector contains non-finite entries"""


# Benchmark

class NonFinite(GrassGPError, ArithmeticError):
    """ODE state blew up during integration"""


# Input files

class DatasetError(GrassGPError, ValueError):
    """Dataset, parameter or bundle file cannot be parsed"""
