"""
Error hierarchy for cdlab

Every library error carries an optional offending field and citation so the
CLI can render the machine-readable error JSON.
"""

from typing import Any, Dict, Optional


class LabError(Exception):
    """Base class for all cdlab errors"""

    def __init__(
        self,
        message: str,
        field: Optional[str] = None,
        citation: Optional[str] = None
    ):
        super().__init__(message)
        self.message = message
        self.field = field
        self.citation = citation

    def to_dict(self) -> Dict[str, Any]:
        """Render as {"error", "field"?, "citation"?}"""
        payload: Dict[str, Any] = {'error': self.message}
        if self.field is not None:
            payload['field'] = self.field
        if self.citation is not None:
            payload['citation'] = self.citation
        return payload


class ParameterError(LabError):
    """Argument outside its admissible range"""


class SpecError(LabError):
    """Operator spec violates its schema or domain rules"""


class StructuralError(LabError):
    """Operator or family is not in the declared class"""


class NumericError(LabError):
    """Ill-conditioned solve, divergent series or inconsistent recursion"""

    def __init__(
        self,
        message: str,
        condition: Optional[float] = None,
        index: Optional[int] = None,
        **kwargs
    ):
        super().__init__(message, **kwargs)
        self.condition = condition
        self.index = index


class TruncationError(LabError):
    """Truncation too small for the requested accuracy"""

    def __init__(self, message: str, required_dim: Optional[int] = None, **kwargs):
        super().__init__(message, **kwargs)
        self.required_dim = required_dim


class GridError(LabError):
    """Finite-difference stencil leaves the unit disk"""


class SolvabilityError(LabError):
    """Sylvester system is singular and least squares was not requested"""

    def __init__(self, message: str, residual: float = float('nan'), **kwargs):
        super().__init__(message, **kwargs)
        self.residual = residual


class RankError(LabError):
    """Frame is degenerate at a grid point"""

    def __init__(self, message: str, w: Optional[complex] = None, **kwargs):
        super().__init__(message, **kwargs)
        self.w = w
