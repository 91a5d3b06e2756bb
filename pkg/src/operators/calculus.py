"""
Holomorphic functional calculus on truncated operators

Power series, Mobius maps and the power-series algebra used by couplings
and compact corrections.
"""

import logging
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import linalg, sparse
from scipy.sparse import linalg as spla

from src import config
from src.operators.shift import MatrixLike, OperatorMatrix
from src.utils.config_loader import get_solver_setting
from src.utils.errors import NumericError, ParameterError

logger = logging.getLogger(__name__)


def _frobenius(matrix: MatrixLike) -> float:
    if sparse.issparse(matrix):
        return float(spla.norm(matrix))
    return float(np.linalg.norm(matrix))


def evaluate_series(
    matrix: MatrixLike,
    coeffs: Sequence[complex],
    tail_tol: Optional[float] = None
) -> MatrixLike:
    """
    Evaluate sum_m coeffs[m] * matrix^m for dense or sparse matrices

    Coefficient lists shorter than the configured term cap are polynomials and
    are evaluated exactly. At the cap the list is a cut series and the last
    term must have dropped below tail_tol relative to the result.

    Args:
        matrix: Square dense or sparse matrix
        coeffs: Power-series coefficients f_0, f_1, ...
        tail_tol: Tail bound for cut series

    Returns:
        Matrix of the same kind as the input

    Raises:
        NumericError: If a cut series has not converged
    """
    max_terms = int(get_solver_setting(config, 'series_max_terms'))
    if tail_tol is None:
        tail_tol = float(get_solver_setting(config, 'series_tail_tol'))

    coeffs = np.trim_zeros(np.asarray(coeffs, dtype=complex), 'b')
    dim = matrix.shape[0]
    is_sparse = sparse.issparse(matrix)
    identity = sparse.identity(dim, format='csr') if is_sparse else np.eye(dim)

    if coeffs.size == 0:
        return identity * 0.0
    if np.all(coeffs.imag == 0):
        coeffs = coeffs.real

    result = coeffs[0] * identity
    power = identity
    last_term = abs(coeffs[0]) * _frobenius(identity)
    for m, c in enumerate(coeffs[1:], start=1):
        power = power @ matrix
        if _frobenius(power) == 0.0:
            logger.debug(f"Series stopped at exact nilpotent power {m}")
            last_term = 0.0
            break
        if c != 0:
            term = c * power
            result = result + term
            last_term = _frobenius(term)

    if coeffs.size >= max_terms:
        scale = max(1.0, _frobenius(result))
        if last_term > tail_tol * scale:
            raise NumericError(
                f"Power series not converged after {coeffs.size} terms "
                f"(last term {last_term:.3e})",
                index=int(coeffs.size)
            )

    return result


def apply_power_series(
    op: OperatorMatrix,
    f: Sequence[complex],
    tail_tol: Optional[float] = None
) -> OperatorMatrix:
    """
    Apply a holomorphic power series to a (block) operator

    For a 2-block flag with corner T12 intertwining the diagonal blocks the
    output corner equals f'(T11) T12.

    Args:
        op: Operator with optional block structure
        f: Coefficients f_0, f_1, ...
        tail_tol: Tail bound for cut series

    Returns:
        OperatorMatrix sum_m f_m op^m with the same block structure
    """
    result = evaluate_series(op.entries, f, tail_tol)
    return OperatorMatrix(result, op.block_structure)


def mobius_transform(
    op: OperatorMatrix,
    alpha: complex,
    condition_bound: Optional[float] = None
) -> OperatorMatrix:
    """
    Mobius map phi_alpha(T) = (T - alpha)(I - conj(alpha) T)^{-1}

    Args:
        op: Operator
        alpha: Point of the open unit disk
        condition_bound: Largest admissible condition number of the resolvent

    Returns:
        Transformed operator

    Raises:
        ParameterError: If |alpha| >= 1
        NumericError: If I - conj(alpha) T is near-singular
    """
    if abs(alpha) >= 1:
        raise ParameterError(f"Mobius parameter must satisfy |alpha| < 1, got {alpha}", field='alpha')
    if alpha == 0:
        return op
    if condition_bound is None:
        condition_bound = float(get_solver_setting(config, 'condition_bound'))

    identity = np.eye(op.dim)
    resolvent = identity - np.conj(alpha) * op.entries
    condition = float(np.linalg.cond(resolvent))
    if not np.isfinite(condition) or condition > condition_bound:
        raise NumericError(
            f"I - conj(alpha) T is ill-conditioned (cond {condition:.3e})",
            condition=condition
        )

    # (T - alpha) and the resolvent commute
    result = linalg.solve(resolvent, op.entries - alpha * identity)
    return OperatorMatrix(result, op.block_structure)


def series_multiply(a: Sequence[complex], b: Sequence[complex], max_terms: Optional[int] = None) -> np.ndarray:
    """Cauchy product of two coefficient sequences, cut at max_terms"""
    if max_terms is None:
        max_terms = int(get_solver_setting(config, 'series_max_terms'))
    product = P.polymul(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))
    return np.trim_zeros(product[:max_terms], 'b')


def series_divide(
    a: Sequence[complex],
    b: Sequence[complex],
    max_terms: Optional[int] = None,
    tail_tol: Optional[float] = None
) -> np.ndarray:
    """
    Power-series quotient a / b

    Raises:
        NumericError: If b(0) = 0 or the quotient has not converged at the cap
    """
    if max_terms is None:
        max_terms = int(get_solver_setting(config, 'series_max_terms'))
    if tail_tol is None:
        tail_tol = float(get_solver_setting(config, 'series_tail_tol'))

    a = np.asarray(a, dtype=complex)
    b = np.trim_zeros(np.asarray(b, dtype=complex), 'b')
    if b.size == 0 or b[0] == 0:
        raise NumericError("Series division by a symbol vanishing at 0")

    if b.size == 1:
        return np.trim_zeros(a / b[0], 'b')

    quotient = np.zeros(max_terms, dtype=complex)
    padded = np.zeros(max_terms, dtype=complex)
    padded[:min(a.size, max_terms)] = a[:max_terms]
    for k in range(max_terms):
        acc = padded[k]
        for i in range(1, min(k, b.size - 1) + 1):
            acc -= b[i] * quotient[k - i]
        quotient[k] = acc / b[0]

    if abs(quotient[-1]) > tail_tol * max(1.0, np.abs(quotient).max()):
        raise NumericError(
            f"Series quotient not converged after {max_terms} terms", index=max_terms
        )
    return np.trim_zeros(quotient, 'b')
