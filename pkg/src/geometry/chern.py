"""
Chern polynomials - C_lambda(w) = det(I + lambda (i/2pi) K(w))
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.geometry.curvature import CurvatureField
from src.geometry.grid import DiskGrid
from src.utils.errors import ParameterError

logger = logging.getLogger(__name__)

CHERN_FACTOR = 1j / (2 * np.pi)


@dataclass(frozen=True, eq=False)
class ChernField:
    """
    Chern polynomial coefficients per grid point

    coefficients has shape (P, n+1) with coefficients[:, 0] == 1, so that
    C_lambda(w) = sum_m coefficients[:, m] lambda^m.
    """

    grid: DiskGrid
    coefficients: np.ndarray

    @property
    def degree(self) -> int:
        return self.coefficients.shape[1] - 1


def elementary_symmetric(values: np.ndarray) -> np.ndarray:
    """
    Elementary symmetric polynomials e_0..e_n of the last axis

    Args:
        values: (P, n) array

    Returns:
        (P, n+1) array with e_0 = 1
    """
    values = np.asarray(values)
    points, n = values.shape
    result = np.zeros((points, n + 1), dtype=np.result_type(values, complex))
    result[:, 0] = 1.0
    for j in range(n):
        result[:, 1:j + 2] = result[:, 1:j + 2] + values[:, j:j + 1] * result[:, 0:j + 1]
    return result


def _chern_from_values(grid: DiskGrid, values: np.ndarray) -> ChernField:
    e = elementary_symmetric(values)
    powers = CHERN_FACTOR ** np.arange(e.shape[1])
    return ChernField(grid=grid, coefficients=e * powers[None, :])


def chern_polynomial(curvatures: Sequence[CurvatureField]) -> ChernField:
    """
    Chern polynomial of a direct sum of line bundles

    c_m(w) = (i/2pi)^m e_m(K_1(w), .., K_n(w)).

    Args:
        curvatures: n scalar CurvatureFields on one grid

    Returns:
        ChernField with coefficients c_0..c_n

    Raises:
        ParameterError: If the fields do not share a grid
    """
    if not curvatures:
        raise ParameterError("Need at least one curvature field", field='curvatures')
    grid = curvatures[0].grid
    for field in curvatures[1:]:
        if not field.grid.same_as(grid):
            raise ParameterError("Curvature fields live on different grids", field='grid')
    if any(not field.is_scalar for field in curvatures):
        raise ParameterError("chern_polynomial expects scalar curvature fields", field='curvatures')

    values = np.stack([field.values for field in curvatures], axis=1)
    return _chern_from_values(grid, values)


def chern_from_matrix(field: CurvatureField) -> ChernField:
    """Chern polynomial det(I + lambda (i/2pi) K(w)) of a matrix curvature field"""
    if field.is_scalar:
        return chern_polynomial([field])
    return _chern_from_values(field.grid, np.linalg.eigvals(field.values))


def recover_curvatures(chern: ChernField) -> np.ndarray:
    """
    Recover the curvature multiset from the roots of C_lambda

    Each root maps to K = 2*pi*i / root; vanishing curvatures show up as a
    drop in degree and are returned as 0.

    Returns:
        (P, n) complex array, each row sorted by real part
    """
    n = chern.degree
    recovered = np.zeros((chern.coefficients.shape[0], n), dtype=complex)
    for p, coeffs in enumerate(chern.coefficients):
        roots = np.roots(coeffs[::-1])
        values = 2j * np.pi / roots
        recovered[p, :values.size] = values
        recovered[p] = np.sort_complex(recovered[p])
    return recovered
