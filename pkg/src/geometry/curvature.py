"""
Curvature - Metric and curvature of Hermitian holomorphic bundles on grids

Line bundles use the 5-point Laplacian of the log-norm,
K(w) = -(1/4) (d_xx + d_yy) ln ||t(w)||^2. Rank-n frames use nested centered
differences of the Gram matrix, K = -d_wbar (h^{-1} d_w h). Both optionally
apply one level of Richardson extrapolation, (4 K(h/2) - K(h)) / 3.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from src import config
from src.geometry.grid import DiskGrid, check_stencil, log_laplacian_quarter, stencil_points
from src.geometry.sections import Section
from src.utils.config_loader import get_grid_defaults, get_tolerance
from src.utils.errors import RankError, TruncationError

logger = logging.getLogger(__name__)

# Gram-matrix sample offsets for the nested stencil, in units of the step
NESTED_OFFSETS = {
    'c': 0, 'x+': 1, 'x-': -1, 'y+': 1j, 'y-': -1j,
    'xx+': 2, 'xx-': -2, 'yy+': 2j, 'yy-': -2j,
    'x+y+': 1 + 1j, 'x+y-': 1 - 1j, 'x-y+': -1 + 1j, 'x-y-': -1 - 1j
}


@dataclass(frozen=True, eq=False)
class MetricSample:
    """Gram matrix h(w) = (<gamma_j(w), gamma_i(w)>)_{ij} of a frame"""

    w: complex
    h_matrix: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h_matrix)
        scale = max(1.0, float(np.abs(h).max()))
        if np.abs(h - h.conj().T).max() > 1e-12 * scale:
            raise RankError(f"Metric at w={self.w} is not Hermitian", w=self.w)
        if np.linalg.eigvalsh(h).min() <= 0:
            raise RankError(f"Metric at w={self.w} is not positive definite", w=self.w)


@dataclass(frozen=True, eq=False)
class CurvatureField:
    """
    Curvature sampled on a grid

    values has shape (P,) (real) for line bundles and (P, n, n) otherwise.
    """

    grid: DiskGrid
    values: np.ndarray
    method: str = 'finite_difference'

    @property
    def is_scalar(self) -> bool:
        return self.values.ndim == 1

    @property
    def rank(self) -> int:
        return 1 if self.is_scalar else self.values.shape[-1]


def _use_richardson(richardson: Optional[bool]) -> bool:
    if richardson is None:
        return bool(get_grid_defaults(config)['richardson'])
    return richardson


def _check_tail(section: Section, radius: float) -> None:
    bound = get_tolerance(config, 'section_tail')
    tail = section.tail_at(radius)
    if tail >= bound:
        raise TruncationError(
            f"Section tail {tail:.3e} at r={radius:.4f} exceeds {bound:.0e}"
        )


def mixed_derivative(
    fn: Callable[[np.ndarray], np.ndarray],
    grid: DiskGrid,
    richardson: Optional[bool] = None
) -> np.ndarray:
    """
    d^2/dw dwbar of a real function by the 5-point stencil

    Args:
        fn: Maps an array of points to real values of the same shape
        grid: Sample points and step
        richardson: Apply one Richardson level (config default)

    Returns:
        (P,) array
    """
    h = grid.fd_step
    check_stencil(grid.r_max, h)

    def at_step(step: float) -> np.ndarray:
        return log_laplacian_quarter(fn(stencil_points(grid.points, step)), step)

    coarse = at_step(h)
    if not _use_richardson(richardson):
        return coarse
    fine = at_step(h / 2)
    return (4.0 * fine - coarse) / 3.0


def log_norm(section: Section) -> Callable[[np.ndarray], np.ndarray]:
    """w -> ln ||t(w)||^2"""
    return lambda points: np.log(section.norm_sq(points))


def curvature_scalar(
    section: Section,
    grid: DiskGrid,
    richardson: Optional[bool] = None
) -> CurvatureField:
    """
    Curvature of a line bundle, K(w) = -d^2/dw dwbar ln ||t(w)||^2

    Args:
        section: Holomorphic section
        grid: Disk grid
        richardson: Apply one Richardson level (config default)

    Returns:
        Real scalar CurvatureField, method finite_difference

    Raises:
        GridError: If the stencil leaves the disk
        TruncationError: If the section tail is too large at r_max + 2h
    """
    _check_tail(section, grid.r_max + 2 * grid.fd_step)
    values = -mixed_derivative(log_norm(section), grid, richardson)
    return CurvatureField(grid=grid, values=values, method='finite_difference')


def closed_form_curvature(lam: float, w) -> np.ndarray:
    """Curvature -lam (1 - |w|^2)^(-2) of the lam-Bergman model"""
    w = np.asarray(w)
    return -lam / (1.0 - np.abs(w) ** 2) ** 2


def closed_form_field(lam: float, grid: DiskGrid) -> CurvatureField:
    return CurvatureField(grid=grid, values=closed_form_curvature(lam, grid.points), method='closed_form')


def _frame_coefficients(frame: Sequence[Section], points: np.ndarray) -> np.ndarray:
    """(..., n, dim) coefficient array of the frame at points"""
    return np.stack([s.coeffs_many(points) for s in frame], axis=-2)


def _gram(coeffs: np.ndarray) -> np.ndarray:
    # h_ij = gamma_i^H gamma_j
    return np.einsum('...ik,...jk->...ij', coeffs.conj(), coeffs)


def _nested_curvature(frame: Sequence[Section], points: np.ndarray, step: float) -> np.ndarray:
    offsets = np.array(list(NESTED_OFFSETS.values()))
    samples = _gram(_frame_coefficients(frame, points[:, None] + step * offsets[None, :]))
    H = {name: samples[:, i] for i, name in enumerate(NESTED_OFFSETS)}

    def d_w(plus_x, minus_x, plus_y, minus_y):
        return 0.5 * ((plus_x - minus_x) - 1j * (plus_y - minus_y)) / (2 * step)

    # A(q) = h(q)^{-1} d_w h(q) at the four neighbours q of each point
    A = {
        'x+': np.linalg.solve(H['x+'], d_w(H['xx+'], H['c'], H['x+y+'], H['x+y-'])),
        'x-': np.linalg.solve(H['x-'], d_w(H['c'], H['xx-'], H['x-y+'], H['x-y-'])),
        'y+': np.linalg.solve(H['y+'], d_w(H['x+y+'], H['x-y+'], H['yy+'], H['c'])),
        'y-': np.linalg.solve(H['y-'], d_w(H['x+y-'], H['x-y-'], H['c'], H['yy-'])),
    }
    d_wbar = 0.5 * ((A['x+'] - A['x-']) + 1j * (A['y+'] - A['y-'])) / (2 * step)
    return -d_wbar


def metric_and_curvature_matrix(
    frame: Sequence[Section],
    grid: DiskGrid,
    richardson: Optional[bool] = None
) -> Tuple[List[MetricSample], CurvatureField]:
    """
    Metric h(w) and matrix curvature K(w) = -d_wbar (h^{-1} d_w h) of a frame

    A rank-1 frame is dispatched to the log-norm Laplacian, so it agrees with
    curvature_scalar.

    Args:
        frame: n holomorphic sections of equal length
        grid: Disk grid (stencil reach 2h)
        richardson: Apply one Richardson level (config default)

    Returns:
        (metric samples per point, CurvatureField with (P, n, n) values)

    Raises:
        RankError: If the frame is degenerate at a grid point
    """
    check_stencil(grid.r_max, 2 * grid.fd_step)
    for section in frame:
        _check_tail(section, grid.r_max + 2 * grid.fd_step)

    coeffs = _frame_coefficients(frame, grid.points)
    rank_tol = get_tolerance(config, 'rank')
    singular = np.linalg.svd(coeffs, compute_uv=False)
    bad = np.flatnonzero(singular[:, -1] <= rank_tol)
    if bad.size:
        w = complex(grid.points[bad[0]])
        raise RankError(f"Frame is degenerate at w={w}", w=w, field='frame')

    metrics = [MetricSample(w=complex(w), h_matrix=h) for w, h in zip(grid.points, _gram(coeffs))]

    if len(frame) == 1:
        scalar = curvature_scalar(frame[0], grid, richardson)
        values = scalar.values.astype(complex)[:, None, None]
        return metrics, CurvatureField(grid=grid, values=values, method='finite_difference')

    h = grid.fd_step
    values = _nested_curvature(frame, grid.points, h)
    if _use_richardson(richardson):
        values = (4.0 * _nested_curvature(frame, grid.points, h / 2) - values) / 3.0

    return metrics, CurvatureField(grid=grid, values=values, method='finite_difference')


def fit_homogeneity(field: CurvatureField, tol: float = 1e-4) -> dict:
    """
    Estimate lam_hat(w) = -K(w) (1 - |w|^2)^2

    A line bundle is reported homogeneous when lam_hat is constant to tol
    (relative).
    """
    if not field.is_scalar:
        raise ValueError("Homogeneity fit needs a scalar curvature field")
    estimates = -field.values * (1.0 - np.abs(field.grid.points) ** 2) ** 2
    mean = float(np.mean(estimates))
    spread = float(np.max(estimates) - np.min(estimates))
    return {
        'lambda_hat': mean,
        'spread': spread,
        'homogeneous': bool(spread <= tol * max(1.0, abs(mean))),
    }
