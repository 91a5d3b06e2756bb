"""
Frames - Holomorphic frames gamma_1..gamma_n of flag operators

gamma_j solves (T - w) gamma_j = 0 blockwise: x_j = t_j(w), then for
k = j-1..0, (S_k - w) x_k = -sum_{l>k} T_{k,l} x_l. Each block equation is
solved by the forward recursion y_{i+1} = (r_i + (w - a_0) y_i) / w_{i+1}
with y_0 = 0, which fixes the frame normalization. Back-substitution from
the truncation edge is unstable (it divides by w^N) and is not used.
"""

import logging
from typing import List, Optional

import numpy as np

from src import config
from src.geometry.sections import Section, eigen_coefficients
from src.operators.flag import FlagOperator
from src.operators.shift import WeightedShift
from src.utils.config_loader import get_tolerance
from src.utils.errors import TruncationError

logger = logging.getLogger(__name__)


def forward_solve(shift: WeightedShift, points: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """
    Solve (S - w) y = r on rows 0..N-2 with y_0 = 0, one point per row of rhs

    Args:
        shift: Diagonal shift S
        points: (P,) eigenvalues w
        rhs: (P, N) right-hand sides

    Returns:
        (P, N) solutions
    """
    y = np.zeros_like(rhs, dtype=complex)
    z = np.asarray(points, dtype=complex) - shift.diag
    for i, weight in enumerate(shift.weights):
        y[:, i + 1] = (rhs[:, i] + z * y[:, i]) / weight
    return y


def frame_coefficients(flag: FlagOperator, j: int, points: np.ndarray) -> np.ndarray:
    """
    Coefficients of gamma_j at points

    Returns:
        (P, n*N) array, blocks k > j are zero
    """
    points = np.asarray(points, dtype=complex).ravel()
    N, n = flag.dim_per_block, flag.n
    blocks = [np.zeros((points.size, N), dtype=complex) for _ in range(n)]
    blocks[j] = eigen_coefficients(flag.diag_blocks[j], points)

    for k in range(j - 1, -1, -1):
        rhs = np.zeros((points.size, N), dtype=complex)
        for l in range(k + 1, j + 1):
            if (k, l) in flag.model_blocks:
                rhs -= (flag.model_blocks[(k, l)] @ blocks[l].T).T
        blocks[k] = forward_solve(flag.diag_blocks[k], points, rhs)

    if not flag.is_model:
        blocks = [(flag.similarity_inv[k] @ blocks[k].T).T for k in range(n)]
    return np.concatenate(blocks, axis=1)


def frame_residuals(flag: FlagOperator, j: int, points: np.ndarray) -> np.ndarray:
    """Relative residuals ||(T - w) gamma_j|| / ||gamma_j|| per point"""
    gamma = frame_coefficients(flag, j, points)
    applied = (flag.sparse_matrix @ gamma.T).T - points[:, None] * gamma
    return np.linalg.norm(applied, axis=1) / np.linalg.norm(gamma, axis=1)


def doubling_change(flag: FlagOperator, j: int, points: np.ndarray) -> float:
    """Largest relative change of gamma_j on the common window when the truncation doubles"""
    N = flag.dim_per_block
    small = frame_coefficients(flag, j, points)
    large = frame_coefficients(flag.resized(2 * N), j, points)
    window = np.concatenate([large[:, k * 2 * N:k * 2 * N + N] for k in range(flag.n)], axis=1)
    change = np.linalg.norm(small - window, axis=1) / np.linalg.norm(large, axis=1)
    return float(change.max())


def solve_frame(
    flag: FlagOperator,
    points: np.ndarray,
    r_max: Optional[float] = None
) -> List[Section]:
    """
    Holomorphic frame gamma_1..gamma_n of a flag

    Convergence is validated at the given points by doubling the truncation
    (relative change below the frame_doubling tolerance), and every frame
    vector must satisfy ||(T - w) gamma_j|| <= tol ||gamma_j||.

    Args:
        flag: Flag operator
        points: Points at which to validate the frame
        r_max: Radius for the section tail certificates

    Returns:
        n Sections of length n*N

    Raises:
        TruncationError: If the frame is not converged under doubling
    """
    points = np.asarray(points, dtype=complex).ravel()
    doubling_tol = get_tolerance(config, 'frame_doubling')
    residual_tol = get_tolerance(config, 'frame_residual')

    frame = []
    for j in range(flag.n):
        section = flag.section(j, r_max=r_max)

        change = doubling_change(flag, j, points)
        if change >= doubling_tol:
            raise TruncationError(
                f"Frame vector {j + 1} changes by {change:.3e} under doubling",
                required_dim=4 * flag.dim_per_block
            )
        residual = float(frame_residuals(flag, j, points).max())
        if residual > residual_tol:
            raise TruncationError(
                f"Frame vector {j + 1} has residual {residual:.3e}",
                required_dim=2 * flag.dim_per_block
            )
        logger.debug(f"Frame vector {j + 1}: doubling change {change:.2e}, residual {residual:.2e}")

        frame.append(Section(
            evaluate=lambda pts, j=j: frame_coefficients(flag, j, pts),
            source_dim=flag.dim,
            tail_estimate=section.tail_estimate,
            tail_bound=section.tail_bound
        ))
    return frame
