"""
Holomorphic sections - Eigenvector fields w -> Ker(T - w)

Sections come from the exact algebraic recursion on the shift weights.
Numeric nullspaces are never used: a truncated nilpotent shift has no
kernel at w != 0, so SVD nullspace extraction on a truncation is a trap.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

from src import config
from src.operators.shift import WeightedShift, build_bergman_shift
from src.utils.config_loader import get_grid_defaults, get_tolerance
from src.utils.errors import StructuralError, TruncationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Section:
    """
    Holomorphic section sampled on demand

    Attributes:
        evaluate: Maps a (P,) array of points to a (P, source_dim) array of
            coefficients in e_0..e_{N-1}
        source_dim: Truncation N of the owning operator
        tail_estimate: Bound on discarded mass at the r_max it was built for
        tail_bound: Optional map radius -> tail estimate
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    source_dim: int
    tail_estimate: float = 0.0
    tail_bound: Optional[Callable[[float], float]] = None

    def coeffs(self, w: complex) -> np.ndarray:
        """Coefficient vector at a single point"""
        return self.evaluate(np.array([w], dtype=complex))[0]

    def coeffs_many(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=complex)
        values = self.evaluate(points.ravel())
        return values.reshape(points.shape + (values.shape[-1],))

    def norm_sq(self, points: np.ndarray) -> np.ndarray:
        """Squared norms ||t(w)||^2 with the shape of points"""
        values = self.coeffs_many(points)
        return np.sum(np.abs(values) ** 2, axis=-1)

    def tail_at(self, radius: float) -> float:
        if self.tail_bound is None:
            return self.tail_estimate
        return self.tail_bound(radius)

    def transformed(self, matrix: np.ndarray) -> 'Section':
        """Section of a similar operator: w -> matrix @ t(w)"""
        base = self

        def evaluate(points: np.ndarray) -> np.ndarray:
            return (matrix @ base.evaluate(points).T).T

        return Section(
            evaluate=evaluate,
            source_dim=matrix.shape[0],
            tail_estimate=self.tail_estimate,
            tail_bound=self.tail_bound
        )


def _default_radius() -> float:
    defaults = get_grid_defaults(config)
    return float(defaults['r_max'] + 2 * defaults['fd_step_max'])


def _log_last_coefficient(log_weights: np.ndarray, radius: float) -> float:
    """log |c_{N-1}(r)| = (N-1) log r - sum log|w_j|"""
    return len(log_weights) * np.log(radius) - float(np.sum(log_weights))


def required_dim(lam: float, radius: float, bound: float, start: int) -> int:
    """
    Smallest truncation whose Bergman section tail r |c_{N-1}(r)| is below bound

    Works in log-space: log|c_n(r)| = n log r + (1/2)[log Gamma(n+lam) - log Gamma(n+1) - log Gamma(lam)].
    """
    if radius <= 0:
        return 2
    if radius >= 1:
        raise TruncationError(f"No truncation certifies a section at radius {radius}")
    n = np.arange(1, max(4 * start, 1 << 14), dtype=float)
    while True:
        log_c = n * np.log(radius) + 0.5 * (gammaln(n + lam) - gammaln(n + 1) - gammaln(lam))
        ok = np.flatnonzero(np.log(radius) + log_c < np.log(bound))
        if ok.size:
            return int(n[ok[0]]) + 1
        n = np.arange(n[-1] + 1, 4 * n[-1], dtype=float)


def eigen_coefficients(shift: WeightedShift, points: np.ndarray) -> np.ndarray:
    """(P, N) eigen-section coefficients of a shift, without tail certification"""
    z = np.asarray(points, dtype=complex).ravel() - shift.diag
    coeffs = np.ones((z.size, shift.dim), dtype=complex)
    coeffs[:, 1:] = np.cumprod(z[:, None] / shift.weights[None, :], axis=1)
    return coeffs


def eigen_section(
    shift: WeightedShift,
    r_max: Optional[float] = None,
    tail_bound: Optional[float] = None
) -> Section:
    """
    Eigen-section t(w) of a weighted shift

    coeffs(w)[0] = 1 and coeffs(w)[k] = (w - a_0)^k / prod_{j<=k} w_j.

    Args:
        shift: Weighted shift with nonzero weights
        r_max: Radius at which the tail is certified
        tail_bound: Largest admissible tail r |c_{N-1}(r)|

    Returns:
        Section of the shift

    Raises:
        StructuralError: If a weight is zero
        TruncationError: If the tail at r_max exceeds tail_bound
    """
    weights = np.asarray(shift.weights)
    if np.any(weights == 0):
        index = int(np.flatnonzero(weights == 0)[0])
        raise StructuralError(f"Weight {index} is zero; no eigenvector recursion", field='weights')
    if r_max is None:
        r_max = _default_radius()
    if tail_bound is None:
        tail_bound = get_tolerance(config, 'section_tail')

    diag = shift.diag
    log_weights = np.log(np.abs(weights))
    reach = abs(diag)

    def tail(radius: float) -> float:
        r = radius + reach
        if r == 0:
            return 0.0
        return float(r * np.exp(_log_last_coefficient(log_weights, r)))

    tail_estimate = tail(r_max)
    if tail_estimate >= tail_bound:
        needed = None
        if shift.lam is not None:
            needed = required_dim(shift.lam, r_max + reach, tail_bound, shift.dim)
        raise TruncationError(
            f"Section tail {tail_estimate:.3e} at r={r_max} exceeds {tail_bound:.0e}; "
            f"required dim {needed}",
            required_dim=needed
        )

    return Section(
        evaluate=lambda points: eigen_coefficients(shift, points),
        source_dim=shift.dim,
        tail_estimate=tail_estimate,
        tail_bound=tail
    )


def bergman_norm_sq(lam: float, w: complex) -> float:
    """Closed form ||t(w)||^2 = (1 - |w|^2)^(-lam) of the infinite model"""
    return float((1.0 - abs(w) ** 2) ** (-lam))


def mobius_section(section: Section, alpha: complex) -> Section:
    """
    Eigen-section of phi_alpha(T) from a section of T

    phi_alpha(T) t(z) = phi_alpha(z) t(z), so the eigenvector for u is
    t((u + alpha) / (1 + conj(alpha) u)).
    """
    a = complex(alpha)
    base = section

    def evaluate(points: np.ndarray) -> np.ndarray:
        u = np.asarray(points, dtype=complex)
        return base.evaluate((u + a) / (1 + np.conj(a) * u))

    def tail(radius: float) -> float:
        return base.tail_at((radius + abs(a)) / (1 + abs(a) * radius))

    return Section(
        evaluate=evaluate,
        source_dim=section.source_dim,
        tail_estimate=section.tail_estimate,
        tail_bound=tail
    )


def bergman_section(lam: float, dim: int, r_max: Optional[float] = None) -> Section:
    """Shortcut: eigen-section of the lam-Bergman shift"""
    return eigen_section(build_bergman_shift(lam, dim), r_max=r_max)

