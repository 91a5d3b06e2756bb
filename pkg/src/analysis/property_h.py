"""
Property (H) - Growth of the Sylvester recursion between two Bergman shifts

For T1 = M^(lambda1)* and T2 = M^(lambda2)* the candidate X with
T1 X - X T2 = Y (Y the diagonal kernel element) has subdiagonal entries

    a_{k,k+1} x_{k+1,k} - x_{k,k-1} b_{k-1,k} = y_{k,k},   x_{1,0} = 0,

with y_{k,k} = prod_{i<k} b_{i,i+1} / prod_{i<k} a_{i,i+1}. Bounded growth of
x_{k+1,k} means Y is in the range of tau, so Property (H) fails. The log-log
slope of x_{k+1,k} decides it.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import gammaln

from src import config
from src.utils.config_loader import get_solver_setting, get_tolerance
from src.utils.errors import ParameterError

logger = logging.getLogger(__name__)

MIN_KMAX = 1000


@dataclass
class PropertyHReport:
    """
    Outcome of property_h_slope

    Attributes:
        lambda_pair: (lambda1, lambda2)
        k: Indices 1..k_max
        x: x_{k+1,k} from the recursion
        fitted_slope: Log-log slope over [k_max/10, k_max]
        verdict: 'diverges', 'bounded' or 'vanishes'
    """

    lambda_pair: Tuple[float, float]
    k: np.ndarray
    x: np.ndarray
    fitted_slope: float
    verdict: str

    @property
    def expected_slope(self) -> float:
        return 1.0 - (self.lambda_pair[1] - self.lambda_pair[0]) / 2.0

    @property
    def samples(self) -> list:
        return list(zip(self.k.tolist(), self.x.tolist()))

    def to_dict(self, max_samples: int = 64) -> dict:
        picks = np.unique(np.geomspace(1, len(self.k), max_samples).astype(int)) - 1
        return {
            'lambda1': self.lambda_pair[0],
            'lambda2': self.lambda_pair[1],
            'k_max': int(self.k[-1]),
            'slope': self.fitted_slope,
            'expected_slope': self.expected_slope,
            'verdict': self.verdict,
            'samples': [[int(self.k[i]), float(self.x[i])] for i in picks],
        }


def _log_weights(lam: float, k_max: int) -> np.ndarray:
    """log sqrt(k/(k+lam-1)) for k = 1..k_max"""
    k = np.arange(1, k_max + 1, dtype=float)
    return 0.5 * (np.log(k) - np.log(k + lam - 1.0))


def property_h_recursion(lambda1: float, lambda2: float, k_max: int) -> np.ndarray:
    """
    x_{k+1,k} for k = 1..k_max, computed in log-space

    Returns:
        Array of length k_max
    """
    log_a = _log_weights(lambda1, k_max)
    log_b = _log_weights(lambda2, k_max)
    # log y_{k,k} = sum_{i<k} (log b_i - log a_i)
    log_y = np.concatenate([[0.0], np.cumsum(log_b - log_a)[:-1]])

    log_x = np.empty(k_max)
    log_x[0] = log_y[0] - log_a[0]
    for k in range(1, k_max):
        log_x[k] = np.logaddexp(log_y[k], log_x[k - 1] + log_b[k - 1]) - log_a[k]
    return np.exp(log_x)


def property_h_closed_form(lambda1: float, lambda2: float, k) -> np.ndarray:
    """
    Telescoped x_{k+1,k} = k * prod_{i<k} b_i / prod_{i<=k} a_i through log-Gamma

    Grows like k^(1 - (lambda2 - lambda1)/2).
    """
    k = np.asarray(k, dtype=float)
    log_b = 0.5 * (gammaln(k) + gammaln(lambda2) - gammaln(k + lambda2 - 1.0))
    log_a = 0.5 * (gammaln(k + 1.0) + gammaln(lambda1) - gammaln(k + lambda1))
    return np.exp(np.log(k) + log_b - log_a)


def classify_slope(slope: float, band: Optional[float] = None) -> str:
    if band is None:
        band = get_tolerance(config, 'slope_band')
    if slope > band:
        return 'diverges'
    if slope < -band:
        return 'vanishes'
    return 'bounded'


def property_h_slope(lambda1: float, lambda2: float, k_max: Optional[int] = None) -> PropertyHReport:
    """
    Fit the growth of the Property (H) recursion

    Args:
        lambda1: Parameter of T1 (a weights)
        lambda2: Parameter of T2 (b weights)
        k_max: Last recursion index, >= 1000

    Returns:
        PropertyHReport with the slope fitted on [k_max/10, k_max]
    """
    if k_max is None:
        k_max = int(get_solver_setting(config, 'property_h_kmax'))
    if k_max < MIN_KMAX:
        raise ParameterError(f"k_max must be at least {MIN_KMAX}, got {k_max}", field='kmax')
    for name, lam in (('lambda1', lambda1), ('lambda2', lambda2)):
        if not np.isfinite(lam) or lam <= 0:
            raise ParameterError(f"{name} must be positive, got {lam}", field=name)

    x = property_h_recursion(lambda1, lambda2, k_max)
    k = np.arange(1, k_max + 1)
    window = k >= k_max // 10
    slope, _ = np.polyfit(np.log(k[window]), np.log(x[window]), 1)
    verdict = classify_slope(float(slope))

    if abs((lambda2 - lambda1) - 2.0) < 1e-12:
        logger.warning(f"Gap exactly 2 for ({lambda1}, {lambda2}): boundary case, no Property (H) claim")
    logger.info(f"Property (H) recursion ({lambda1}, {lambda2}) k_max={k_max}: slope {slope:.4f} -> {verdict}")

    return PropertyHReport(
        lambda_pair=(float(lambda1), float(lambda2)),
        k=k,
        x=x,
        fitted_slope=float(slope),
        verdict=verdict
    )
