"""
Disk grids - Sampling of the unit disk for finite-difference geometry
"""

import logging
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from src import config
from src.utils.config_loader import get_grid_defaults
from src.utils.errors import GridError, ParameterError

logger = logging.getLogger(__name__)

# Offsets (in units of h) of the 5-point Laplacian stencil
LAPLACIAN_OFFSETS = np.array([0, 1, -1, 1j, -1j])


@dataclass(frozen=True, eq=False)
class DiskGrid:
    """
    Points of the unit disk with a finite-difference step

    Polar grids keep their radii and angles (radians); points are ordered
    radius-major, then angle.
    """

    points: np.ndarray
    fd_step: float
    radii: Optional[np.ndarray] = None
    angles: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=complex).ravel()
        if points.size == 0:
            raise ParameterError("Grid has no points", field='grid')
        object.__setattr__(self, 'points', points)

        defaults = get_grid_defaults(config)
        if not defaults['fd_step_min'] <= self.fd_step <= defaults['fd_step_max']:
            raise ParameterError(
                f"fd_step {self.fd_step} outside [{defaults['fd_step_min']}, {defaults['fd_step_max']}]",
                field='fd_step'
            )
        check_stencil(self.r_max, 2 * self.fd_step)

    @classmethod
    def polar(
        cls,
        radii: Sequence[float],
        angles: Sequence[float],
        fd_step: Optional[float] = None
    ) -> 'DiskGrid':
        """
        Build a polar grid

        Args:
            radii: Increasing radii in [0, r_max], r_max <= configured cap
            angles: Angles in radians in [0, 2*pi)
            fd_step: Finite-difference step (config default when omitted)
        """
        defaults = get_grid_defaults(config)
        if fd_step is None:
            fd_step = float(defaults['fd_step'])

        radii = np.asarray(radii, dtype=float)
        angles = np.asarray(angles, dtype=float)
        if radii.size == 0 or angles.size == 0:
            raise ParameterError("Grid needs at least one radius and one angle", field='grid')
        if np.any(np.diff(radii) <= 0) or radii[0] < 0:
            raise ParameterError("Radii must be non-negative and increasing", field='grid')
        if radii[-1] > defaults['r_max'] + 1e-12:
            raise GridError(
                f"r_max {radii[-1]} exceeds the cap {defaults['r_max']}", field='grid'
            )
        if np.any(angles < 0) or np.any(angles >= 2 * np.pi):
            raise ParameterError("Angles must lie in [0, 2*pi)", field='grid')

        points = (radii[:, None] * np.exp(1j * angles[None, :])).ravel()
        return cls(points=points, fd_step=float(fd_step), radii=radii, angles=angles)

    @classmethod
    def from_points(cls, points: Sequence[complex], fd_step: Optional[float] = None) -> 'DiskGrid':
        """Build a grid from explicit points"""
        if fd_step is None:
            fd_step = float(get_grid_defaults(config)['fd_step'])
        return cls(points=np.asarray(points, dtype=complex), fd_step=float(fd_step))

    @property
    def r_max(self) -> float:
        return float(np.max(np.abs(self.points)))

    @property
    def size(self) -> int:
        return self.points.size

    def same_as(self, other: 'DiskGrid') -> bool:
        return self.fd_step == other.fd_step and np.array_equal(self.points, other.points)

    def describe(self) -> dict:
        """Grid parameters for manifests"""
        info = {'points': int(self.size), 'fd_step': self.fd_step, 'r_max': self.r_max}
        if self.radii is not None:
            info['radii'] = [float(r) for r in self.radii]
            info['angles_deg'] = [float(np.degrees(a)) for a in self.angles]
        return info


def check_stencil(r_max: float, reach: float) -> None:
    """Raise GridError unless r_max + reach < 1"""
    if r_max + reach >= 1.0:
        raise GridError(
            f"Finite-difference stencil leaves the disk (r_max {r_max} + {reach} >= 1)",
            field='grid'
        )


def _parse_range(text: str, name: str) -> np.ndarray:
    match = re.fullmatch(r'\s*([-+0-9.eE]+):([-+0-9.eE]+):([-+0-9.eE]+)\s*', text)
    if not match:
        raise ParameterError(f"Malformed {name} range '{text}', expected START:STOP:STEP", field='grid')
    start, stop, step = (float(v) for v in match.groups())
    if step <= 0 or stop < start:
        raise ParameterError(f"Invalid {name} range '{text}'", field='grid')
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def grid_from_spec(text: str, fd_step: Optional[float] = None) -> DiskGrid:
    """
    Parse 'r=START:STOP:STEP,theta=START:STOP:STEP' (theta in degrees)

    Both ranges include STOP; angles at or beyond 360 degrees are dropped.

    Args:
        text: Grid specification
        fd_step: Finite-difference step

    Returns:
        Polar DiskGrid
    """
    parts = dict()
    for item in text.split(','):
        if '=' not in item:
            raise ParameterError(f"Malformed grid item '{item}'", field='grid')
        key, value = item.split('=', 1)
        parts[key.strip()] = value

    if set(parts) != {'r', 'theta'}:
        raise ParameterError(f"Grid needs exactly r= and theta= ranges, got {sorted(parts)}", field='grid')

    radii = _parse_range(parts['r'], 'r')
    degrees = _parse_range(parts['theta'], 'theta')
    degrees = degrees[degrees < 360.0 - 1e-9]
    return DiskGrid.polar(radii, np.radians(degrees), fd_step)


def stencil_points(points: np.ndarray, step: float, offsets: np.ndarray = LAPLACIAN_OFFSETS) -> np.ndarray:
    """Return a (P, len(offsets)) array of shifted points"""
    return points[:, None] + step * offsets[None, :]


def log_laplacian_quarter(values: np.ndarray, step: float) -> np.ndarray:
    """
    One quarter of the 5-point Laplacian from stencil samples

    Args:
        values: (P, 5) samples at LAPLACIAN_OFFSETS
        step: Stencil step

    Returns:
        (P,) approximation of d^2/dw dwbar
    """
    center = values[:, 0]
    neighbours = values[:, 1:].sum(axis=1)
    return (neighbours - 4.0 * center) / (4.0 * step * step)
