"""
Comparator - Second fundamental forms, couplings and equivalence verdicts

Unitary equivalence is decided index-wise from curvatures (equivalently the
Chern polynomial coefficients), the theta ratios of every block pair and the
recovered couplings. (U+K)-equivalence is verified against a supplied witness
Y with B = Y^{-1} A Y blockwise: K_A - K_B must equal the Laplacian of
ln phi_j and the theta ratios must scale by phi_j / phi_{j+1}.

Level pairs are 0-based in the API and 1-based in residual names.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from src import config
from src.geometry.chern import CHERN_FACTOR, chern_polynomial
from src.geometry.curvature import CurvatureField, curvature_scalar, mixed_derivative
from src.geometry.grid import DiskGrid
from src.geometry.sections import Section
from src.operators.flag import FlagOperator
from src.utils.config_loader import get_grid_defaults, get_tolerance
from src.utils.errors import LabError, ParameterError, StructuralError

logger = logging.getLogger(__name__)

VERDICTS = ('equivalent', 'not_equivalent', 'undecided')

# Largest n for which the permutation diagnostic is enumerated
MAX_PERMUTATION_BLOCKS = 6


def _section_radius(grid: DiskGrid) -> float:
    return grid.r_max + 2 * float(get_grid_defaults(config)['fd_step_max'])


def _apply_block(block, coeffs: np.ndarray) -> np.ndarray:
    """Apply an N x N block to (P, N) coefficient rows"""
    if sparse.issparse(block):
        return np.asarray((block @ coeffs.T).T)
    return (np.asarray(block) @ coeffs.T).T


@dataclass(frozen=True, eq=False)
class ThetaField:
    """
    Norm ratio ||T_{lj} t_j||^2 / ||t_j||^2 and, for adjacent levels, the form
    K / (ratio - K)^(1/2) with K the curvature of level l

    form_values is NaN where ratio <= 0.
    """

    grid: DiskGrid
    levels: Tuple[int, int]
    ratio_values: np.ndarray
    form_values: Optional[np.ndarray] = None

    @property
    def name(self) -> str:
        return f"theta({self.levels[0] + 1},{self.levels[1] + 1})"


def _check_levels(flag: FlagOperator, levels: Tuple[int, int]) -> Tuple[int, int]:
    l, j = levels
    if not 0 <= l < j < flag.n:
        raise ParameterError(f"Levels {levels} must satisfy 0 <= l < j < {flag.n}", field='levels')
    return int(l), int(j)


def theta_field(flag: FlagOperator, levels: Tuple[int, int], grid: DiskGrid) -> ThetaField:
    """
    Second fundamental form data of the level pair (l, j)

    Args:
        flag: Flag operator (model or conjugated)
        levels: 0-based (l, j) with l < j
        grid: Disk grid

    Returns:
        ThetaField; the form is only computed for j = l + 1
    """
    l, j = _check_levels(flag, levels)
    section = flag.section(j, r_max=_section_radius(grid))
    coeffs = section.coeffs_many(grid.points)
    applied = _apply_block(flag.block(l, j), coeffs)
    ratio = np.sum(np.abs(applied) ** 2, axis=1) / np.sum(np.abs(coeffs) ** 2, axis=1)

    form = None
    if j == l + 1:
        curvature = curvature_scalar(flag.section(l, r_max=_section_radius(grid)), grid).values
        form = np.full(grid.size, np.nan, dtype=complex)
        defined = ratio > 0
        form[defined] = curvature[defined] / np.sqrt((ratio[defined] - curvature[defined]).astype(complex))
        if not defined.all():
            logger.info(f"Block ({l + 1},{j + 1}) vanishes on {np.count_nonzero(~defined)} points; form undefined there")

    return ThetaField(grid=grid, levels=(l, j), ratio_values=ratio, form_values=form)


def _proportionality_factor(flag: FlagOperator, l: int, j: int, grid: DiskGrid) -> np.ndarray:
    """p(w) with T_{lj} t_j(w) = p(w) t_l(w), checked on the full vector"""
    radius = _section_radius(grid)
    t_j = flag.section(j, r_max=radius).coeffs_many(grid.points)
    t_l = flag.section(l, r_max=radius).coeffs_many(grid.points)
    image = _apply_block(flag.block(l, j), t_j)

    norms_sq = np.sum(np.abs(t_l) ** 2, axis=1)
    factor = np.sum(t_l.conj() * image, axis=1) / norms_sq
    mismatch = np.linalg.norm(image - factor[:, None] * t_l, axis=1) / np.sqrt(norms_sq)

    tol = get_tolerance(config, 'proportionality')
    worst = int(np.argmax(mismatch))
    if mismatch[worst] > tol:
        w = complex(grid.points[worst])
        raise StructuralError(
            f"T_({l + 1},{j + 1}) t_{j + 1}(w) is not proportional to t_{l + 1}(w) at w={w} "
            f"(mismatch {mismatch[worst]:.3e})",
            field='couplings'
        )
    return factor


def recover_coupling(flag: FlagOperator, levels: Tuple[int, int], grid: DiskGrid) -> np.ndarray:
    """
    Coupling samples phi_{lj}(w) with T_{lj} = phi_{lj}(T_ll) T_{l,l+1} ... T_{j-1,j}

    T_{lj} t_j = phi_{lj}(w) prod_m phi_{m,m+1}(w) t_l, so non-adjacent
    couplings are divided by the recovered adjacent ones (NaN where those vanish).

    Raises:
        StructuralError: If T_{lj} t_j is not proportional to t_l
    """
    l, j = _check_levels(flag, levels)
    factor = _proportionality_factor(flag, l, j, grid)
    if j == l + 1:
        return factor

    chain = np.ones(grid.size, dtype=complex)
    for m in range(l, j):
        chain = chain * _proportionality_factor(flag, m, m + 1, grid)
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.where(chain != 0, factor / chain, np.nan)


@dataclass(frozen=True, eq=False)
class PsiCheck:
    """Residual field K_T - K_T~ - d dbar ln phi of a blockwise similarity"""

    grid: DiskGrid
    level: int
    phi_values: np.ndarray
    residual_values: np.ndarray

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.residual_values)))


def _norm_ratio(numerator: Section, denominator: Section):
    return lambda points: numerator.norm_sq(points) / denominator.norm_sq(points)


def psi_laplacian_check(flag: FlagOperator, level: int, Y: np.ndarray, grid: DiskGrid) -> PsiCheck:
    """
    Check K_T - K_T~ = d dbar ln(||Y^{-1} t||^2 / ||t||^2) for T~ = Y^{-1} T Y on one level

    Args:
        flag: Flag operator
        level: 0-based diagonal block
        Y: N x N invertible conjugator
        grid: Disk grid

    Raises:
        NumericError: If Y is ill-conditioned
    """
    if not 0 <= level < flag.n:
        raise ParameterError(f"Level {level} outside the flag", field='level')
    blocks = [None] * flag.n
    blocks[level] = Y
    conjugated = flag.conjugate_blockwise(blocks)

    radius = _section_radius(grid)
    t = flag.section(level, r_max=radius)
    t_tilde = conjugated.section(level, r_max=radius)

    K = curvature_scalar(t, grid).values
    K_tilde = curvature_scalar(t_tilde, grid).values
    ratio = _norm_ratio(t_tilde, t)
    laplacian = mixed_derivative(lambda points: np.log(ratio(points)), grid)

    check = PsiCheck(
        grid=grid,
        level=level,
        phi_values=ratio(grid.points),
        residual_values=K - K_tilde - laplacian
    )
    logger.info(f"Psi identity on level {level + 1}: residual {check.residual:.3e}")
    return check


@dataclass(frozen=True, eq=False)
class UKWitness:
    """
    Blockwise conjugators Y_j (unitary + compact) with B = Y^{-1} A Y

    phi_j(w) = ||Y_j^{-1} t_j(w)||^2 / ||t_j(w)||^2 and
    Psi_j(w) = ln(alpha_j^2 phi_j(w) + 1 - alpha_j^2), the log-norm ratio of
    X_j = alpha_j Y_j^{-1} corrected by the essential part.
    """

    blocks: Tuple[np.ndarray, ...]
    alphas: Tuple[float, ...]
    grid: DiskGrid
    phi_fields: Tuple[np.ndarray, ...]
    psi_fields: Tuple[np.ndarray, ...]

    def __post_init__(self):
        for alpha in self.alphas:
            if not 0 < alpha < 1:
                raise ParameterError(f"alpha must lie in (0, 1), got {alpha}", field='alpha')
        for j, phi in enumerate(self.phi_fields):
            if np.any(phi <= 0):
                raise StructuralError(f"phi_{j + 1} is not positive on the grid", field='witness')


def uk_witness(
    A: FlagOperator,
    blocks: Sequence[Optional[np.ndarray]],
    grid: DiskGrid,
    alphas: Optional[Sequence[float]] = None
) -> UKWitness:
    """
    Build a UKWitness for B = Y^{-1} A Y

    Args:
        A: Flag the witness acts on
        blocks: Y_j per level (None for the identity)
        grid: Disk grid for phi and Psi samples
        alphas: alpha_j per level (0.5 by default)

    Raises:
        NumericError: If some Y_j is ill-conditioned
    """
    N = A.dim_per_block
    blocks = tuple(np.eye(N) if Y is None else np.asarray(Y) for Y in blocks)
    if alphas is None:
        alphas = (0.5,) * A.n
    if len(blocks) != A.n or len(alphas) != A.n:
        raise ParameterError(f"Witness needs {A.n} blocks and alphas", field='witness')

    conjugated = A.conjugate_blockwise(blocks)
    radius = _section_radius(grid)
    phis, psis = [], []
    for j, alpha in enumerate(alphas):
        phi = _norm_ratio(conjugated.section(j, r_max=radius), A.section(j, r_max=radius))(grid.points)
        phis.append(phi)
        psis.append(np.log(alpha ** 2 * phi + 1.0 - alpha ** 2))

    return UKWitness(
        blocks=blocks,
        alphas=tuple(float(a) for a in alphas),
        grid=grid,
        phi_fields=tuple(phis),
        psi_fields=tuple(psis)
    )


@dataclass
class EquivalenceVerdict:
    """
    Outcome of an equivalence decision

    Attributes:
        kind: 'unitary' or 'uk'
        verdict: 'equivalent', 'not_equivalent' or 'undecided'
        matching: Level permutation (always the identity)
        residuals: Named sup-norm residuals
        tol: Tolerance the verdict was taken at
        diagnostics: Extra data (Chern coefficient gaps, permutation matches, curvature corrections, errors)
        witness: Witness for 'uk' verdicts
    """

    kind: str
    verdict: str
    matching: List[int]
    residuals: Dict[str, float]
    tol: float
    diagnostics: Dict[str, object] = field(default_factory=dict)
    witness: Optional[UKWitness] = None

    def to_dict(self) -> dict:
        payload = {
            'kind': self.kind,
            'verdict': self.verdict,
            'matching': [m + 1 for m in self.matching],
            'residuals': self.residuals,
            'tol': self.tol,
            'diagnostics': self.diagnostics,
        }
        if self.witness is not None:
            payload['witness'] = {
                'alphas': list(self.witness.alphas),
                'phi_range': [[float(p.min()), float(p.max())] for p in self.witness.phi_fields],
            }
        return payload


def classify_residuals(residuals: Dict[str, float], tol: float) -> str:
    """equivalent if all <= tol, not_equivalent if any > separation * tol, else undecided"""
    separation = get_tolerance(config, 'verdict_separation')
    values = list(residuals.values())
    if any(not np.isfinite(v) for v in values):
        return 'undecided'
    if all(v <= tol for v in values):
        return 'equivalent'
    if any(v > separation * tol for v in values):
        return 'not_equivalent'
    return 'undecided'


def _sup(values: np.ndarray) -> float:
    return float(np.max(np.abs(values)))


def _curvatures(flag: FlagOperator, grid: DiskGrid) -> List[CurvatureField]:
    radius = _section_radius(grid)
    return [curvature_scalar(flag.section(j, r_max=radius), grid) for j in range(flag.n)]


def permutation_match(A_fields: Sequence[CurvatureField], B_fields: Sequence[CurvatureField], tol: float) -> Optional[List[int]]:
    """First non-identity permutation sigma with K_A,j = K_B,sigma(j) within tol, or None"""
    n = len(A_fields)
    if n > MAX_PERMUTATION_BLOCKS:
        return None
    identity = tuple(range(n))
    for sigma in itertools.permutations(range(n)):
        if sigma == identity:
            continue
        if all(_sup(A_fields[j].values - B_fields[s].values) <= tol for j, s in enumerate(sigma)):
            return list(sigma)
    return None


def _check_pair(A: FlagOperator, B: FlagOperator) -> None:
    if A.n != B.n:
        raise ParameterError(f"Flags have different block counts ({A.n} vs {B.n})", field='n')


def decide_unitary(A: FlagOperator, B: FlagOperator, grid: DiskGrid, tol: Optional[float] = None) -> EquivalenceVerdict:
    """
    Decide unitary equivalence of two flags on a grid

    Residuals: 'chern' (index-wise curvature gap, which fixes every Chern
    coefficient), 'theta(l,j)' for all level pairs and 'coupling(l,j)'.

    Args:
        A, B: Flags with the same number of blocks
        grid: Common grid
        tol: Residual tolerance (config 'compare' by default)

    Returns:
        EquivalenceVerdict of kind 'unitary'
    """
    _check_pair(A, B)
    if tol is None:
        tol = get_tolerance(config, 'compare')
    n = A.n

    K_A, K_B = _curvatures(A, grid), _curvatures(B, grid)
    residuals = {'chern': max(_sup(a.values - b.values) for a, b in zip(K_A, K_B))}
    diagnostics: Dict[str, object] = {
        'chern_coefficients': _sup(chern_polynomial(K_A).coefficients - chern_polynomial(K_B).coefficients),
    }

    for l, j in itertools.combinations(range(n), 2):
        name = f"({l + 1},{j + 1})"
        residuals[f"theta{name}"] = _sup(theta_field(A, (l, j), grid).ratio_values - theta_field(B, (l, j), grid).ratio_values)
        try:
            residuals[f"coupling{name}"] = _sup(recover_coupling(A, (l, j), grid) - recover_coupling(B, (l, j), grid))
        except LabError as exc:
            residuals[f"coupling{name}"] = float('nan')
            diagnostics[f"coupling{name}"] = exc.to_dict()

    verdict = classify_residuals(residuals, tol)
    match = permutation_match(K_A, K_B, tol)
    diagnostics['permutation_match'] = None if match is None else [s + 1 for s in match]
    if match is not None:
        logger.warning(f"Curvatures also match under the permutation {diagnostics['permutation_match']}")

    logger.info(f"Unitary comparison n={n}: {verdict} (worst residual {max(residuals.values()):.3e})")
    return EquivalenceVerdict(
        kind='unitary',
        verdict=verdict,
        matching=list(range(n)),
        residuals=residuals,
        tol=tol,
        diagnostics=diagnostics
    )


def decide_uk(
    A: FlagOperator,
    B: FlagOperator,
    witness: Optional[UKWitness],
    grid: DiskGrid,
    tol: Optional[float] = None
) -> EquivalenceVerdict:
    """
    Verify (U+K)-equivalence of two flags against a witness

    Residuals per level j: 'curvature(j)' = sup |K_A,j - K_B,j - d dbar ln phi_j|
    and, for adjacent pairs, 'theta(j,j+1)' =
    sup |(phi_j / phi_{j+1}) ratio_A - ratio_B|. The correction
    (i/2pi) d dbar ln phi_j is reported per level as a diagnostic.

    Args:
        A, B: Flags with the same number of blocks
        witness: UKWitness for B = Y^{-1} A Y, or None
        grid: Common grid
        tol: Residual tolerance

    Returns:
        EquivalenceVerdict of kind 'uk'; undecided without a witness
    """
    _check_pair(A, B)
    if tol is None:
        tol = get_tolerance(config, 'compare')
    n = A.n

    if witness is None:
        logger.info("No witness supplied; (U+K) comparison left undecided")
        return EquivalenceVerdict(
            kind='uk', verdict='undecided', matching=list(range(n)), residuals={}, tol=tol,
            diagnostics={'reason': 'no witness supplied'}
        )
    if not witness.grid.same_as(grid):
        raise ParameterError("Witness was sampled on another grid", field='grid')

    radius = _section_radius(grid)
    conjugated = A.conjugate_blockwise(witness.blocks)
    K_A, K_B = _curvatures(A, grid), _curvatures(B, grid)

    residuals: Dict[str, float] = {}
    corrections = []
    for j in range(n):
        ratio = _norm_ratio(conjugated.section(j, r_max=radius), A.section(j, r_max=radius))
        laplacian = mixed_derivative(lambda points, ratio=ratio: np.log(ratio(points)), grid)
        residuals[f"curvature({j + 1})"] = _sup(K_A[j].values - K_B[j].values - laplacian)
        corrections.append(_sup(CHERN_FACTOR * laplacian))

    phi = witness.phi_fields
    for j in range(n - 1):
        ratio_A = theta_field(A, (j, j + 1), grid).ratio_values
        ratio_B = theta_field(B, (j, j + 1), grid).ratio_values
        residuals[f"theta({j + 1},{j + 2})"] = _sup(phi[j] / phi[j + 1] * ratio_A - ratio_B)

    verdict = classify_residuals(residuals, tol)
    logger.info(f"(U+K) comparison n={n}: {verdict} (worst residual {max(residuals.values()):.3e})")
    return EquivalenceVerdict(
        kind='uk',
        verdict=verdict,
        matching=list(range(n)),
        residuals=residuals,
        tol=tol,
        diagnostics={'curvature_correction_sup': corrections},
        witness=witness
    )
