"""
Idempotent families - Orthogonalization of complete idempotent families

Stage j writes the current P_j against Ran P_j (+) its orthogonal complement
inside the residual subspace as [[I, M], [0, 0]] and conjugates everything by
G = [[I, M], [0, I]], which turns P_j into the orthogonal projection onto
Ran P_j. The residual subspace then shrinks to the complement.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from src import config
from src.operators.shift import OperatorMatrix
from src.utils.config_loader import get_tolerance
from src.utils.errors import ParameterError, StructuralError

logger = logging.getLogger(__name__)

# Off-diagonal parts at or below this size are treated as already orthogonal
ZERO_COUPLING = 1e-12


def _outside_window(matrix: np.ndarray) -> float:
    """Frobenius norm of everything outside the leading half-size window"""
    half = matrix.shape[0] // 2
    inner = np.linalg.norm(matrix[:half, :half])
    return float(np.sqrt(max(np.linalg.norm(matrix) ** 2 - inner ** 2, 0.0)))


@dataclass(frozen=True, eq=False)
class IdempotentFamily:
    """
    Complete family of idempotents P_1..P_n

    Attributes:
        projections: N x N idempotents with sum I and P_k P_j = 0 (k != j)
        compact_gauge: Per-member tail norm of P_j - P_j^*
    """

    projections: Tuple[np.ndarray, ...]
    compact_gauge: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        projections = tuple(np.asarray(p) for p in self.projections)
        if not projections:
            raise ParameterError("Idempotent family is empty", field='projections')
        dim = projections[0].shape[0]
        if any(p.shape != (dim, dim) for p in projections):
            raise ParameterError("Idempotents must share one square shape", field='projections')

        tol = get_tolerance(config, 'idempotent')
        if np.abs(sum(projections) - np.eye(dim)).max() > tol:
            raise StructuralError("Idempotents do not sum to the identity", field='projections')
        for j, p in enumerate(projections):
            if np.abs(p @ p - p).max() > tol:
                raise StructuralError(f"Member {j + 1} is not idempotent", field='projections')
            for k, q in enumerate(projections):
                if k != j and np.abs(p @ q).max() > tol:
                    raise StructuralError(f"Members {j + 1} and {k + 1} are not disjoint", field='projections')

        gauge = tuple(_outside_window(p - p.conj().T) for p in projections)
        object.__setattr__(self, 'projections', projections)
        object.__setattr__(self, 'compact_gauge', gauge)

    @property
    def dim(self) -> int:
        return self.projections[0].shape[0]


@dataclass(frozen=True, eq=False)
class OrthogonalizationResult:
    """Conjugator X with X P_j X^{-1} = Q_j and the orthogonal projections Q_j"""

    conjugator: OperatorMatrix
    projections: Tuple[np.ndarray, ...]
    compact_tail: float
    residuals: dict


def projection_residuals(projections: Sequence[np.ndarray]) -> dict:
    """Sup-norm residuals of Q^2 = Q, Q = Q^*, sum Q = I and Q_j Q_k = 0"""
    dim = projections[0].shape[0]
    pairwise = max(
        (float(np.abs(p @ q).max()) for j, p in enumerate(projections)
         for k, q in enumerate(projections) if j != k),
        default=0.0
    )
    return {
        'idempotent': max(float(np.abs(p @ p - p).max()) for p in projections),
        'self_adjoint': max(float(np.abs(p - p.conj().T).max()) for p in projections),
        'sum': float(np.abs(sum(projections) - np.eye(dim)).max()),
        'pairwise': pairwise,
    }


def orthogonalize_idempotents(family: IdempotentFamily) -> OrthogonalizationResult:
    """
    Conjugate a complete idempotent family to orthogonal projections

    Args:
        family: Idempotent family

    Returns:
        OrthogonalizationResult; the conjugator is exactly I when the family
        is already orthogonal
    """
    dim = family.dim
    members = [p.astype(complex) for p in family.projections]
    conjugator = np.eye(dim, dtype=complex)
    basis = np.eye(dim, dtype=complex)
    outputs: List[np.ndarray] = []

    for j in range(len(members) - 1):
        local = basis.conj().T @ members[j] @ basis
        rank = int(round(float(np.trace(local).real)))
        if rank < 0 or rank > local.shape[0]:
            raise StructuralError(f"Member {j + 1} has invalid rank {rank}", field='projections')

        left, _, _ = linalg.svd(local)
        range_basis, complement = left[:, :rank], left[:, rank:]
        coupling = range_basis.conj().T @ local @ complement

        if np.abs(coupling).max(initial=0.0) > ZERO_COUPLING:
            lifted = basis @ range_basis @ coupling @ complement.conj().T @ basis.conj().T
            step, step_inv = np.eye(dim) + lifted, np.eye(dim) - lifted
            conjugator = step @ conjugator
            members = [step @ p @ step_inv for p in members]
            logger.debug(f"Stage {j + 1}: off-diagonal part {np.abs(coupling).max():.3e}")

        span = basis @ range_basis
        outputs.append(span @ span.conj().T)
        basis = basis @ complement

    outputs.append(basis @ basis.conj().T)

    result = OrthogonalizationResult(
        conjugator=OperatorMatrix(conjugator),
        projections=tuple(outputs),
        compact_tail=_outside_window(conjugator - np.eye(dim)),
        residuals=projection_residuals(outputs)
    )
    logger.info(
        f"Orthogonalized {len(outputs)} idempotents of dim {dim}: "
        f"max residual {max(result.residuals.values()):.2e}"
    )
    return result


def random_idempotent_family(
    members: int,
    dim: int,
    seed: int,
    scale: float = 0.1,
    sizes: Optional[Sequence[int]] = None
) -> IdempotentFamily:
    """
    Seeded family P_j = S E_j S^{-1} with S = I + small nilpotent upper-triangular part

    Args:
        members: Number of idempotents
        dim: Matrix size
        seed: RNG seed
        scale: Size of the nilpotent perturbation entries
        sizes: Ranks of the E_j (near-equal split by default)
    """
    if sizes is None:
        base, extra = divmod(dim, members)
        sizes = [base + (1 if j < extra else 0) for j in range(members)]
    if sum(sizes) != dim:
        raise ParameterError(f"Ranks {list(sizes)} do not sum to {dim}", field='sizes')

    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    S = np.eye(dim) + scale * np.triu(noise, 1) / np.sqrt(dim)
    S_inv = linalg.solve_triangular(S, np.eye(dim))

    offsets = np.concatenate([[0], np.cumsum(sizes)])
    projections = []
    for j in range(members):
        E = np.zeros((dim, dim))
        E[offsets[j]:offsets[j + 1], offsets[j]:offsets[j + 1]] = np.eye(sizes[j])
        projections.append(S @ E @ S_inv)

    # the last member absorbs the rounding of the sum
    projections[-1] = np.eye(dim) - sum(projections[:-1])
    return IdempotentFamily(tuple(projections))
