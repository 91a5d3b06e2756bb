"""
Weighted shifts - Truncated backward weighted shifts and their commutators

Operators act on the standard basis e_0..e_{N-1} with the backward
convention T e_{k+1} = w_{k+1} e_k, so every operator is upper triangular.
span{e_0..e_{N-1}} is invariant under the infinite shift, hence products and
polynomials of truncations are exactly truncations of the infinite-dimensional
products.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from src import config
from src.utils.config_loader import get_solver_setting
from src.utils.errors import ParameterError, StructuralError

logger = logging.getLogger(__name__)

MatrixLike = Union[np.ndarray, sparse.spmatrix]


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense carrier for operator arithmetic, optionally block structured"""

    entries: np.ndarray
    block_structure: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        entries = np.asarray(self.entries)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ParameterError(f"Operator must be square, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ParameterError("Operator entries must be finite")
        if self.block_structure is not None:
            sizes = tuple(int(s) for s in self.block_structure)
            if sum(sizes) != entries.shape[0]:
                raise ParameterError(
                    f"Block sizes {sizes} do not sum to dim {entries.shape[0]}"
                )
            object.__setattr__(self, 'block_structure', sizes)
        object.__setattr__(self, 'entries', entries)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def block_offsets(self) -> np.ndarray:
        sizes = self.block_structure or (self.dim,)
        return np.concatenate([[0], np.cumsum(sizes)])

    def block(self, j: int, k: int) -> np.ndarray:
        """Return block (j, k) of the block structure (0-based)"""
        offsets = self.block_offsets
        return self.entries[offsets[j]:offsets[j + 1], offsets[k]:offsets[k + 1]]

    def lower_block_norm(self) -> float:
        """Frobenius norm of everything strictly below the block diagonal"""
        offsets = self.block_offsets
        total = 0.0
        for j in range(len(offsets) - 1):
            for k in range(j):
                total += np.linalg.norm(self.block(j, k)) ** 2
        return float(np.sqrt(total))


@dataclass(frozen=True, eq=False)
class WeightedShift:
    """
    Truncated upper-triangular backward weighted shift

    Entry (k, k+1) equals weights[k]; the diagonal is constantly diag.
    When lam is set the shift is the weighted Bergman model M_z^(lam)*.
    """

    dim: int
    weights: np.ndarray
    diag: complex = 0.0
    lam: Optional[float] = None

    def __post_init__(self):
        weights = np.asarray(self.weights)
        if weights.shape != (self.dim - 1,):
            raise ParameterError(
                f"Expected {self.dim - 1} weights for dim {self.dim}, got {weights.shape}"
            )
        object.__setattr__(self, 'weights', weights)

    def to_dense(self) -> np.ndarray:
        dtype = np.result_type(self.weights, self.diag)
        matrix = np.diag(self.weights).astype(dtype)
        matrix = np.pad(matrix, ((0, 1), (1, 0)))
        if self.diag != 0:
            matrix = matrix + self.diag * np.eye(self.dim, dtype=dtype)
        return matrix

    def to_sparse(self) -> sparse.csr_matrix:
        diagonals = [self.weights]
        offsets = [1]
        if self.diag != 0:
            diagonals.append(np.full(self.dim, self.diag))
            offsets.append(0)
        return sparse.diags(diagonals, offsets, shape=(self.dim, self.dim), format='csr')

    @property
    def matrix(self) -> OperatorMatrix:
        return OperatorMatrix(self.to_dense())

    def resized(self, dim: int) -> 'WeightedShift':
        """
        Rebuild at another truncation

        Bergman models can grow or shrink; other shifts can only shrink
        (leading principal truncation).
        """
        if self.lam is not None:
            return build_bergman_shift(self.lam, dim)
        if dim > self.dim:
            raise ParameterError(
                f"Cannot grow a shift without a Bergman parameter ({self.dim} -> {dim})"
            )
        return WeightedShift(dim=dim, weights=self.weights[:dim - 1], diag=self.diag)


@dataclass(frozen=True)
class CommutatorProfile:
    """Diagonal of TT* - T*T with its tail gauges"""

    diagonal_entries: np.ndarray
    tail_sup: float
    decay_exponent: Optional[float]
    cutoff: int


def bergman_weights(lam: float, dim: int) -> np.ndarray:
    """Weights sqrt(k/(k+lam-1)) for k = 1..dim-1"""
    k = np.arange(1, dim, dtype=float)
    return np.sqrt(k / (k + lam - 1.0))


def build_bergman_shift(lam: float, dim: int) -> WeightedShift:
    """
    Build the truncated weighted Bergman shift M_z^(lam)*

    Args:
        lam: Bergman parameter, lam > 0
        dim: Truncation size N >= 2

    Returns:
        WeightedShift with a_0 = 0 and weights[k-1] = sqrt(k/(k+lam-1))

    Raises:
        ParameterError: If lam <= 0 or dim < 2
    """
    if not np.isfinite(lam) or lam <= 0:
        raise ParameterError(f"Bergman parameter must be positive, got {lam}", field='lambda')
    if int(dim) != dim or dim < 2:
        raise ParameterError(f"Truncation must be an integer >= 2, got {dim}", field='truncation')

    return WeightedShift(dim=int(dim), weights=bergman_weights(lam, int(dim)), lam=float(lam))


def weighted_shift(weights: Sequence[complex], diag: complex = 0.0) -> WeightedShift:
    """Build a shift from an explicit weight sequence, rejecting zero weights"""
    weights = np.asarray(weights)
    if np.any(weights == 0):
        index = int(np.flatnonzero(weights == 0)[0])
        raise StructuralError(f"Weight {index} is zero", field='weights')
    return WeightedShift(dim=len(weights) + 1, weights=weights, diag=diag)


def commutator_diagonal(op: MatrixLike) -> np.ndarray:
    """
    Diagonal of TT* - T*T without forming either product

    Entry n is the squared norm of row n minus the squared norm of column n.
    """
    if isinstance(op, OperatorMatrix):
        op = op.entries
    if sparse.issparse(op):
        squared = abs(op).power(2)
        rows = np.asarray(squared.sum(axis=1)).ravel()
        cols = np.asarray(squared.sum(axis=0)).ravel()
    else:
        squared = np.abs(op) ** 2
        rows = squared.sum(axis=1)
        cols = squared.sum(axis=0)
    return rows - cols


def fit_decay_exponent(
    values: np.ndarray,
    start: int,
    stop: int,
    min_samples: Optional[int] = None
) -> Optional[float]:
    """
    Least-squares slope of log|value| against log(index) over [start, stop)

    Zero entries and index 0 are skipped. Returns None with too few samples.
    """
    if min_samples is None:
        min_samples = int(get_solver_setting(config, 'min_tail_samples'))

    index = np.arange(len(values))
    window = (index >= max(start, 1)) & (index < stop) & (np.abs(values) > 0)
    if np.count_nonzero(window) < min_samples:
        return None

    slope, _ = np.polyfit(np.log(index[window]), np.log(np.abs(values[window])), 1)
    return float(slope)


def edge_index(dim: int, edge_fraction: Optional[float] = None) -> int:
    """First index of the excluded truncation edge"""
    if edge_fraction is None:
        edge_fraction = float(config['truncation']['edge_fraction'])
    return dim - int(np.ceil(edge_fraction * dim))


def commutator_profile(op: MatrixLike, cutoff: int) -> CommutatorProfile:
    """
    Self-commutator gauge of an arbitrary truncated operator

    Args:
        op: Dense, sparse or OperatorMatrix operator
        cutoff: First index of the tail

    Returns:
        CommutatorProfile over the whole diagonal
    """
    entries = commutator_diagonal(op)
    dim = len(entries)
    if cutoff < 0 or cutoff >= dim - 8:
        raise ParameterError(f"Cutoff {cutoff} must lie in [0, {dim - 8})", field='cutoff')

    stop = edge_index(dim)
    tail = entries[cutoff:stop]
    tail_sup = float(np.max(np.abs(tail))) if tail.size else 0.0

    return CommutatorProfile(
        diagonal_entries=entries,
        tail_sup=tail_sup,
        decay_exponent=fit_decay_exponent(entries, cutoff, stop),
        cutoff=cutoff
    )


def self_commutator_profile(shift: WeightedShift, cutoff: int) -> CommutatorProfile:
    """
    Diagonal of TT* - T*T for a weighted shift

    Entry n equals |w_{n+1}|^2 - |w_n|^2 with w_0 := 0 (and w_N := 0 at the
    truncation edge). The decay exponent is fitted on indices >= cutoff,
    ignoring the last 5% of indices.

    Args:
        shift: Weighted shift
        cutoff: First tail index, cutoff < dim - 8

    Returns:
        CommutatorProfile

    Raises:
        ParameterError: If cutoff is too large
    """
    if cutoff < 0 or cutoff >= shift.dim - 8:
        raise ParameterError(
            f"Cutoff {cutoff} must lie in [0, {shift.dim - 8})", field='cutoff'
        )

    squared = np.concatenate([[0.0], np.abs(shift.weights) ** 2, [0.0]])
    entries = squared[1:] - squared[:-1]

    stop = edge_index(shift.dim)
    tail = entries[cutoff:stop]
    profile = CommutatorProfile(
        diagonal_entries=entries,
        tail_sup=float(np.max(np.abs(tail))) if tail.size else 0.0,
        decay_exponent=fit_decay_exponent(entries, cutoff, stop),
        cutoff=cutoff
    )
    logger.debug(
        f"Commutator profile dim={shift.dim} cutoff={cutoff} "
        f"tail_sup={profile.tail_sup:.3e} exponent={profile.decay_exponent}"
    )
    return profile
