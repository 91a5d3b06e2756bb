"""
Intertwining - Sylvester maps X -> T1 X - X T2, their solutions and kernels

Truncations of strictly upper-triangular operators have spurious kernel
elements (the corner unit E_{0,N-1} is always one). kernel_basis removes
them by re-solving every candidate at doubled truncation and keeping only
elements whose normalized entries are stable on the common window.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import linalg, sparse

from src import config
from src.operators.flag import FlagOperator
from src.operators.shift import OperatorMatrix, WeightedShift
from src.utils.config_loader import get_solver_setting, get_tolerance
from src.utils.errors import NumericError, ParameterError, RankError, SolvabilityError

logger = logging.getLogger(__name__)

OperatorLike = Union[OperatorMatrix, WeightedShift, np.ndarray]


def _as_dense(op: OperatorLike) -> np.ndarray:
    if isinstance(op, OperatorMatrix):
        return op.entries
    if isinstance(op, WeightedShift):
        return op.to_dense()
    if hasattr(op, 'toarray'):
        return op.toarray()
    return np.asarray(op)


def _is_upper(matrix: np.ndarray) -> bool:
    return not np.any(np.tril(matrix, -1))


@dataclass(frozen=True, eq=False)
class SylvesterMap:
    """
    Rosenblum operator tau(X) = T1 X - X T2

    Attributes:
        left: T1 (m x m)
        right: T2 (n x n)
        resize: Optional factory rebuilding the map at another per-side truncation
    """

    left: OperatorMatrix
    right: OperatorMatrix
    resize: Optional[Callable[[int], 'SylvesterMap']] = None

    def __post_init__(self):
        for name in ('left', 'right'):
            value = getattr(self, name)
            if not isinstance(value, OperatorMatrix):
                object.__setattr__(self, name, OperatorMatrix(_as_dense(value)))

    @classmethod
    def from_shifts(cls, left: WeightedShift, right: WeightedShift) -> 'SylvesterMap':
        """Map between two shifts that can be rebuilt at any truncation"""
        def resize(dim: int) -> 'SylvesterMap':
            return cls.from_shifts(left.resized(dim), right.resized(dim))

        return cls(OperatorMatrix(left.to_dense()), OperatorMatrix(right.to_dense()), resize=resize)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.left.dim, self.right.dim

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.left.entries @ X - X @ self.right.entries

    def residual(self, X: np.ndarray, rhs: np.ndarray) -> float:
        return float(np.linalg.norm(self.apply(X) - rhs))

    def vectorized(self) -> np.ndarray:
        """Matrix of tau acting on column-major vec(X)"""
        m, n = self.dims
        return np.kron(np.eye(n), self.left.entries) - np.kron(self.right.entries.T, np.eye(m))

    def truncated(self, dim: int) -> 'SylvesterMap':
        """Leading principal compression of both sides"""
        if self.resize is not None:
            return self.resize(dim)
        m, n = self.dims
        if dim > min(m, n):
            raise ParameterError(f"Cannot grow a map without a resize factory ({m}x{n} -> {dim})", field='base_dim')
        return SylvesterMap(
            OperatorMatrix(self.left.entries[:dim, :dim]),
            OperatorMatrix(self.right.entries[:dim, :dim])
        )


def _tolerance_scale(map: SylvesterMap, X: np.ndarray, rhs: np.ndarray) -> float:
    norms = max(np.linalg.norm(map.left.entries, 2), np.linalg.norm(map.right.entries, 2))
    return float(np.linalg.norm(rhs) + np.linalg.norm(X) * norms)


def _triangular_sweep(map: SylvesterMap, rhs: np.ndarray) -> Optional[np.ndarray]:
    """Column sweep (A - b_jj) x_j = r_j + sum_{m<j} x_m b_mj; None if a pivot vanishes"""
    A, B = map.left.entries, map.right.entries
    m, n = map.dims
    dtype = np.result_type(A, B, rhs, float)
    X = np.zeros((m, n), dtype=dtype)
    diag_A = np.diag(A)
    for j in range(n):
        shifted_diag = diag_A - B[j, j]
        if np.any(np.abs(shifted_diag) == 0):
            return None
        column = rhs[:, j] + X[:, :j] @ B[:j, j]
        X[:, j] = linalg.solve_triangular(A - B[j, j] * np.eye(m), column)
    return X


def _dense_solve(map: SylvesterMap, rhs: np.ndarray, least_squares: bool) -> np.ndarray:
    m, n = map.dims
    M = map.vectorized()
    vec = rhs.reshape(-1, order='F')
    singular = linalg.svd(M, compute_uv=False)
    condition = np.inf if singular[-1] == 0 else singular[0] / singular[-1]
    bound = float(get_solver_setting(config, 'condition_bound'))

    if condition <= bound:
        return linalg.solve(M, vec).reshape((m, n), order='F')

    candidate = linalg.lstsq(M, vec)[0].reshape((m, n), order='F')
    residual = map.residual(candidate, rhs)
    if least_squares:
        logger.info(f"Least-squares Sylvester solve (cond {condition:.3e}), residual {residual:.3e}")
        return candidate
    raise SolvabilityError(
        f"Sylvester system is singular (cond {condition:.3e}); best residual {residual:.3e}",
        residual=residual
    )


def sylvester_solve(map: SylvesterMap, rhs: np.ndarray, least_squares: bool = False) -> np.ndarray:
    """
    Solve T1 X - X T2 = rhs

    Jointly upper-triangular pairs are solved by column back-substitution;
    everything else, and any sweep whose residual is off, goes through the
    dense vectorized system.

    Args:
        map: Sylvester map
        rhs: m x n right-hand side
        least_squares: Return the minimal-norm least-squares solution for
            singular systems instead of raising

    Returns:
        Solution X

    Raises:
        SolvabilityError: If the system is singular and least_squares is off
    """
    rhs = np.asarray(rhs)
    if rhs.shape != map.dims:
        raise ParameterError(f"Right-hand side has shape {rhs.shape}, expected {map.dims}", field='rhs')

    tol = get_tolerance(config, 'kernel_residual')
    if _is_upper(map.left.entries) and _is_upper(map.right.entries):
        X = _triangular_sweep(map, rhs)
        if X is not None and map.residual(X, rhs) <= tol * _tolerance_scale(map, X, rhs):
            return X
        logger.debug("Triangular sweep unavailable, using the dense solve")

    return _dense_solve(map, rhs, least_squares)


@dataclass(frozen=True, eq=False)
class KernelBasis:
    """
    Numerical kernel of a Sylvester map after artifact filtering

    Attributes:
        elements: Filtered kernel elements at base truncation
        stability: Relative window change under doubling, one per element
        filtered_count: Number of surviving elements
        raw_count: Dimension of the unfiltered numerical kernel
        candidates: Every canonical candidate before filtering
        kept: Mask over candidates
    """

    elements: List[np.ndarray]
    stability: List[float]
    filtered_count: int
    raw_count: int
    candidates: List[np.ndarray] = field(default_factory=list)
    kept: List[bool] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'filtered_count': self.filtered_count,
            'raw_count': self.raw_count,
            'stability': self.stability,
            'element_norms': [float(np.linalg.norm(X, 2)) for X in self.elements],
        }


def _stabilizable(map: SylvesterMap) -> bool:
    """Upper-triangular pair with one common diagonal and a nonzero superdiagonal on the left"""
    A, B = map.left.entries, map.right.entries
    if not (_is_upper(A) and _is_upper(B)) or A.shape[0] < 2:
        return False
    diagonal = np.concatenate([np.diag(A), np.diag(B)])
    return bool(np.all(diagonal == diagonal[0]) and np.all(np.diag(A, 1) != 0))


def stabilized_element(map: SylvesterMap, first_row: np.ndarray) -> np.ndarray:
    """
    Kernel candidate with a prescribed first row

    Each column solves rows 0..M-2 of (A - a) x_j = sum_{m<j} x_m b_mj with
    x_j[0] fixed; the last row, where truncation artifacts live, is dropped.
    """
    A, B = map.left.entries, map.right.entries
    m, n = map.dims
    shifted = A - A[0, 0] * np.eye(m)
    upper = shifted[:-1, 1:]

    X = np.zeros((m, n), dtype=np.result_type(A, B, first_row, float))
    X[0, :] = first_row
    for j in range(n):
        rhs = X[:, :j] @ B[:j, j]
        X[1:, j] = linalg.solve_triangular(upper, rhs[:-1] - shifted[:-1, 0] * X[0, j])
    return X


def _first_row_pivots(first_rows: np.ndarray) -> List[int]:
    """Earliest row indices spanning the same space as the kernel's first rows"""
    pivots: List[int] = []
    rank = np.linalg.matrix_rank(first_rows)
    for p in range(first_rows.shape[0]):
        if len(pivots) == rank:
            break
        if np.linalg.matrix_rank(first_rows[pivots + [p]]) > len(pivots):
            pivots.append(p)
    return pivots


def _normalized_window(X: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    norm = np.linalg.norm(X, 2)
    window = X[:shape[0], :shape[1]]
    return window / norm if norm > 0 else window


def kernel_basis(
    map: SylvesterMap,
    base_dim: Optional[int] = None,
    tol: Optional[float] = None
) -> KernelBasis:
    """
    Filtered numerical kernel of a Sylvester map

    Args:
        map: Sylvester map; with a resize factory the filter compares base_dim
            against 2*base_dim, otherwise base_dim/2 against base_dim via
            leading principal compressions
        base_dim: Per-side truncation of the singular-value analysis (<= 64)
        tol: Relative singular-value threshold

    Returns:
        KernelBasis (possibly empty)

    Raises:
        NumericError: If a nonzero kernel cannot be filtered because the pair
            is not jointly upper triangular with a nonzero left superdiagonal
    """
    max_dim = int(config['truncation']['max_kernel_dim'])
    if base_dim is None:
        base_dim = min(min(map.dims), max_dim)
    if base_dim > max_dim:
        raise ParameterError(f"base_dim {base_dim} exceeds the dense limit {max_dim}", field='base_dim')
    if tol is None:
        tol = get_tolerance(config, 'kernel_svd')

    if map.resize is not None:
        small, large = map.resize(base_dim), map.resize(2 * base_dim)
    else:
        small, large = map.truncated(base_dim // 2), map.truncated(base_dim)

    m, n = small.dims
    _, singular, vh = linalg.svd(small.vectorized())
    threshold = tol * singular[0] if singular[0] > 0 else np.inf
    rank = int(np.count_nonzero(singular >= threshold))
    kernel = vh[rank:].conj().T
    raw_count = kernel.shape[1]
    if raw_count == 0:
        return KernelBasis(elements=[], stability=[], filtered_count=0, raw_count=0)

    residual_tol = get_tolerance(config, 'kernel_residual')
    stability_tol = get_tolerance(config, 'kernel_stability')

    if not _stabilizable(small):
        raise NumericError(
            "Kernel filter needs an upper-triangular pair with one diagonal and a nonzero superdiagonal; "
            f"{raw_count} raw elements left unfiltered"
        )

    # column-major vec: row 0 of column j sits at j*m
    first_rows = kernel[0::m, :]
    pivots = _first_row_pivots(first_rows)
    coefficients = linalg.solve(first_rows[pivots, :], np.eye(len(pivots)))
    seeds = first_rows @ coefficients

    candidates, elements, stability, kept = [], [], [], []
    for i in range(len(pivots)):
        seed = np.where(np.abs(seeds[:, i]) > tol, seeds[:, i], 0.0)
        X = stabilized_element(small, seed)
        candidates.append(X)
        if np.linalg.norm(small.apply(X)) > residual_tol * np.linalg.norm(X):
            kept.append(False)
            continue

        extended = stabilized_element(large, np.concatenate([seed, np.zeros(large.dims[1] - n)]))
        reference = _normalized_window(X, (m, n))
        change = float(np.linalg.norm(reference - _normalized_window(extended, (m, n))) / np.linalg.norm(reference))
        kept.append(change < stability_tol)
        if kept[-1]:
            elements.append(X)
            stability.append(change)

    removed = raw_count - len(elements)
    if removed:
        logger.info(f"Kernel filter removed {removed} of {raw_count} raw elements as truncation artifacts")
    return KernelBasis(
        elements=elements,
        stability=stability,
        filtered_count=len(elements),
        raw_count=raw_count,
        candidates=candidates,
        kept=kept
    )


def precedes(left: WeightedShift, right: WeightedShift, base_dim: Optional[int] = None) -> bool:
    """
    Strict order T1 < T2: Ker tau_{T1,T2} != 0 and Ker tau_{T2,T1} = 0 (filtered)

    For Bergman shifts this holds iff lambda_1 < lambda_2.
    """
    forward = kernel_basis(SylvesterMap.from_shifts(left, right), base_dim)
    backward = kernel_basis(SylvesterMap.from_shifts(right, left), base_dim)
    return forward.filtered_count > 0 and backward.filtered_count == 0


def _lower_mass_ratio(matrix: OperatorMatrix) -> float:
    norm = np.linalg.norm(matrix.entries)
    return float(matrix.lower_block_norm() / norm) if norm > 0 else 0.0


@dataclass
class TriangularityReport:
    """Block triangularity of the intertwiner X with XA = BX"""

    lower_mass_raw: float
    lower_mass: float
    inverse_lower_mass: float
    residual: float
    kernel_counts: Dict[str, Tuple[int, int]]
    intertwiner: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            'lower_mass_raw': self.lower_mass_raw,
            'lower_mass': self.lower_mass,
            'inverse_lower_mass': self.inverse_lower_mass,
            'residual': self.residual,
            'kernel_counts': {key: {'raw': raw, 'filtered': kept} for key, (raw, kept) in self.kernel_counts.items()},
        }


def kernel_flag_basis(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Unitary Q whose leading k columns span Ker M^k, and T = Q^H M Q

    M must be nilpotent with a single Jordan block, as every truncated
    diagonal block of a flag is. T is strictly upper triangular with a
    positive superdiagonal; an already strictly upper M returns Q = I.

    Raises:
        NumericError: If a kernel step does not grow by exactly one
    """
    M = np.asarray(matrix)
    N = M.shape[0]
    if not np.any(np.tril(M)):
        return np.eye(N), M

    tol = get_tolerance(config, 'kernel_svd')
    scale = np.linalg.norm(M, 2)
    Q = np.zeros((N, 0), dtype=complex)
    for k in range(N):
        projected = M - Q @ (Q.conj().T @ M)
        _, singular, vh = linalg.svd(projected)
        rank = int(np.count_nonzero(singular > tol * scale))
        if rank != N - k - 1:
            raise NumericError(
                f"Kernel flag step {k} has dimension {N - rank}, expected {k + 1}", index=k
            )
        null = vh[rank:].conj().T
        fresh = null - Q @ (Q.conj().T @ null)
        q = linalg.svd(fresh, full_matrices=False)[0][:, 0]
        if k == 0:
            pivot = q[np.argmax(np.abs(q))]
        else:
            pivot = Q[:, -1].conj() @ M @ q
        q = q * np.conj(pivot) / abs(pivot)
        Q = np.column_stack([Q, q])

    T = Q.conj().T @ M @ Q
    leak = np.linalg.norm(np.tril(T)) / max(np.linalg.norm(T), np.finfo(float).tiny)
    if leak > get_tolerance(config, 'compare'):
        raise NumericError(f"Kernel flag leaves {leak:.2e} of the block on or below the diagonal")
    return Q, np.triu(T, 1)


def _triangularized(flag: FlagOperator) -> Tuple[List[np.ndarray], np.ndarray]:
    """Block-diagonal unitaries and the flag written in its kernel-flag bases"""
    N = flag.dim_per_block
    bases = [kernel_flag_basis(_dense(flag.block(k, k)))[0] for k in range(flag.n)]
    U = linalg.block_diag(*bases)
    entries = U.conj().T @ flag.matrix.entries @ U
    for k in range(flag.n):
        rows = slice(k * N, (k + 1) * N)
        entries[rows, :k * N] = 0.0
        entries[rows, rows] = np.triu(entries[rows, rows], 1)
    return bases, entries


def _block(matrix: np.ndarray, r: int, c: int, N: int) -> np.ndarray:
    return matrix[r * N:(r + 1) * N, c * N:(c + 1) * N]


def _upper_system(left: np.ndarray, right: np.ndarray, n: int, N: int):
    """Matrix of X -> left X - X right on block-upper unknowns, with the slot of each block"""
    pairs = [(r, c) for r in range(n) for c in range(r, n)]
    slot = {pair: i for i, pair in enumerate(pairs)}
    size = N * N
    M = np.zeros((len(pairs) * size, len(pairs) * size), dtype=complex)
    I = np.eye(N)
    for (j, l), row in slot.items():
        rows = slice(row * size, (row + 1) * size)
        # left_jk X_kl, k >= j
        for k in range(j, l + 1):
            col = slot[(k, l)]
            M[rows, col * size:(col + 1) * size] += np.kron(I, _block(left, j, k, N))
        # X_jk right_kl, k <= l
        for k in range(j, l + 1):
            col = slot[(j, k)]
            M[rows, col * size:(col + 1) * size] -= np.kron(_block(right, k, l, N).T, I)
    return M, pairs


def _pack(X: np.ndarray, pairs, N: int) -> np.ndarray:
    return np.concatenate([_block(X, r, c, N).reshape(-1, order='F') for r, c in pairs])


def _block_identity(i: int, n: int, N: int) -> np.ndarray:
    J = np.zeros((n * N, n * N))
    _block(J, i, i, N)[:] = np.eye(N)
    return J


def _unpack(vector: np.ndarray, pairs, n: int, N: int) -> np.ndarray:
    X = np.zeros((n * N, n * N), dtype=complex)
    size = N * N
    for i, (r, c) in enumerate(pairs):
        _block(X, r, c, N)[:] = vector[i * size:(i + 1) * size].reshape((N, N), order='F')
    return X


def intertwiner_triangularity(A: FlagOperator, B: FlagOperator, base_dim: Optional[int] = None) -> TriangularityReport:
    """
    Solve XA = BX between two flags and measure the below-diagonal mass of X

    Both flags are rewritten in the kernel-flag bases of their diagonal
    blocks, so every diagonal block is strictly upper triangular. The lower
    blocks of X then form a closed system, solved from the largest block
    distance down: the homogeneous part of block (j, l) is the filtered
    kernel of tau_{B_jj, A_ll}, so a lower block survives only if that kernel
    passes the doubling check. The block-upper part is the numerical kernel
    of the remaining equations, taken along the block identities so that the
    diagonal blocks are invertible. The raw figure adds every unfiltered
    kernel candidate to the lower blocks.

    Args:
        A: Source flag
        B: Target flag with the same block count and truncation
        base_dim: Per-block truncation of the lower-block kernel analysis (<= truncation)

    Returns:
        TriangularityReport with mass ratios before and after filtering

    Raises:
        ParameterError: If the flags do not match or the dense system is too large
        RankError: If the chosen intertwiner has a singular diagonal block
    """
    if A.n != B.n or A.dim_per_block != B.dim_per_block:
        raise ParameterError(
            f"Flags differ in shape: {A.n}x{A.dim_per_block} vs {B.n}x{B.dim_per_block}", field='flag'
        )
    n, N = A.n, A.dim_per_block
    max_dim = int(config['truncation']['max_kernel_dim'])
    if n * N > max_dim:
        raise ParameterError(f"Flag dimension {n * N} exceeds the dense limit {max_dim}", field='truncation')
    if base_dim is None:
        base_dim = N
    if base_dim > N:
        raise ParameterError(f"base_dim {base_dim} exceeds the truncation {N}", field='base_dim')

    source_bases, a = _triangularized(A)
    target_bases, b = _triangularized(B)

    lower = np.zeros((n * N, n * N), dtype=complex)
    lower_raw = lower.copy()
    counts = {}
    for distance in range(n - 1, 0, -1):
        for l in range(n - distance):
            j = l + distance
            map = SylvesterMap(_block(b, j, j, N), _block(a, l, l, N))
            rhs = (
                sum((_block(lower, j, k, N) @ _block(a, k, l, N) for k in range(l)), np.zeros((N, N)))
                - sum((_block(b, j, k, N) @ _block(lower, k, l, N) for k in range(j + 1, n)), np.zeros((N, N)))
            )
            basis = kernel_basis(map, base_dim)
            counts[f"({j + 1},{l + 1})"] = (basis.raw_count, basis.filtered_count)

            target = _block(lower, j, l, N)
            if np.linalg.norm(rhs) > 0:
                target += sylvester_solve(map, rhs, least_squares=True)
            for X in basis.elements:
                target[:X.shape[0], :X.shape[1]] += X / np.linalg.norm(X, 2)
            raw_target = _block(lower_raw, j, l, N)
            for X in basis.candidates:
                raw_target[:X.shape[0], :X.shape[1]] += X / np.linalg.norm(X, 2)

    M, pairs = _upper_system(b, a, n, N)
    u, singular, vh = linalg.svd(M)
    threshold = get_tolerance(config, 'kernel_svd') * singular[0]
    rank = int(np.count_nonzero(singular >= threshold))
    kernel = vh[rank:].conj().T
    if kernel.shape[1] == 0:
        raise RankError("XA = BX has no nonzero block-upper solution")

    # pseudo-inverse solve of the block-upper equations driven by the lower blocks
    coupling = _pack(-(b @ lower - lower @ a), pairs, N)
    particular = vh[:rank].conj().T @ ((u[:, :rank].conj().T @ coupling) / singular[:rank])
    identities = np.stack([_pack(_block_identity(i, n, N), pairs, N) for i in range(n)], axis=1)
    overlap = kernel.conj().T @ identities
    weights = linalg.svd(overlap)[2][0].conj()
    upper = _unpack(particular + kernel @ (overlap @ weights), pairs, n, N)

    P, Q = linalg.block_diag(*source_bases), linalg.block_diag(*target_bases)
    structure = (N,) * n
    X_entries = Q @ (upper + lower) @ P.conj().T
    X_entries /= np.linalg.norm(X_entries, 2)
    X = OperatorMatrix(X_entries, structure)
    X_raw = OperatorMatrix(Q @ (upper + lower + lower_raw) @ P.conj().T, structure)

    bound = float(get_solver_setting(config, 'condition_bound'))
    for k in range(n):
        condition = np.linalg.cond(X.block(k, k))
        if not condition < bound:
            raise RankError(f"Intertwiner diagonal block {k + 1} is singular (cond {condition:.3e})")
    X_inv = OperatorMatrix(linalg.inv(X.entries), structure)

    a_full = A.matrix.entries
    residual = float(np.linalg.norm(X.entries @ a_full - B.matrix.entries @ X.entries) / np.linalg.norm(a_full))

    report = TriangularityReport(
        lower_mass_raw=_lower_mass_ratio(X_raw),
        lower_mass=_lower_mass_ratio(X),
        inverse_lower_mass=_lower_mass_ratio(X_inv),
        residual=residual,
        kernel_counts=counts,
        intertwiner=X.entries
    )
    logger.info(
        f"Intertwiner lower-block mass {report.lower_mass:.2e} "
        f"(raw {report.lower_mass_raw:.2e}), residual {residual:.2e}"
    )
    return report


def _dense(block) -> np.ndarray:
    return block.toarray() if sparse.issparse(block) else np.asarray(block)


def diagonal_reduction(A: FlagOperator, B: FlagOperator) -> dict:
    """
    Compare the diagonal and first-superdiagonal data of two flags

    Returns:
        Dict with diagonals_equal, superdiagonals_equal and the per-pair
        superdiagonal differences (Frobenius norm)
    """
    if A.n != B.n or A.dim_per_block != B.dim_per_block:
        return {'diagonals_equal': False, 'superdiagonals_equal': False, 'superdiagonal_differences': []}

    diagonals_equal = A.lambdas == B.lambdas and all(
        np.array_equal(_dense(A.block(k, k)), _dense(B.block(k, k))) for k in range(A.n)
    )
    differences = [
        float(np.linalg.norm(_dense(A.block(k, k + 1)) - _dense(B.block(k, k + 1))))
        for k in range(A.n - 1)
    ]
    return {
        'diagonals_equal': bool(diagonals_equal),
        'superdiagonals_equal': bool(diagonals_equal and all(d == 0 for d in differences)),
        'superdiagonal_differences': differences,
    }
