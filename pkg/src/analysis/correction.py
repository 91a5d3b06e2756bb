"""
Compact correction - Strictly upper K with (I + K) T = T~ (I + K)

T and T~ are model flags sharing diagonal blocks and first superdiagonals.
Every block is written as symbol(S_j) Pi_{jk} with Pi_{jk} = D_j ... D_{k-1}
the product of diagonal intertwiners, so operator products become products of
power series and S_j Pi_{jk} = Pi_{jk} S_k makes every K_{jk} = C_{jk}(S_j) Pi_{jk}
solve the homogeneous block equation. The block equation at (j, j+m+1) then
fixes the distance-m symbols:

    C_{j,j+m} Phi_{j+m,j+m+1} = Phi~_{j,j+m+1} - Phi_{j,j+m+1}
                                + Phi~_{j,j+1} C_{j+1,j+m+1}
                                + sum_{j+1<l<j+m+1} Phi~_{jl} C_{l,j+m+1}
                                - sum_{j<l<j+m} C_{jl} Phi_{l,j+m+1}

solved for j descending. C_{n-1-m, n-1} has no equation and is the boundary.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from src import config
from src.operators.calculus import evaluate_series, series_divide, series_multiply
from src.operators.flag import FlagOperator, intertwiner_diagonal
from src.utils.config_loader import get_tolerance
from src.utils.errors import NumericError, ParameterError, StructuralError

logger = logging.getLogger(__name__)

BOUNDARY_CHOICES = ('unit', 'zero')

Symbol = np.ndarray
Key = Tuple[int, int]


def _add(*terms: Symbol) -> Symbol:
    size = max((t.size for t in terms), default=0)
    total = np.zeros(size, dtype=complex)
    for t in terms:
        total[:t.size] += t
    return total


def _mul(a: Symbol, b: Symbol) -> Symbol:
    if a.size == 0 or b.size == 0:
        return np.zeros(0, dtype=complex)
    return series_multiply(a, b)


def flag_symbols(flag: FlagOperator) -> Dict[Key, Symbol]:
    """Full symbols Phi_{jk} = phi_{jk} * prod_m phi_{m,m+1} of every strictly upper block"""
    spec = flag.spec
    symbols: Dict[Key, Symbol] = {}
    for j in range(flag.n):
        chain = np.ones(1, dtype=complex)
        for k in range(j + 1, flag.n):
            adjacent = np.asarray(spec.coupling(k - 1, k).coeffs, dtype=complex)
            if k == j + 1:
                symbols[(j, k)] = adjacent
                chain = adjacent
                continue
            chain = _mul(chain, adjacent)
            phi = spec.coupling(j, k)
            if phi is None or phi.is_zero:
                symbols[(j, k)] = np.zeros(0, dtype=complex)
            else:
                symbols[(j, k)] = _mul(np.asarray(phi.coeffs, dtype=complex), chain)
    return symbols


@dataclass(frozen=True, eq=False)
class CompactCorrection:
    """
    Correction K with its symbols

    Attributes:
        blocks: (j, k) -> K_{jk} (sparse), j < k, 0-based
        symbols: (j, k) -> power-series coefficients of C_{jk}
        dim_per_block: Block truncation
        n: Number of blocks
        residual: ||(I+K)T - T~(I+K)|| / ||T||
        tail_norm: Largest block mass outside the leading half window
    """

    blocks: Dict[Key, sparse.csr_matrix]
    symbols: Dict[Key, Symbol]
    dim_per_block: int
    n: int
    residual: float
    tail_norm: float

    @property
    def matrix(self) -> sparse.csr_matrix:
        N = self.dim_per_block
        rows = [
            [self.blocks.get((j, k), sparse.csr_matrix((N, N))) for k in range(self.n)]
            for j in range(self.n)
        ]
        return sparse.bmat(rows, format='csr')

    @property
    def is_zero(self) -> bool:
        return all(block.count_nonzero() == 0 for block in self.blocks.values())

    def to_dict(self) -> dict:
        return {
            'n': self.n,
            'dim_per_block': self.dim_per_block,
            'residual': self.residual,
            'tail_norm': self.tail_norm,
            'symbols': {
                f"C({j + 1},{k + 1})": {'re': coeffs.real.tolist(), 'im': coeffs.imag.tolist()}
                for (j, k), coeffs in self.symbols.items()
            },
            'block_norms': {
                f"K({j + 1},{k + 1})": float(spla.norm(block)) for (j, k), block in self.blocks.items()
            },
        }


def _check_preconditions(T: FlagOperator, T_tilde: FlagOperator) -> None:
    if not (T.is_model and T_tilde.is_model):
        raise StructuralError("Compact correction needs model flags", field='flag')
    if T.lambdas != T_tilde.lambdas:
        raise StructuralError("Diagonal blocks differ (T_jj != T~_jj)", field='lambda')
    if T.dim_per_block != T_tilde.dim_per_block:
        raise StructuralError("Flags have different truncations", field='truncation')
    for k in range(T.n - 1):
        if T.spec.coupling(k, k + 1) != T_tilde.spec.coupling(k, k + 1):
            raise StructuralError(
                f"First superdiagonal blocks ({k + 1},{k + 2}) differ", field='couplings'
            )


def _solve_symbols(
    phi: Dict[Key, Symbol],
    phi_tilde: Dict[Key, Symbol],
    n: int,
    boundary: str
) -> Dict[Key, Symbol]:
    C: Dict[Key, Symbol] = {}
    for m in range(1, n):
        top = n - 1 - m
        if boundary == 'unit' and m == 1:
            C[(top, top + 1)] = phi[(top, top + 1)].copy()
        else:
            C[(top, top + m)] = np.zeros(0, dtype=complex)

        for j in range(top - 1, -1, -1):
            k = j + m + 1
            rhs = _add(
                phi_tilde[(j, k)],
                -phi[(j, k)],
                _mul(phi_tilde[(j, j + 1)], C[(j + 1, k)]),
                *[_mul(phi_tilde[(j, l)], C[(l, k)]) for l in range(j + 2, k)],
                *[-_mul(C[(j, l)], phi[(l, k)]) for l in range(j + 1, j + m)]
            )
            divisor = phi[(j + m, k)]
            if divisor.size == 0 or divisor[0] == 0:
                raise NumericError(
                    f"Coupling ({j + m + 1},{k + 1}) vanishes at 0; distance {m} is not solvable",
                    index=m
                )
            C[(j, j + m)] = series_divide(rhs, divisor) if rhs.any() else np.zeros(0, dtype=complex)
    return C


def _tail_norm(block: sparse.csr_matrix) -> float:
    half = block.shape[0] // 2
    return float(spla.norm(block[half:, :])) if block.nnz else 0.0


def compact_correction(
    T: FlagOperator,
    T_tilde: FlagOperator,
    boundary: str = 'unit',
    tol: Optional[float] = None
) -> CompactCorrection:
    """
    Strictly block upper-triangular K with (I + K) T = T~ (I + K)

    Args:
        T: Model flag
        T_tilde: Model flag with the same diagonal and first superdiagonal data
        boundary: 'unit' seeds K_{n-1,n} = T_{n-1,n}; 'zero' seeds every free
            symbol with 0 (K = 0 when T = T~)
        tol: Residual tolerance relative to ||T||

    Returns:
        CompactCorrection

    Raises:
        StructuralError: If the flags do not share diagonal and superdiagonal data
        NumericError: If the residual at some block distance exceeds tol
    """
    if boundary not in BOUNDARY_CHOICES:
        raise ParameterError(f"Boundary must be one of {BOUNDARY_CHOICES}, got {boundary!r}", field='boundary')
    if tol is None:
        tol = get_tolerance(config, 'correction_residual')
    _check_preconditions(T, T_tilde)

    n, N = T.n, T.dim_per_block
    phi, phi_tilde = flag_symbols(T), flag_symbols(T_tilde)
    C = _solve_symbols(phi, phi_tilde, n, boundary)

    intertwiners = [
        sparse.diags(intertwiner_diagonal(T.lambdas[k], T.lambdas[k + 1], N), format='csr')
        for k in range(n - 1)
    ]
    blocks: Dict[Key, sparse.csr_matrix] = {}
    for (j, k), coeffs in C.items():
        if coeffs.size == 0 or not coeffs.any():
            continue
        chain = intertwiners[j]
        for l in range(j + 1, k):
            chain = chain @ intertwiners[l]
        blocks[(j, k)] = sparse.csr_matrix(evaluate_series(T.diag_blocks[j].to_sparse(), coeffs) @ chain)

    correction = CompactCorrection(
        blocks=blocks, symbols=C, dim_per_block=N, n=n, residual=0.0, tail_norm=0.0
    )
    X = sparse.identity(n * N, format='csr') + correction.matrix
    difference = X @ T.sparse_matrix - T_tilde.sparse_matrix @ X
    scale = float(spla.norm(T.sparse_matrix))

    for m in range(1, n):
        worst = max(
            float(spla.norm(difference[j * N:(j + 1) * N, (j + m) * N:(j + m + 1) * N]))
            for j in range(n - m)
        )
        if worst > tol * scale:
            raise NumericError(
                f"Correction residual {worst / scale:.3e} at block distance {m} exceeds {tol:.0e}",
                index=m
            )

    residual = float(spla.norm(difference)) / scale
    tail = max((_tail_norm(block) for block in blocks.values()), default=0.0)
    logger.info(
        f"Compact correction n={n} N={N} boundary={boundary}: "
        f"{len(blocks)} nonzero blocks, residual {residual:.2e}, tail {tail:.2e}"
    )
    return CompactCorrection(
        blocks=blocks, symbols=C, dim_per_block=N, n=n, residual=residual, tail_norm=tail
    )
