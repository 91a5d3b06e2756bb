"""
Flag operators - Block upper-triangular NCFB_n operators over weighted Bergman shifts

Diagonal blocks are the lam_k-Bergman shifts S_k. The first superdiagonal is
T_{k,k+1} = phi_{k,k+1}(S_k) D_k with D_k the diagonal intertwiner
d_n = prod_{j<=n} w_j^(k+1) / w_j^(k), and higher blocks are
T_{k,j} = phi_{k,j}(S_k) T_{k,k+1} ... T_{j-1,j}.

Block indices are 0-based throughout the API. A FlagOperator may carry a
blockwise similarity Y, in which case it represents Y^{-1} A Y for the model
flag A and its sections are Y_j^{-1} t_j.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as spla
from scipy.stats import unitary_group

from src import config
from src.geometry.sections import Section, eigen_section
from src.operators.calculus import evaluate_series
from src.operators.shift import (
    OperatorMatrix, WeightedShift, build_bergman_shift, commutator_diagonal,
    edge_index, fit_decay_exponent
)
from src.utils.config_loader import get_solver_setting, get_tolerance
from src.utils.errors import NumericError, ParameterError, SpecError

logger = logging.getLogger(__name__)

GAP_CITATION = "If λ₂−λ₁<2, then"


@dataclass(frozen=True)
class CouplingSeries:
    """Power-series coefficients of a bounded holomorphic coupling phi"""

    coeffs: Tuple[complex, ...] = (1.0,)

    def __post_init__(self):
        coeffs = tuple(complex(c) if np.iscomplexobj(c) else float(c) for c in self.coeffs)
        if not coeffs:
            coeffs = (0.0,)
        if not all(np.isfinite(c) for c in coeffs):
            raise SpecError("Coupling coefficients must be finite", field='couplings')
        if len(coeffs) > int(get_solver_setting(config, 'series_max_terms')):
            raise SpecError(f"Coupling series longer than the term cap ({len(coeffs)})", field='couplings')
        object.__setattr__(self, 'coeffs', coeffs)

    def __call__(self, w):
        return np.polynomial.polynomial.polyval(w, np.asarray(self.coeffs))

    @property
    def is_zero(self) -> bool:
        return all(c == 0 for c in self.coeffs)


@dataclass(frozen=True)
class FlagSpec:
    """
    Parameters of an NCFB_n flag

    Attributes:
        lambdas: Strictly increasing Bergman parameters with gaps in (0, 2)
        couplings: (k, j) -> CouplingSeries for k < j (0-based); adjacent
            pairs default to [1], missing higher pairs are zero
        dim_per_block: Truncation N of every block
    """

    lambdas: Tuple[float, ...]
    couplings: Dict[Tuple[int, int], CouplingSeries] = field(default_factory=dict)
    dim_per_block: int = 512

    def __post_init__(self):
        lambdas = tuple(float(v) for v in self.lambdas)
        if not lambdas:
            raise SpecError("A flag needs at least one block", field='n')
        if lambdas[0] <= 0:
            raise SpecError(f"Bergman parameters must be positive, got {lambdas[0]}", field='lambda')
        for k in range(len(lambdas) - 1):
            gap = lambdas[k + 1] - lambdas[k]
            if not 0 < gap < 2:
                raise SpecError(
                    f"Gap lambda[{k + 1}] - lambda[{k}] = {gap:g} outside (0, 2)",
                    field='lambda',
                    citation=GAP_CITATION
                )
        if int(self.dim_per_block) != self.dim_per_block or self.dim_per_block < 2:
            raise SpecError(f"Truncation must be an integer >= 2, got {self.dim_per_block}", field='truncation')

        couplings = {}
        for (k, j), series in self.couplings.items():
            if not 0 <= k < j < len(lambdas):
                raise SpecError(f"Coupling ({k}, {j}) outside the flag", field='couplings')
            if not isinstance(series, CouplingSeries):
                series = CouplingSeries(tuple(series))
            couplings[(int(k), int(j))] = series
        for k in range(len(lambdas) - 1):
            couplings.setdefault((k, k + 1), CouplingSeries((1.0,)))

        object.__setattr__(self, 'lambdas', lambdas)
        object.__setattr__(self, 'couplings', dict(sorted(couplings.items())))
        object.__setattr__(self, 'dim_per_block', int(self.dim_per_block))

    @property
    def n(self) -> int:
        return len(self.lambdas)

    def coupling(self, k: int, j: int) -> Optional[CouplingSeries]:
        return self.couplings.get((k, j))


def intertwiner_diagonal(lam_k: float, lam_next: float, dim: int) -> np.ndarray:
    """
    Diagonal d_0..d_{N-1} of the intertwiner between the lam_k and lam_next shifts

    d_n = prod_{j=1..n} sqrt(j/(j+lam_next-1)) / sqrt(j/(j+lam_k-1)), so that
    S_k D = D S_{k+1}.
    """
    ratios = build_bergman_shift(lam_next, dim).weights / build_bergman_shift(lam_k, dim).weights
    return np.concatenate([[1.0], np.cumprod(ratios)])


@dataclass(frozen=True, eq=False)
class FlagOperator:
    """
    Truncated NCFB_n flag operator

    model_blocks holds the strictly upper blocks of the model flag A;
    similarity / similarity_inv (one N x N matrix per block) make the object
    represent Y^{-1} A Y.
    """

    spec: FlagSpec
    diag_blocks: Tuple[WeightedShift, ...]
    model_blocks: Dict[Tuple[int, int], sparse.csr_matrix]
    similarity: Optional[Tuple[np.ndarray, ...]] = None
    similarity_inv: Optional[Tuple[np.ndarray, ...]] = None

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def dim_per_block(self) -> int:
        return self.spec.dim_per_block

    @property
    def dim(self) -> int:
        return self.n * self.dim_per_block

    @property
    def lambdas(self) -> Tuple[float, ...]:
        return self.spec.lambdas

    @property
    def is_model(self) -> bool:
        return self.similarity is None

    def model_block(self, k: int, j: int) -> sparse.csr_matrix:
        """Block (k, j) of the model flag A (sparse)"""
        N = self.dim_per_block
        if k == j:
            return self.diag_blocks[k].to_sparse()
        if (k, j) in self.model_blocks:
            return self.model_blocks[(k, j)]
        return sparse.csr_matrix((N, N))

    def block(self, k: int, j: int):
        """Block (k, j) of the represented operator; sparse for model flags"""
        if self.is_model:
            return self.model_block(k, j)
        if k > j or (k != j and (k, j) not in self.model_blocks):
            return np.zeros((self.dim_per_block, self.dim_per_block))
        return self.similarity_inv[k] @ (self.model_block(k, j) @ self.similarity[j])

    @property
    def off_blocks(self) -> Dict[Tuple[int, int], object]:
        return {key: self.block(*key) for key in self.model_blocks}

    @cached_property
    def sparse_matrix(self) -> sparse.csr_matrix:
        """Whole operator as a sparse matrix (dense-backed when conjugated)"""
        rows = [[self.block(k, j) if k <= j else None for j in range(self.n)] for k in range(self.n)]
        return sparse.bmat(rows, format='csr')

    @cached_property
    def matrix(self) -> OperatorMatrix:
        """Whole operator as a dense OperatorMatrix with block structure [N]*n"""
        return OperatorMatrix(self.sparse_matrix.toarray(), (self.dim_per_block,) * self.n)

    def section(self, j: int, r_max: Optional[float] = None) -> Section:
        """Eigen-section t_j of diagonal block j"""
        base = eigen_section(self.diag_blocks[j], r_max=r_max)
        if self.is_model:
            return base
        return base.transformed(self.similarity_inv[j])

    def resized(self, dim: int) -> 'FlagOperator':
        """
        Rebuild at another truncation

        Similarities are extended by the identity, Y -> Y + I on the new
        coordinates, so only growing is allowed for conjugated flags.
        """
        rebuilt = build_ncfb(replace(self.spec, dim_per_block=dim))
        if self.is_model:
            return rebuilt
        if dim < self.dim_per_block:
            raise ParameterError(
                f"Cannot shrink a conjugated flag ({self.dim_per_block} -> {dim})", field='truncation'
            )
        extra = np.eye(dim - self.dim_per_block)
        return replace(
            rebuilt,
            similarity=tuple(linalg.block_diag(Y, extra) for Y in self.similarity),
            similarity_inv=tuple(linalg.block_diag(Y, extra) for Y in self.similarity_inv)
        )

    def conjugate_blockwise(
        self,
        blocks: Sequence[Optional[np.ndarray]],
        inverses: Optional[Sequence[Optional[np.ndarray]]] = None,
        condition_bound: Optional[float] = None
    ) -> 'FlagOperator':
        """
        Return Y^{-1} T Y for a block-diagonal Y

        Args:
            blocks: One N x N matrix per block (None for the identity)
            inverses: Optional precomputed inverses
            condition_bound: Largest admissible condition number

        Raises:
            NumericError: If a block is ill-conditioned
        """
        if len(blocks) != self.n:
            raise ParameterError(f"Expected {self.n} similarity blocks, got {len(blocks)}", field='similarity')
        if condition_bound is None:
            condition_bound = float(get_solver_setting(config, 'condition_bound'))

        N = self.dim_per_block
        current = self.similarity or tuple(np.eye(N) for _ in range(self.n))
        current_inv = self.similarity_inv or tuple(np.eye(N) for _ in range(self.n))

        new, new_inv = [], []
        for j, Y in enumerate(blocks):
            if Y is None:
                new.append(current[j])
                new_inv.append(current_inv[j])
                continue
            Y = np.asarray(Y)
            if Y.shape != (N, N):
                raise ParameterError(f"Similarity block {j} has shape {Y.shape}", field='similarity')
            condition = float(np.linalg.cond(Y))
            if not np.isfinite(condition) or condition > condition_bound:
                raise NumericError(f"Similarity block {j} is ill-conditioned (cond {condition:.3e})", condition=condition)
            Y_inv = np.asarray(inverses[j]) if inverses is not None and inverses[j] is not None else linalg.inv(Y)
            new.append(current[j] @ Y)
            new_inv.append(Y_inv @ current_inv[j])

        logger.debug(f"Conjugated flag n={self.n} blockwise")
        return replace(self, similarity=tuple(new), similarity_inv=tuple(new_inv))


def build_ncfb(spec: FlagSpec) -> FlagOperator:
    """
    Build the NCFB_n example flag

    Args:
        spec: Flag parameters

    Returns:
        FlagOperator with Bergman diagonal blocks, diagonal intertwiners on
        the first superdiagonal and coupled higher blocks

    Raises:
        NumericError: If a coupling series does not converge on the truncation
    """
    N = spec.dim_per_block
    shifts = tuple(build_bergman_shift(lam, N) for lam in spec.lambdas)
    shift_matrices = [s.to_sparse() for s in shifts]

    blocks: Dict[Tuple[int, int], sparse.csr_matrix] = {}
    for k in range(spec.n - 1):
        D = sparse.diags(intertwiner_diagonal(spec.lambdas[k], spec.lambdas[k + 1], N), format='csr')
        phi = spec.coupling(k, k + 1)
        blocks[(k, k + 1)] = sparse.csr_matrix(evaluate_series(shift_matrices[k], phi.coeffs) @ D)

    for distance in range(2, spec.n):
        for k in range(spec.n - distance):
            j = k + distance
            phi = spec.coupling(k, j)
            if phi is None or phi.is_zero:
                continue
            chain = blocks[(k, k + 1)]
            for m in range(k + 1, j):
                chain = chain @ blocks[(m, m + 1)]
            blocks[(k, j)] = sparse.csr_matrix(evaluate_series(shift_matrices[k], phi.coeffs) @ chain)

    logger.info(
        f"Built NCFB flag n={spec.n} lambdas={list(spec.lambdas)} dim_per_block={N} "
        f"couplings={[(k + 1, j + 1) for (k, j) in blocks]}"
    )
    return FlagOperator(spec=spec, diag_blocks=shifts, model_blocks=blocks)


def build_bergman_flag(lam: float, dim: int) -> FlagOperator:
    """A single Bergman shift viewed as a 1-block flag"""
    return build_ncfb(FlagSpec(lambdas=(lam,), dim_per_block=dim))


def _norm(matrix) -> float:
    if sparse.issparse(matrix):
        return float(spla.norm(matrix))
    return float(np.linalg.norm(matrix))


def strongly_irreducible(flag: FlagOperator) -> bool:
    """All first-superdiagonal blocks are nonzero"""
    return all(_norm(flag.block(k, k + 1)) > 0 for k in range(flag.n - 1))


@dataclass
class StructureReport:
    """Outcome of verify_flag_structure"""

    intertwining_residuals: List[float]
    decay_exponents: List[Optional[float]]
    expected_exponents: List[float]
    commutator_tail_sup: float
    commutator_exponents: List[Optional[float]]
    strongly_irreducible: bool
    cutoff: int

    @property
    def intertwining_ok(self) -> bool:
        tol = get_tolerance(config, 'intertwining')
        return all(r <= tol for r in self.intertwining_residuals)

    @property
    def decay_ok(self) -> bool:
        return all(
            fitted is not None and abs(fitted - expected) <= 0.05
            for fitted, expected in zip(self.decay_exponents, self.expected_exponents)
        )

    @property
    def essentially_normal(self) -> bool:
        return all(e is None or e < 0 for e in self.commutator_exponents)

    @property
    def passed(self) -> bool:
        return self.intertwining_ok and self.decay_ok and self.essentially_normal and self.strongly_irreducible

    def to_dict(self) -> dict:
        return {
            'intertwining_residuals': self.intertwining_residuals,
            'decay_exponents': self.decay_exponents,
            'expected_exponents': self.expected_exponents,
            'commutator_tail_sup': self.commutator_tail_sup,
            'commutator_exponents': self.commutator_exponents,
            'strongly_irreducible': self.strongly_irreducible,
            'cutoff': self.cutoff,
            'passed': self.passed,
        }


def verify_flag_structure(flag: FlagOperator, cutoff: Optional[int] = None) -> StructureReport:
    """
    Check the defining structure of a flag

    Reports (a) relative intertwining residuals of adjacent pairs, (b) fitted
    decay exponents of the superdiagonal intertwiners against -(gap)/2,
    (c) the self-commutator tail of the whole flag per block segment and
    (d) strong irreducibility. Never raises for a well-formed flag.
    """
    N = flag.dim_per_block
    if cutoff is None:
        cutoff = max(1, N // 40)
    cutoff = min(cutoff, max(1, N - 9))
    stop = edge_index(N)

    residuals, exponents, expected = [], [], []
    for k in range(flag.n - 1):
        T_kk, T_kj, T_jj = flag.block(k, k), flag.block(k, k + 1), flag.block(k + 1, k + 1)
        scale = _norm(T_kk) * _norm(T_kj)
        residual = _norm(T_kk @ T_kj - T_kj @ T_jj)
        residuals.append(residual / scale if scale > 0 else 0.0)

        diagonal = np.abs(flag.model_block(k, k + 1).diagonal())
        exponents.append(fit_decay_exponent(diagonal, cutoff, stop))
        expected.append(-(flag.lambdas[k + 1] - flag.lambdas[k]) / 2)

    entries = commutator_diagonal(flag.sparse_matrix)
    tail_sup = 0.0
    commutator_exponents = []
    for k in range(flag.n):
        segment = entries[k * N:(k + 1) * N]
        tail = segment[cutoff:stop]
        tail_sup = max(tail_sup, float(np.max(np.abs(tail))) if tail.size else 0.0)
        commutator_exponents.append(fit_decay_exponent(segment, cutoff, stop))

    report = StructureReport(
        intertwining_residuals=residuals,
        decay_exponents=exponents,
        expected_exponents=expected,
        commutator_tail_sup=tail_sup,
        commutator_exponents=commutator_exponents,
        strongly_irreducible=strongly_irreducible(flag),
        cutoff=cutoff
    )
    logger.info(
        f"Structure of n={flag.n} flag: intertwining_ok={report.intertwining_ok} "
        f"decay_ok={report.decay_ok} strongly_irreducible={report.strongly_irreducible}"
    )
    return report


def random_block_unitary(n: int, dim: int, seed: int) -> List[np.ndarray]:
    """Seeded Haar-random unitary per block"""
    rng = np.random.default_rng(seed)
    return [unitary_group.rvs(dim, random_state=rng) for _ in range(n)]


def random_rank_one_perturbation(n: int, dim: int, seed: int, size: float = 0.2) -> List[np.ndarray]:
    """
    Seeded Y_j = I + size * u v^H with unit vectors u, v

    |v^H u| <= 1 keeps every Y_j invertible for size < 1.
    """
    if not 0 < size < 1:
        raise ParameterError(f"Perturbation size must lie in (0, 1), got {size}", field='size')
    rng = np.random.default_rng(seed)
    blocks = []
    for _ in range(n):
        u = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        u /= np.linalg.norm(u)
        v /= np.linalg.norm(v)
        blocks.append(np.eye(dim) + size * np.outer(u, v.conj()))
    return blocks
