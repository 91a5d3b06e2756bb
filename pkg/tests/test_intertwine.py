"""Tests for Sylvester maps, filtered kernels and intertwiners"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.analysis.intertwine import (
    SylvesterMap, diagonal_reduction, intertwiner_triangularity, kernel_basis, precedes, sylvester_solve
)
from src.operators.flag import (
    CouplingSeries, FlagSpec, build_ncfb, intertwiner_diagonal, random_block_unitary, random_rank_one_perturbation
)
from src.operators.shift import build_bergman_shift
from src.utils.errors import NumericError, ParameterError, SolvabilityError


def span_residual(target, elements):
    """Relative least-squares distance of target from the span of elements"""
    basis = np.stack([X.ravel() for X in elements], axis=1)
    coeffs = np.linalg.lstsq(basis, target.ravel(), rcond=None)[0]
    return np.linalg.norm(basis @ coeffs - target.ravel()) / np.linalg.norm(target)


class TestSylvesterSolve:
    def test_scalar_equation(self):
        X = sylvester_solve(SylvesterMap(np.array([[2.0]]), np.array([[1.0]])), np.array([[3.0]]))
        assert_allclose(X, [[3.0]])

    def test_singular_scalar_equation(self):
        zero = np.zeros((1, 1))
        with pytest.raises(SolvabilityError) as exc:
            sylvester_solve(SylvesterMap(zero, zero), np.array([[1.0]]))
        assert exc.value.residual == pytest.approx(1.0)

    def test_jordan_block_least_squares(self):
        J = np.array([[0.0, 1.0], [0.0, 0.0]])
        rhs = np.array([[1.0, 2.0], [0.5, -1.0]])
        X = sylvester_solve(SylvesterMap(J, J), rhs, least_squares=True)

        M = np.kron(np.eye(2), J) - np.kron(J.T, np.eye(2))
        expected = np.linalg.lstsq(M, rhs.reshape(-1, order='F'), rcond=None)[0].reshape((2, 2), order='F')
        assert_allclose(X, expected, atol=1e-12)

    def test_dense_solve_for_separated_spectra(self, rng):
        T1 = rng.standard_normal((5, 5))
        T2 = rng.standard_normal((4, 4)) + 20 * np.eye(4)
        rhs = rng.standard_normal((5, 4))
        sylvester = SylvesterMap(T1, T2)
        X = sylvester_solve(sylvester, rhs)
        assert sylvester.residual(X, rhs) <= 1e-10 * np.linalg.norm(rhs)

    def test_upper_triangular_sweep(self):
        sylvester = SylvesterMap.from_shifts(build_bergman_shift(2.0, 16), build_bergman_shift(3.0, 16))
        shifted = SylvesterMap(sylvester.left.entries + np.eye(16), sylvester.right.entries)
        rhs = np.triu(np.ones((16, 16)))
        X = sylvester_solve(shifted, rhs)
        assert shifted.residual(X, rhs) <= 1e-10 * np.linalg.norm(rhs)

    def test_rhs_shape_checked(self):
        with pytest.raises(ParameterError):
            sylvester_solve(SylvesterMap(np.eye(2), np.eye(3)), np.zeros((3, 2)))


class TestKernelBasis:
    def test_forward_kernel_contains_diagonal_intertwiner(self):
        S2, S3 = build_bergman_shift(2.0, 32), build_bergman_shift(3.0, 32)
        basis = kernel_basis(SylvesterMap.from_shifts(S2, S3), base_dim=32)
        assert basis.filtered_count > 0
        D = np.diag(intertwiner_diagonal(2.0, 3.0, 32))
        assert span_residual(D, basis.elements) <= 1e-8

    def test_reverse_kernel_is_only_artifacts(self):
        S2, S3 = build_bergman_shift(2.0, 32), build_bergman_shift(3.0, 32)
        basis = kernel_basis(SylvesterMap.from_shifts(S3, S2), base_dim=32)
        assert basis.raw_count > 0
        assert basis.filtered_count == 0
        assert basis.to_dict()['filtered_count'] == 0

    def test_self_map_contains_identity(self):
        S = build_bergman_shift(2.5, 24)
        basis = kernel_basis(SylvesterMap.from_shifts(S, S), base_dim=24)
        assert span_residual(np.eye(24), basis.elements) <= 1e-8
        assert all(s < 1e-3 for s in basis.stability)

    def test_base_dim_limit(self):
        S = build_bergman_shift(2.0, 128)
        with pytest.raises(ParameterError):
            kernel_basis(SylvesterMap.from_shifts(S, S), base_dim=96)

    def test_order_on_small_truncation(self):
        S2, S3 = build_bergman_shift(2.0, 24), build_bergman_shift(3.0, 24)
        assert precedes(S2, S3, base_dim=24)
        assert not precedes(S3, S2, base_dim=24)
        assert not precedes(S2, S2, base_dim=24)

    @pytest.mark.slow
    @pytest.mark.parametrize('lam1, lam2', [(2.0, 3.0), (1.0, 2.5), (2.0, 2.2), (2.0, 2.5)])
    def test_order_at_base_dim_48(self, lam1, lam2):
        S1, S2 = build_bergman_shift(lam1, 48), build_bergman_shift(lam2, 48)
        assert precedes(S1, S2, base_dim=48)
        assert not precedes(S2, S1, base_dim=48)

        basis = kernel_basis(SylvesterMap.from_shifts(S1, S2), base_dim=48)
        D = np.diag(intertwiner_diagonal(lam1, lam2, 48))
        assert span_residual(D, basis.elements) <= 1e-8

    def test_unfilterable_pair_raises(self):
        lower_jordan = np.diag(np.ones(3), -1)
        with pytest.raises(NumericError):
            kernel_basis(SylvesterMap(lower_jordan, lower_jordan), base_dim=4)


def lower_blocks_norm(X, n, N):
    return np.sqrt(sum(np.linalg.norm(X[j * N:(j + 1) * N, l * N:(l + 1) * N]) ** 2
                       for j in range(n) for l in range(j)))


class TestIntertwiner:
    def test_conjugate_intertwiner_is_upper_triangular(self):
        A = build_ncfb(FlagSpec(lambdas=(2.0, 3.0), dim_per_block=16))
        B = A.conjugate_blockwise(random_rank_one_perturbation(2, 16, seed=4))
        report = intertwiner_triangularity(A, B)

        assert report.lower_mass <= 1e-6
        assert report.inverse_lower_mass <= 1e-6
        assert report.lower_mass_raw >= report.lower_mass
        assert report.residual <= 1e-8
        raw, kept = report.kernel_counts['(2,1)']
        assert raw > 0 and kept == 0
        assert report.to_dict()['kernel_counts']['(2,1)'] == {'raw': raw, 'filtered': 0}

    def test_intertwiner_solves_the_equation(self):
        A = build_ncfb(FlagSpec(lambdas=(2.0, 3.0), dim_per_block=16))
        B = A.conjugate_blockwise(random_rank_one_perturbation(2, 16, seed=11))
        X = intertwiner_triangularity(A, B).intertwiner
        a, b = A.matrix.entries, B.matrix.entries

        assert np.linalg.norm(X @ a - b @ X) <= 1e-8 * np.linalg.norm(a)
        assert lower_blocks_norm(X, 2, 16) <= 1e-12
        for k in range(2):
            assert np.linalg.cond(X[k * 16:(k + 1) * 16, k * 16:(k + 1) * 16]) < 1e8

    def test_self_intertwiner_is_scalar(self):
        A = build_ncfb(FlagSpec(lambdas=(2.0, 3.0), dim_per_block=16))
        X = intertwiner_triangularity(A, A).intertwiner
        assert_allclose(X / X[0, 0], np.eye(32), atol=1e-8)

    def test_shape_mismatch(self):
        A = build_ncfb(FlagSpec(lambdas=(2.0, 3.0), dim_per_block=16))
        other = build_ncfb(FlagSpec(lambdas=(2.0, 3.0), dim_per_block=12))
        with pytest.raises(ParameterError):
            intertwiner_triangularity(A, other)

    def test_dense_limit(self):
        A = build_ncfb(FlagSpec(lambdas=(2.0, 3.0), dim_per_block=40))
        with pytest.raises(ParameterError) as exc:
            intertwiner_triangularity(A, A)
        assert exc.value.field == 'truncation'

    @pytest.mark.slow
    @pytest.mark.parametrize('family', ['unitary', 'rank_one'])
    def test_conjugate_intertwiner_at_truncation_32(self, family):
        A = build_ncfb(FlagSpec(lambdas=(2.0, 3.0), dim_per_block=32))
        if family == 'unitary':
            unitaries = random_block_unitary(2, 32, seed=7)
            B = A.conjugate_blockwise(unitaries, inverses=[V.conj().T for V in unitaries])
        else:
            B = A.conjugate_blockwise(random_rank_one_perturbation(2, 32, seed=4))
        report = intertwiner_triangularity(A, B)

        assert report.lower_mass <= 1e-6
        assert report.inverse_lower_mass <= 1e-6
        assert report.residual <= 1e-8
        assert report.kernel_counts['(2,1)'][1] == 0

    def test_diagonal_reduction(self):
        base = FlagSpec(lambdas=(2.0, 3.0), dim_per_block=16)
        doubled = FlagSpec(lambdas=(2.0, 3.0), couplings={(0, 1): CouplingSeries((2.0,))}, dim_per_block=16)
        same = diagonal_reduction(build_ncfb(base), build_ncfb(base))
        assert same['diagonals_equal'] and same['superdiagonals_equal']

        different = diagonal_reduction(build_ncfb(base), build_ncfb(doubled))
        assert different['diagonals_equal']
        assert not different['superdiagonals_equal']
        assert different['superdiagonal_differences'][0] > 0
