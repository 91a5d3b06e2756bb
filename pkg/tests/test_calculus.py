"""Tests for the holomorphic functional calculus"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.geometry.curvature import closed_form_curvature, curvature_scalar
from src.geometry.grid import grid_from_spec
from src.geometry.sections import bergman_section, eigen_coefficients, mobius_section
from src.operators.calculus import (
    apply_power_series, evaluate_series, mobius_transform, series_divide, series_multiply
)
from src.operators.flag import FlagSpec, build_ncfb
from src.operators.shift import OperatorMatrix, build_bergman_shift
from src.utils.errors import NumericError, ParameterError


class TestMobius:
    def test_zero_parameter_is_identity(self):
        op = OperatorMatrix(build_bergman_shift(2.0, 8).to_dense())
        assert mobius_transform(op, 0.0) is op

    def test_zero_operator(self):
        result = mobius_transform(OperatorMatrix(np.zeros((5, 5))), 0.3)
        assert_allclose(result.entries, -0.3 * np.eye(5), atol=1e-15)

    @pytest.mark.parametrize('alpha', [1.0, 1.2j, -1.0])
    def test_rejects_boundary_parameters(self, alpha):
        with pytest.raises(ParameterError):
            mobius_transform(OperatorMatrix(np.zeros((3, 3))), alpha)

    def test_eigenvectors_map_through_the_disk_automorphism(self):
        shift = build_bergman_shift(2.0, 128)
        alpha, z = 0.4, 0.3
        result = mobius_transform(shift.matrix, alpha)
        t = eigen_coefficients(shift, np.array([z]))[0]
        u = (z - alpha) / (1 - alpha * z)
        assert np.linalg.norm(result.entries @ t - u * t) <= 1e-10 * np.linalg.norm(t)

    def test_curvature_pullback_for_homogeneous_shift(self):
        # Bergman shifts are Mobius-homogeneous, so the curvature is unchanged
        grid = grid_from_spec('r=0:0.4:0.2,theta=0:360:90')
        section = mobius_section(bergman_section(2.0, 512, r_max=0.75), 0.4)
        field = curvature_scalar(section, grid)
        assert_allclose(field.values, closed_form_curvature(2.0, grid.points), rtol=1e-4)


class TestPowerSeries:
    def test_identity_series(self, flag_23):
        op = flag_23.resized(16).matrix
        assert_allclose(apply_power_series(op, [0, 1]).entries, op.entries)

    def test_constant_series(self, flag_23):
        op = flag_23.resized(16).matrix
        assert_allclose(apply_power_series(op, [2.5]).entries, 2.5 * np.eye(op.dim))

    def test_square_corner_is_derivative_times_coupling(self):
        flag = build_ncfb(FlagSpec(lambdas=(2.0, 3.0), dim_per_block=16))
        op = flag.matrix
        squared = apply_power_series(op, [0, 0, 1])
        T11, T12, T22 = (op.block(0, 0), op.block(0, 1), op.block(1, 1))
        corner = squared.block(0, 1)
        assert_allclose(corner, T11 @ T12 + T12 @ T22, atol=1e-14)
        assert_allclose(corner, 2 * T11 @ T12, atol=1e-12)
        assert squared.block_structure == (16, 16)

    def test_nilpotent_series_stops_early(self):
        shift = build_bergman_shift(2.0, 4).to_dense()
        result = evaluate_series(shift, np.ones(64))
        expected = sum(np.linalg.matrix_power(shift, m) for m in range(4))
        assert_allclose(result, expected, atol=1e-14)

    def test_unconverged_cut_series(self):
        with pytest.raises(NumericError):
            evaluate_series(2.0 * np.eye(3), np.ones(64))

    def test_sparse_input_stays_sparse(self):
        shift = build_bergman_shift(2.0, 32).to_sparse()
        result = evaluate_series(shift, [1.0, 0.5])
        assert hasattr(result, 'toarray')
        assert_allclose(result.toarray(), np.eye(32) + 0.5 * shift.toarray())


class TestSeriesArithmetic:
    def test_multiply(self):
        assert_allclose(series_multiply([1, 1], [1, -1]), [1, 0, -1])

    def test_divide_exact_polynomial(self):
        assert_allclose(series_divide([1, 0, -1], [1, -1]), [1, 1], atol=1e-15)

    def test_divide_by_symbol_vanishing_at_zero(self):
        with pytest.raises(NumericError):
            series_divide([1, 2], [0, 1])

    def test_divide_unconverged_quotient(self):
        with pytest.raises(NumericError):
            series_divide([1], [1, -1])
