"""Tests for the compact correction between flags"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.sparse import linalg as spla

from src.analysis.correction import compact_correction
from src.operators.flag import CouplingSeries, FlagSpec, build_ncfb, random_block_unitary
from src.utils.errors import ParameterError, StructuralError


def flag_with_far_coupling(coeffs, dim=128):
    spec = FlagSpec(
        lambdas=(2.0, 2.9, 3.7),
        couplings={(0, 2): CouplingSeries(tuple(coeffs))},
        dim_per_block=dim
    )
    return build_ncfb(spec)


def dense_residual(correction, T, T_tilde):
    X = np.eye(T.dim) + correction.matrix.toarray()
    a, b = T.matrix.entries, T_tilde.matrix.entries
    return np.linalg.norm(X @ a - b @ X) / np.linalg.norm(a)


def test_identical_flags_zero_boundary(flag_3):
    correction = compact_correction(flag_3, flag_3, boundary='zero')
    assert correction.is_zero
    assert correction.residual == 0.0


def test_identical_flags_unit_boundary(flag_23):
    correction = compact_correction(flag_23, flag_23)
    assert not correction.is_zero
    assert_allclose(correction.blocks[(0, 1)].toarray(), flag_23.block(0, 1).toarray(), atol=1e-15)
    assert correction.residual <= 1e-12


@pytest.mark.parametrize('boundary', ['unit', 'zero'])
def test_far_coupling_change(boundary):
    T = flag_with_far_coupling((0.0, 1.0))
    T_tilde = flag_with_far_coupling((0.0, 2.0))
    correction = compact_correction(T, T_tilde, boundary=boundary)

    assert correction.residual <= 1e-8
    assert dense_residual(correction, T, T_tilde) <= 1e-8
    assert set(correction.blocks) <= {(0, 1), (0, 2), (1, 2)}

    K = correction.matrix.toarray()
    N = T.dim_per_block
    for j in range(3):
        assert not K[j * N:, j * N:(j + 1) * N].any()


def test_far_coupling_symbols():
    T = flag_with_far_coupling((0.0, 1.0))
    T_tilde = flag_with_far_coupling((0.0, 2.0))
    correction = compact_correction(T, T_tilde, boundary='unit')

    first = correction.symbols[(0, 1)]
    assert_allclose(first[:2], [1.0, 1.0])
    assert not first[2:].any()
    assert_allclose(correction.symbols[(1, 2)], [1.0])
    assert correction.symbols[(0, 2)].size == 0

    payload = correction.to_dict()
    assert payload['symbols']['C(1,2)']['re'][:2] == [1.0, 1.0]
    assert payload['block_norms']['K(1,2)'] == pytest.approx(spla.norm(correction.blocks[(0, 1)]))


def test_diagonal_blocks_must_agree():
    T = build_ncfb(FlagSpec(lambdas=(2.0, 3.0), dim_per_block=32))
    other = build_ncfb(FlagSpec(lambdas=(2.0, 3.5), dim_per_block=32))
    with pytest.raises(StructuralError) as exc:
        compact_correction(T, other)
    assert exc.value.field == 'lambda'


def test_superdiagonal_blocks_must_agree():
    T = build_ncfb(FlagSpec(lambdas=(2.0, 3.0), dim_per_block=32))
    other = build_ncfb(FlagSpec(lambdas=(2.0, 3.0), couplings={(0, 1): CouplingSeries((2.0,))}, dim_per_block=32))
    with pytest.raises(StructuralError):
        compact_correction(T, other)


def test_conjugated_flag_rejected(flag_23):
    conjugated = flag_23.conjugate_blockwise(random_block_unitary(2, 128, seed=0))
    with pytest.raises(StructuralError):
        compact_correction(flag_23, conjugated)


def test_unknown_boundary(flag_23):
    with pytest.raises(ParameterError):
        compact_correction(flag_23, flag_23, boundary='free')
