"""Tests for grid CSVs, JSON reports and manifests"""

import json
import os
import time

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from src import __version__
from src.analysis.comparator import ThetaField
from src.geometry.chern import chern_polynomial
from src.geometry.curvature import CurvatureField, closed_form_field
from src.utils.io import (
    emit_grid, emit_report, field_columns, file_digest, load_manifest, manifest_path, to_jsonable, write_manifest
)


def test_curvature_csv_round_trips_exactly(tmp_path, small_grid):
    field = closed_form_field(2.0, small_grid)
    path = emit_grid(field, str(tmp_path / 'k.csv'))
    frame = pd.read_csv(path)
    assert list(frame.columns) == ['re_w', 'im_w', 'k']
    assert np.array_equal(frame['k'].to_numpy(), field.values)
    assert np.array_equal(frame['re_w'].to_numpy(), small_grid.points.real)


def test_float_format_has_seventeen_digits(tmp_path, small_grid):
    path = emit_grid(closed_form_field(2.0, small_grid), str(tmp_path / 'k.csv'))
    with open(path, encoding='utf-8') as f:
        f.readline()
        first = f.readline().strip().split(',')
    assert first[0] == '0.0000000000000000e+00'
    assert first[2] == '-2.0000000000000000e+00'


def test_chern_columns_are_split(tmp_path, small_grid):
    chern = chern_polynomial([closed_form_field(1.0, small_grid), closed_form_field(2.0, small_grid)])
    frame = pd.read_csv(emit_grid(chern, str(tmp_path / 'c.csv')))
    assert list(frame.columns) == ['re_w', 'im_w', 're_c1', 'im_c1', 're_c2', 'im_c2']
    assert_allclose(frame['im_c1'], chern.coefficients[:, 1].imag)


def test_matrix_field_columns(small_grid):
    values = np.zeros((small_grid.size, 2, 2), dtype=complex)
    columns = field_columns(CurvatureField(grid=small_grid, values=values))
    assert list(columns) == ['k11', 'k12', 'k21', 'k22']


def test_theta_columns(small_grid):
    ratio = np.ones(small_grid.size)
    theta = ThetaField(grid=small_grid, levels=(0, 2), ratio_values=ratio)
    assert list(field_columns(theta)) == ['ratio']


def test_column_shape_checked(tmp_path, small_grid):
    with pytest.raises(ValueError):
        emit_grid(closed_form_field(2.0, small_grid), str(tmp_path / 'x.csv'), columns={'k': np.zeros(3)})


def test_report_serialization(tmp_path):
    report = {'z': 1 + 2j, 'a': np.float64(0.5), 'n': np.int64(3), 'flag': np.bool_(True),
              'missing': float('nan'), 'values': np.arange(3)}
    path = emit_report(report, str(tmp_path / 'nested' / 'r.json'))
    with open(path, encoding='utf-8') as f:
        text = f.read()
    assert text.index('"a"') < text.index('"z"')
    assert json.loads(text) == {
        'z': {'re': 1.0, 'im': 2.0}, 'a': 0.5, 'n': 3, 'flag': True, 'missing': None, 'values': [0, 1, 2]
    }
    assert [name for name in os.listdir(tmp_path / 'nested') if name.startswith('.tmp_')] == []


def test_jsonable_keys_become_strings():
    assert to_jsonable({1: (np.float32(1.5),)}) == {'1': [1.5]}


def test_manifest_records_run(tmp_path, small_grid):
    output = str(tmp_path / 'out.json')
    emit_report({'ok': True}, output)
    path = write_manifest(output, ['chern', '--out', output], ['ab' * 32], small_grid, {'compare': 1e-6}, time.time())

    assert path == manifest_path(output)
    manifest = load_manifest(path)
    assert manifest['argv'] == ['chern', '--out', output]
    assert manifest['spec_sha256'] == ['ab' * 32]
    assert manifest['grid']['points'] == small_grid.size
    assert manifest['version'] == __version__
    assert manifest['outputs'] == {'out.json': file_digest(output)}
    assert manifest['wall_clock_seconds'] >= 0


def test_manifest_without_grid(tmp_path):
    output = str(tmp_path / 'out.json')
    emit_report({}, output)
    manifest = load_manifest(write_manifest(output, [], [], None, {}, time.time()))
    assert manifest['grid'] is None
