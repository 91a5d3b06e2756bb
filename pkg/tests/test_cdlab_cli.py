"""Tests for the cdlab command line"""

import json
import os

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from src.cli.cdlab import EXIT_ERROR, EXIT_NOT_EQUIVALENT, EXIT_OK, EXIT_UNDECIDED, main, replay
from src.geometry.curvature import closed_form_curvature
from src.geometry.grid import grid_from_spec
from src.operators.flag import GAP_CITATION

SMALL_GRID = 'r=0:0.6:0.2,theta=0:360:90'

FLAG_23 = {'type': 'ncfb', 'lambda': [2.0, 3.0], 'truncation': 128}


def read_json(path):
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def stderr_error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


class TestBuild:
    def test_build_report_and_manifest(self, tmp_path, spec_file):
        spec = spec_file('flag', {'type': 'ncfb', 'lambda': [2.0, 2.9, 3.7], 'truncation': 64,
                                  'couplings': [{'from': 1, 'to': 3, 'series': [0, 1]}]})
        out = str(tmp_path / 'build.json')
        assert main(['build', '--spec', spec, '--out', out]) == EXIT_OK

        report = read_json(out)
        assert report['n'] == 3
        assert report['lambdas'] == [2.0, 2.9, 3.7]
        assert report['conjugated'] is False
        assert len(report['matrix_sha256']) == 64

        manifest = read_json(out + '.manifest.json')
        assert manifest['spec_sha256'] == [report['spec_sha256']]
        assert manifest['grid'] is None
        assert manifest['argv'][0] == 'build'

    def test_replay_is_bit_identical(self, tmp_path, spec_file):
        spec = spec_file('bergman', {'type': 'bergman', 'lambda': 2.0, 'truncation': 128})
        out = str(tmp_path / 'k.csv')
        assert main(['curvature', '--spec', spec, '--grid', SMALL_GRID, '--out', out]) == EXIT_OK
        result = replay(out + '.manifest.json')
        assert result['status'] == EXIT_OK
        assert result['identical']


class TestGridCommands:
    def test_curvature_matches_closed_form(self, tmp_path, spec_file):
        spec = spec_file('bergman', {'type': 'bergman', 'lambda': 2.0, 'truncation': 128})
        out = str(tmp_path / 'k.csv')
        assert main(['curvature', '--spec', spec, '--grid', SMALL_GRID, '--out', out]) == EXIT_OK

        frame = pd.read_csv(out)
        w = frame['re_w'].to_numpy() + 1j * frame['im_w'].to_numpy()
        assert_allclose(frame['k'], closed_form_curvature(2.0, w), rtol=1e-5)
        assert read_json(out + '.manifest.json')['grid']['points'] == grid_from_spec(SMALL_GRID).size

    def test_closed_form_method(self, tmp_path, spec_file):
        spec = spec_file('flag', FLAG_23)
        out = str(tmp_path / 'k.csv')
        args = ['curvature', '--spec', spec, '--grid', SMALL_GRID, '--level', '2', '--method', 'closed_form', '--out', out]
        assert main(args) == EXIT_OK
        frame = pd.read_csv(out)
        w = frame['re_w'].to_numpy() + 1j * frame['im_w'].to_numpy()
        assert_allclose(frame['k'], closed_form_curvature(3.0, w))

    def test_matrix_method(self, tmp_path, spec_file):
        spec = spec_file('flag', FLAG_23)
        out = str(tmp_path / 'k.csv')
        assert main(['curvature', '--spec', spec, '--grid', SMALL_GRID, '--method', 'matrix', '--out', out]) == EXIT_OK
        assert {'re_k11', 'im_k22'} <= set(pd.read_csv(out).columns)

    def test_chern_columns(self, tmp_path, spec_file):
        spec = spec_file('flag', {'type': 'ncfb', 'lambda': [2.0, 2.9, 3.7], 'truncation': 128})
        out = str(tmp_path / 'c.csv')
        assert main(['chern', '--spec', spec, '--grid', SMALL_GRID, '--out', out]) == EXIT_OK
        columns = list(pd.read_csv(out).columns)
        assert columns[:2] == ['re_w', 'im_w']
        assert 're_c3' in columns and 'im_c3' in columns

    def test_theta_ratio(self, tmp_path, spec_file):
        spec = spec_file('flag', FLAG_23)
        out = str(tmp_path / 'theta.csv')
        assert main(['theta', '--spec', spec, '--grid', SMALL_GRID, '--levels', '1,2', '--out', out]) == EXIT_OK
        frame = pd.read_csv(out)
        assert_allclose(frame['ratio'], 1.0 - frame['re_w'] ** 2 - frame['im_w'] ** 2, rtol=1e-10)

    def test_missing_grid(self, tmp_path, spec_file, capsys):
        spec = spec_file('flag', FLAG_23)
        assert main(['chern', '--spec', spec, '--out', str(tmp_path / 'c.csv')]) == EXIT_ERROR
        assert stderr_error(capsys)['field'] == 'grid'

    def test_bad_levels(self, tmp_path, spec_file, capsys):
        spec = spec_file('flag', FLAG_23)
        args = ['theta', '--spec', spec, '--grid', SMALL_GRID, '--levels', '2,1', '--out', str(tmp_path / 't.csv')]
        assert main(args) == EXIT_ERROR
        assert stderr_error(capsys)['field'] == 'levels'


class TestAlgebraCommands:
    def test_kernel_mode(self, tmp_path):
        out = str(tmp_path / 'kernel.json')
        args = ['intertwine', '--lambda1', '2', '--lambda2', '3', '--base-dim', '16', '--out', out]
        assert main(args) == EXIT_OK
        report = read_json(out)
        assert report['precedes'] is True
        assert report['backward']['filtered_count'] == 0

    def test_triangularity_mode(self, tmp_path, spec_file):
        spec = spec_file('flag', {'type': 'ncfb', 'lambda': [2.0, 3.0], 'truncation': 16})
        out = str(tmp_path / 'tri.json')
        assert main(['intertwine', '--spec', spec, '--seed', '7', '--out', out]) == EXIT_OK
        report = read_json(out)
        assert report['triangularity']['lower_mass'] <= 1e-6
        assert report['diagonal_reduction']['diagonals_equal'] is True

    def test_triangularity_needs_seed(self, tmp_path, spec_file, capsys):
        spec = spec_file('flag', {'type': 'ncfb', 'lambda': [2.0, 3.0], 'truncation': 16})
        assert main(['intertwine', '--spec', spec, '--out', str(tmp_path / 'tri.json')]) == EXIT_ERROR
        assert stderr_error(capsys)['field'] == 'seed'

    def test_property_h(self, tmp_path):
        out = str(tmp_path / 'h.json')
        assert main(['property-h', '--lambda1', '2', '--lambda2', '3', '--kmax', '2000', '--out', out]) == EXIT_OK
        report = read_json(out)
        assert report['verdict'] == 'diverges'
        assert report['slope'] == pytest.approx(0.5, abs=0.02)

    def test_property_h_prints_without_out(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        assert main(['property-h', '--lambda1', '2', '--lambda2', '3', '--kmax', '10000']) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report['verdict'] == 'diverges'
        assert report['slope'] == pytest.approx(0.5, abs=0.02)
        assert os.listdir(tmp_path) == []

    def test_out_required_elsewhere(self, tmp_path, spec_file, capsys):
        spec = spec_file('flag', {'type': 'ncfb', 'lambda': [2.0, 3.0], 'truncation': 16})
        assert main(['build', '--spec', spec]) == EXIT_ERROR
        assert stderr_error(capsys)['field'] == 'out'

    def test_property_h_short_recursion(self, tmp_path, capsys):
        args = ['property-h', '--lambda1', '2', '--lambda2', '3', '--kmax', '10', '--out', str(tmp_path / 'h.json')]
        assert main(args) == EXIT_ERROR
        assert stderr_error(capsys)['field'] == 'kmax'

    def test_correct(self, tmp_path, spec_file):
        base = {'type': 'ncfb', 'lambda': [2.0, 2.9, 3.7], 'truncation': 64}
        first = spec_file('t', {**base, 'couplings': [{'from': 1, 'to': 3, 'series': [0, 1]}]})
        second = spec_file('t_tilde', {**base, 'couplings': [{'from': 1, 'to': 3, 'series': [0, 2]}]})
        out = str(tmp_path / 'k.json')
        assert main(['correct', '--spec', first, '--spec', second, '--out', out]) == EXIT_OK
        report = read_json(out)
        assert report['residual'] <= 1e-8
        assert report['is_zero'] is False
        assert len(read_json(out + '.manifest.json')['spec_sha256']) == 2

    def test_correct_identical_zero_boundary(self, tmp_path, spec_file):
        spec = spec_file('t', {'type': 'ncfb', 'lambda': [2.0, 3.0], 'truncation': 32})
        out = str(tmp_path / 'k.json')
        assert main(['correct', '--spec', spec, '--spec', spec, '--boundary', 'zero', '--out', out]) == EXIT_OK
        assert read_json(out)['is_zero'] is True

    def test_orthogonalize(self, tmp_path):
        out = str(tmp_path / 'q.json')
        assert main(['orthogonalize', '--members', '3', '--dim', '12', '--seed', '1', '--out', out]) == EXIT_OK
        report = read_json(out)
        assert max(report['residuals'].values()) <= 1e-10
        assert sum(report['ranks']) == 12

    def test_orthogonalize_needs_seed(self, tmp_path, capsys):
        assert main(['orthogonalize', '--out', str(tmp_path / 'q.json')]) == EXIT_ERROR
        assert stderr_error(capsys)['field'] == 'seed'

    def test_verify_structure(self, tmp_path, spec_file):
        spec = spec_file('flag', FLAG_23)
        out = str(tmp_path / 's.json')
        assert main(['verify-structure', '--spec', spec, '--out', out]) == EXIT_OK
        assert read_json(out)['strongly_irreducible'] is True


class TestComparisons:
    def test_unitary_conjugate_is_equivalent(self, tmp_path, spec_file):
        first = spec_file('a', FLAG_23)
        second = spec_file('b', {**FLAG_23, 'seed': 3, 'conjugation': 'unitary'})
        out = str(tmp_path / 'v.json')
        args = ['compare-unitary', '--spec', first, '--spec', second, '--grid', SMALL_GRID, '--out', out]
        assert main(args) == EXIT_OK
        assert read_json(out)['verdict'] == 'equivalent'

    def test_different_lambdas_are_not_equivalent(self, tmp_path, spec_file):
        first = spec_file('a', FLAG_23)
        second = spec_file('b', {**FLAG_23, 'lambda': [2.0, 3.2]})
        out = str(tmp_path / 'v.json')
        args = ['compare-unitary', '--spec', first, '--spec', second, '--grid', SMALL_GRID, '--out', out]
        assert main(args) == EXIT_NOT_EQUIVALENT
        assert read_json(out)['verdict'] == 'not_equivalent'
        assert os.path.exists(out + '.manifest.json')

    def test_uk_with_spec_witness(self, tmp_path, spec_file):
        first = spec_file('a', FLAG_23)
        second = spec_file('b', {**FLAG_23, 'seed': 5, 'conjugation': 'rank_one'})
        out = str(tmp_path / 'v.json')
        args = ['compare-uk', '--spec', first, '--spec', second, '--grid', SMALL_GRID, '--out', out]
        assert main(args) == EXIT_OK
        report = read_json(out)
        assert report['verdict'] == 'equivalent'
        assert max(report['diagnostics']['psi_laplacian_residual']) <= 1e-6

    def test_uk_without_witness_is_undecided(self, tmp_path, spec_file):
        first = spec_file('a', FLAG_23)
        second = spec_file('b', {**FLAG_23, 'seed': 5, 'conjugation': 'rank_one'})
        args = ['compare-uk', '--spec', first, '--spec', second, '--grid', SMALL_GRID,
                '--witness', 'none', '--out', str(tmp_path / 'v.json')]
        assert main(args) == EXIT_UNDECIDED

    def test_uk_identity_witness_rejects_coupling_change(self, tmp_path, spec_file):
        first = spec_file('a', FLAG_23)
        second = spec_file('b', {**FLAG_23, 'couplings': [{'from': 1, 'to': 2, 'series': [2]}]})
        args = ['compare-uk', '--spec', first, '--spec', second, '--grid', SMALL_GRID,
                '--witness', 'identity', '--out', str(tmp_path / 'v.json')]
        assert main(args) == EXIT_NOT_EQUIVALENT

    def test_spec_witness_needs_rank_one_spec(self, tmp_path, spec_file, capsys):
        first = spec_file('a', FLAG_23)
        args = ['compare-uk', '--spec', first, '--spec', first, '--grid', SMALL_GRID, '--out', str(tmp_path / 'v.json')]
        assert main(args) == EXIT_ERROR
        assert stderr_error(capsys)['field'] == 'witness'


class TestErrors:
    def test_gap_violation_cites_requirement(self, tmp_path, spec_file, capsys):
        spec = spec_file('bad', {'type': 'ncfb', 'lambda': [2.0, 4.5]})
        assert main(['build', '--spec', spec, '--out', str(tmp_path / 'b.json')]) == EXIT_ERROR
        error = stderr_error(capsys)
        assert error['field'] == 'lambda'
        assert error['citation'] == GAP_CITATION
        assert not os.path.exists(tmp_path / 'b.json')

    def test_missing_spec_file(self, tmp_path, capsys):
        assert main(['build', '--spec', str(tmp_path / 'none.json'), '--out', str(tmp_path / 'b.json')]) == EXIT_ERROR
        assert 'not found' in stderr_error(capsys)['error']

    def test_wrong_spec_count(self, tmp_path, spec_file, capsys):
        spec = spec_file('flag', FLAG_23)
        assert main(['correct', '--spec', spec, '--out', str(tmp_path / 'k.json')]) == EXIT_ERROR
        assert stderr_error(capsys)['field'] == 'spec'

    def test_unknown_command(self, tmp_path, capsys):
        assert main(['explode', '--out', str(tmp_path / 'x.json')]) == EXIT_ERROR
        assert stderr_error(capsys)['field'] == 'argv'

    def test_non_positive_tolerance(self, tmp_path, capsys):
        args = ['property-h', '--lambda1', '2', '--lambda2', '3', '--tol', '0', '--out', str(tmp_path / 'h.json')]
        assert main(args) == EXIT_ERROR
        assert stderr_error(capsys)['field'] == 'tol'

    def test_grid_outside_disk(self, tmp_path, spec_file, capsys):
        spec = spec_file('bergman', {'type': 'bergman', 'lambda': 2.0, 'truncation': 128})
        args = ['curvature', '--spec', spec, '--grid', 'r=0:0.95:0.05,theta=0:360:90', '--out', str(tmp_path / 'k.csv')]
        assert main(args) == EXIT_ERROR
        assert 'error' in stderr_error(capsys)


def test_outputs_are_deterministic(tmp_path, spec_file):
    spec = spec_file('flag', FLAG_23)
    first, second = str(tmp_path / 'one.json'), str(tmp_path / 'two.json')
    for out in (first, second):
        assert main(['compare-unitary', '--spec', spec, '--spec', spec, '--grid', SMALL_GRID, '--out', out]) == EXIT_OK
    with open(first, 'rb') as a, open(second, 'rb') as b:
        assert a.read() == b.read()
    assert np.isfinite(read_json(first)['residuals']['chern'])
