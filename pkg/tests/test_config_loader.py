"""Tests for configuration loading"""

import json
import logging

import pytest

from src.utils.config_loader import (
    REQUIRED_SECTIONS, default_config_path, get_grid_defaults, get_solver_setting, get_tolerance,
    load_config, setup_logging
)


@pytest.fixture
def base_config():
    return load_config()


def test_repository_config_has_every_section(base_config):
    assert set(REQUIRED_SECTIONS) <= set(base_config)
    assert get_tolerance(base_config, 'compare') == 1e-6
    assert get_solver_setting(base_config, 'series_max_terms') == 64
    assert get_grid_defaults(base_config)['r_max'] == 0.85


def test_grid_defaults_are_a_copy(base_config):
    defaults = get_grid_defaults(base_config)
    defaults['r_max'] = 0.1
    assert base_config['grid']['r_max'] == 0.85


def test_unknown_names(base_config):
    with pytest.raises(ValueError):
        get_tolerance(base_config, 'nope')
    with pytest.raises(ValueError):
        get_solver_setting(base_config, 'nope')


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(str(tmp_path / 'config.json'))


def test_missing_section(tmp_path, base_config):
    del base_config['solver']
    path = tmp_path / 'config.json'
    path.write_text(json.dumps(base_config))
    with pytest.raises(ValueError, match='solver'):
        load_config(str(path))


def test_environment_overrides(tmp_path, monkeypatch, base_config):
    path = tmp_path / 'alt.json'
    path.write_text(json.dumps(base_config))
    monkeypatch.setenv('CDLAB_CONFIG', str(path))
    monkeypatch.setenv('CDLAB_LOG_LEVEL', 'debug')
    assert default_config_path() == str(path)
    assert load_config()['logging']['level'] == 'DEBUG'


def test_setup_logging_writes_file(tmp_path, base_config):
    log_file = tmp_path / 'run.log'
    base_config['logging']['file'] = str(log_file)
    base_config['logging']['level'] = 'WARNING'
    setup_logging(base_config)
    try:
        logging.getLogger('src.test').warning('grid point rejected')
        for handler in logging.getLogger().handlers:
            handler.flush()
        assert 'grid point rejected' in log_file.read_text(encoding='utf-8')
    finally:
        for handler in list(logging.getLogger().handlers):
            handler.close()
        logging.getLogger().handlers.clear()
        logging.getLogger().setLevel(logging.WARNING)
