"""
Configuration loader utility

Loads and validates configuration from config.json
"""

import json
import logging
import os
from typing import Any, Dict, Optional

from dotenv import load_dotenv

REPO_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), '../..'))

REQUIRED_SECTIONS = ['truncation', 'grid', 'tolerances', 'solver', 'results', 'logging']


def default_config_path() -> str:
    """
    Resolve the config path, honouring CDLAB_CONFIG from the environment or .env

    Returns:
        Absolute path of the config file to load
    """
    load_dotenv()
    override = os.getenv('CDLAB_CONFIG')
    if override:
        return override
    return os.path.join(REPO_ROOT, 'config.json')


def load_config(config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load configuration from JSON file

    Args:
        config_path: Path to config.json file (defaults to the repository copy)

    Returns:
        Dictionary containing configuration

    Raises:
        FileNotFoundError: If config file doesn't exist
        json.JSONDecodeError: If config file is invalid JSON
        ValueError: If a required section is missing
    """
    if config_path is None:
        config_path = default_config_path()

    if not os.path.exists(config_path):
        raise FileNotFoundError(f"Configuration file not found: {config_path}")

    with open(config_path, 'r', encoding='utf-8') as f:
        config = json.load(f)

    for section in REQUIRED_SECTIONS:
        if section not in config:
            raise ValueError(f"Missing required config section: {section}")

    level = os.getenv('CDLAB_LOG_LEVEL')
    if level:
        config['logging']['level'] = level.upper()

    return config


def get_tolerance(config: Dict[str, Any], name: str) -> float:
    """
    Get a named tolerance

    Args:
        config: Full configuration dictionary
        name: Key under the 'tolerances' section

    Returns:
        Tolerance value
    """
    tolerances = config['tolerances']
    if name not in tolerances:
        raise ValueError(f"Unknown tolerance: {name}")
    return float(tolerances[name])


def get_solver_setting(config: Dict[str, Any], name: str) -> Any:
    """Get a value from the 'solver' section"""
    if name not in config['solver']:
        raise ValueError(f"Unknown solver setting: {name}")
    return config['solver'][name]


def get_grid_defaults(config: Dict[str, Any]) -> Dict[str, Any]:
    """
    Get finite-difference grid defaults

    Args:
        config: Full configuration dictionary

    Returns:
        Dictionary with r_max, fd_step, step bounds and the Richardson switch
    """
    return dict(config['grid'])


def setup_logging(config: Dict[str, Any]) -> None:
    """
    Configure root logging for an entry point

    Args:
        config: Full configuration dictionary
    """
    log_config = config['logging']
    handlers = [logging.StreamHandler()]
    if log_config.get('file'):
        handlers.append(logging.FileHandler(log_config['file'], encoding='utf-8'))

    logging.basicConfig(
        level=getattr(logging, str(log_config.get('level', 'INFO')).upper(), logging.INFO),
        format=log_config['format'],
        handlers=handlers,
        force=True
    )
