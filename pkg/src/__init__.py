"""
cdlab - Cowen-Douglas operator laboratory

Builds truncated weighted Bergman shifts and their flag-structured
extensions, computes curvature, Chern polynomials and second fundamental
forms, and decides unitary and (U+K)-equivalence on disk grids.
"""

__version__ = "0.1.0"
__author__ = "cdlab developers"

from src.utils.config_loader import default_config_path, load_config

# Package metadata
PACKAGE_NAME = "cdlab"
DEFAULT_CONFIG_PATH = default_config_path()

# Load default configuration
config = load_config(DEFAULT_CONFIG_PATH)
