"""
Utility functions for advection-forecast.
"""

import logging
import os


logger = logging.getLogger(__name__)

_TRUE_VALUES = ("true", "1", "yes", "on")


def env_flag(name, default="false"):
    """Read a boolean environment variable."""
    return os.environ.get(name, default).lower() in _TRUE_VALUES


def ensure_parent_dir(path):
    """Ensure the directory that will hold ``path`` exists."""
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
        return True
    return False
