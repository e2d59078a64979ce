"""Python bindings for the CVPE forecaster."""

import json

from ._core import ConfigError, Model, ShapeError, gradcheck, patch_count, score_entries
from ._core import experiment as _experiment
from ._core import normalize_config as _normalize_config

__all__ = ["ConfigError", "Model", "ShapeError", "experiment", "gradcheck", "load_config", "patch_count",
           "score_entries"]


def load_config(config):
    """Validate a run config given as a dict or JSON text; returns the canonical dict."""
    text = config if isinstance(config, str) else json.dumps(config)
    return json.loads(_normalize_config(text))


def experiment(config):
    text = config if isinstance(config, str) else json.dumps(config)
    return _experiment(text)
