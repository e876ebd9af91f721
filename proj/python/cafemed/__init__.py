"""Python bindings for the CafeMed medication recommender."""

import json

from . import _core
from ._core import (
    CafeMedError,
    ConfigError,
    DataError,
    DimensionError,
    NumericError,
    SpecError,
    UsageError,
    ddi_rate,
    estimate_effects,
    f1,
    gradcheck,
    jaccard,
    load_effects,
    prauc,
)

__all__ = [
    "CafeMedError", "ConfigError", "DataError", "DimensionError", "NumericError", "SpecError",
    "UsageError", "config_digest", "ddi_rate", "default_config", "estimate_effects", "evaluate",
    "f1", "gen_data", "gradcheck", "jaccard", "load_effects", "normalize_config", "prauc", "train",
]


def _text(config):
    if config is None:
        return ""
    return config if isinstance(config, str) else json.dumps(config)


def default_config():
    """The built-in experiment configuration as a dict."""
    return json.loads(_core.default_config())


def normalize_config(config):
    """Validates a config and fills every default."""
    return json.loads(_core.normalize_config(_text(config)))


def config_digest(config=None):
    return _core.config_digest(_text(config))


def gen_data(out, config=None):
    """Writes a synthetic cohort to `out`; returns the config digest."""
    return _core.gen_data(_text(config), str(out))


def train(data_dir, out, config=None, tau=None, variant="full"):
    """Trains one variant and returns the training log."""
    return json.loads(_core.train(_text(config), str(data_dir),
                                  None if tau is None else str(tau), variant, str(out)))


def evaluate(checkpoint, data, ddi=None, bootstrap=10, seed=None):
    """Bootstrap evaluation of a saved run; returns the report."""
    return json.loads(_core.evaluate(str(checkpoint), str(data),
                                     None if ddi is None else str(ddi), bootstrap, seed))
