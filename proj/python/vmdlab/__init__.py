"""Masked diffusion / variational masked diffusion laboratory."""

import json as _json

from . import _vmdlab
from ._vmdlab import (
    __version__,
    accuracy,
    analytic_product_kl,
    exact_distribution,
    gradcheck,
    kl_to_truth,
    preset_names,
    sample,
)

__all__ = [
    "__version__",
    "accuracy",
    "analytic_product_kl",
    "exact_distribution",
    "gradcheck",
    "kl_to_truth",
    "preset",
    "preset_names",
    "read_checkpoint",
    "run",
    "sample",
    "validate",
]


def preset(name, seed=0):
    """Experiment config of a built-in preset, as a dict."""
    return _json.loads(_vmdlab.preset_json(name, seed))


def validate(config):
    """Strictly parses a config dict; returns it with defaults filled in."""
    return _json.loads(_vmdlab.validate_config(_json.dumps(config)))


def run(config, out_dir, stages="all", log=None):
    """Runs an experiment config (dict or preset name); returns manifest, results and table."""
    if isinstance(config, str):
        config = preset(config)
    return _json.loads(_vmdlab.run_experiment(_json.dumps(config), str(out_dir), stages, log))


def read_checkpoint(path):
    """Checkpoint manifest (ckpt_<tag>.json) as a dict."""
    return _json.loads(_vmdlab.read_checkpoint_manifest(str(path)))
