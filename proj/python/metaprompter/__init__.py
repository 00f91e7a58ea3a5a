"""Meta-learned prompt pools on a toy masked LM."""

import json as _json

from ._core import (
    ConfigError,
    ContractError,
    DegenerateVectorError,
    DimensionError,
    Error,
    MissingClassError,
    NumericError,
    ParseError,
    SamplingError,
    ValidationError,
    combined_prob,
    command_names,
    git_blob_hash,
    param_count,
    pca_2d,
    repverb_prob,
)
from . import _core

__all__ = [
    "ConfigError",
    "ContractError",
    "DegenerateVectorError",
    "DimensionError",
    "Error",
    "MissingClassError",
    "NumericError",
    "ParseError",
    "SamplingError",
    "ValidationError",
    "combined_prob",
    "command_names",
    "git_blob_hash",
    "load_config",
    "param_count",
    "pca_2d",
    "repverb_prob",
    "run",
]


def _overrides(values):
    out = {}
    for key, value in values.items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = "[" + ",".join(str(v) for v in value) + "]"
        out[key] = str(value)
    return out


def load_config(path=None, **overrides):
    """Resolved run configuration as a dict. Override keys are dotted paths
    given as a mapping, e.g. ``load_config(**{"pool.k": 16})``."""
    return _json.loads(_core.load_config(None if path is None else str(path), _overrides(overrides)))


def run(command, config=None, run_dir=None, overrides=None):
    """Runs a pipeline subcommand in-process.

    Returns ``(summary, artifacts, log)``: the summary dict, the artifact
    paths and the progress log text.
    """
    summary, artifacts, log = _core.run_command(
        command,
        None if config is None else str(config),
        _overrides(overrides or {}),
        None if run_dir is None else str(run_dir),
    )
    return _json.loads(summary), artifacts, log
