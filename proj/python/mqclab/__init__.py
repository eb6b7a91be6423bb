"""Mixed quantum-classical phase-space dynamics lab.

Scenario functions accept a path to a JSON config or a dict with the same
layout; relative file references in a dict resolve against ``base_dir``.
"""

import json
import os

from . import _mqc
from ._mqc import ConfigError, Error, NumericalAbort, csv_columns, purity, read_snapshot_density, von_neumann_entropy

__all__ = [
    "ConfigError",
    "Error",
    "NumericalAbort",
    "casimir_check",
    "csv_columns",
    "equilibrium",
    "purity",
    "read_snapshot_density",
    "simulate",
    "von_neumann_entropy",
]


def _config(config, base_dir):
    if isinstance(config, dict):
        return json.dumps(config), os.fspath(base_dir or ".")
    path = os.fspath(config)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return text, os.fspath(base_dir) if base_dir else os.path.dirname(os.path.abspath(path))


def simulate(config, out_dir="", base_dir=None):
    text, base = _config(config, base_dir)
    return _mqc.simulate(text, base, os.fspath(out_dir))


def equilibrium(config, out_dir="", base_dir=None):
    text, base = _config(config, base_dir)
    return _mqc.equilibrium(text, base, os.fspath(out_dir))


def casimir_check(config, out_dir="", base_dir=None):
    text, base = _config(config, base_dir)
    return _mqc.casimir_check(text, base, os.fspath(out_dir))
