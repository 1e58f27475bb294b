"""Readers for the simulator's delimited artifacts.

Every CSV starts with a comment line carrying the config hash and artifact
version, then a header row.  The known schemas are:

  trajectory:  t, x, z_1..z_ell, omega_p, omega_d, w
  sweep:       eps, t, mean_w, sd_w, sup_err, blowup_frac
  ensemble:    t, mean_w, sd_w, se_w
  drive table: w, drive_p, drive_d, se_p, se_d

JSON artifacts wrap their payload as {"config_hash", "artifact_version",
"data"}.
"""

import json
import os

import numpy as np


class SchemaError(ValueError):
    pass


REQUIRED = {
    "trajectory": ("t", "w"),
    "sweep": ("eps", "t", "mean_w", "sd_w", "sup_err", "blowup_frac"),
    "ensemble": ("t", "mean_w", "sd_w", "se_w"),
    "drive": ("w", "drive_p", "drive_d"),
}


class Table:
    """Columns of one CSV artifact, as float arrays keyed by header name."""

    def __init__(self, path, columns, data):
        self.path = path
        self.columns = columns
        self.data = data

    def __getitem__(self, name):
        if name not in self.data:
            raise SchemaError(f"{self.path}: missing column {name}")
        return self.data[name]


def read_csv(path, kind=None):
    if not os.path.exists(path):
        raise SchemaError(f"input file not found: {path}")
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if lines and lines[0].startswith("#"):
        lines = lines[1:]
    if not lines:
        raise SchemaError(f"{path}: empty file")
    columns = [c.strip() for c in lines[0].split(",")]
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != len(columns):
            raise SchemaError(f"{path}:{i}: expected {len(columns)} cells")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise SchemaError(f"{path}:{i}: {exc}") from None
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    arr = np.asarray(rows)
    data = {name: arr[:, j] for j, name in enumerate(columns)}
    if kind is not None:
        for name in REQUIRED[kind]:
            if name not in data:
                raise SchemaError(f"{path}: column {name} required for "
                                  f"{kind} schema")
    return Table(path, columns, data)


def read_json(path):
    if not os.path.exists(path):
        raise SchemaError(f"input file not found: {path}")
    with open(path) as fh:
        doc = json.load(fh)
    if "data" not in doc:
        raise SchemaError(f"{path}: missing data envelope")
    return doc["data"]
