"""Bit-exact file formats and run configuration.

CSV: UTF-8, comma-separated, mandatory header, empty field = missing cell,
decimal point only.  Floats are written with ``repr`` (shortest string that
round-trips float64, within 17 significant digits), so write + read is
lossless.  Config files are TOML; command-line flags override file values
and the effective configuration is echoed next to the outputs.
"""

from __future__ import annotations

import csv
import math
import sys

import numpy as np

from .data import Dataset, VariableSpec
from .errors import ConfigError, CsvFormatError

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml


def _format_cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


def _parse_number(text, path, line_no, col):
    try:
        return float(text)
    except ValueError:
        raise CsvFormatError(
            f"{path}:{line_no}: non-numeric cell {text!r} in column {col!r}"
        ) from None


def write_dataset_csv(data, path):
    """One column per variable; masked cells become empty fields."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(data.names)
        for i in range(data.n_obs):
            w.writerow(
                [
                    _format_cell(data.values[i, j]) if data.mask[i, j] else ""
                    for j in range(data.n_var)
                ]
            )


def read_dataset_csv(path, schema):
    """Read a dataset against an explicit column schema.

    The header must match the schema names exactly; metadata (kind, role,
    parents) comes from the schema, so write + read reproduces the dataset
    including its specs.
    """
    names = [s.name for s in schema]
    values, mask = _read_grid(path, names)
    return Dataset(tuple(schema), values, mask)


def _read_grid(path, expected_names=None):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file, header row is mandatory") from None
        if expected_names is not None and header != list(expected_names):
            raise CsvFormatError(
                f"{path}: header mismatch: expected {list(expected_names)}, got {header}"
            )
        rows = []
        obs = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}"
                )
            vals = []
            seen = []
            for name, cell in zip(header, row):
                if cell == "":
                    vals.append(0.0)
                    seen.append(False)
                else:
                    vals.append(_parse_number(cell, path, line_no, name))
                    seen.append(True)
            rows.append(vals)
            obs.append(seen)
    values = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header))
    mask = np.asarray(obs, dtype=bool).reshape(len(rows), len(header))
    return values, mask


def read_raw_csv(path):
    """Header plus (values, mask) with no schema expectations."""
    with open(path, encoding="utf-8", newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise CsvFormatError(f"{path}: empty file, header row is mandatory")
    values, mask = _read_grid(path, header)
    return header, values, mask


def infer_schema(header, values, mask, formula):
    """Column specs for an analysis CSV: roles from the formula, kinds by
    inspection (binary iff the observed values are all 0/1)."""
    specs = []
    for j, name in enumerate(header):
        obs_vals = values[mask[:, j], j]
        binary = obs_vals.size > 0 and np.isin(obs_vals, (0.0, 1.0)).all()
        role = "outcome" if name == formula.outcome else "covariate"
        specs.append(VariableSpec(name, "binary" if binary else "continuous", role))
    return specs


def write_table_csv(path, columns, rows):
    """Long-format results table; ``rows`` are dicts keyed by ``columns``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_format_cell(r.get(c)) for c in columns])


def read_table_csv(path, numeric=()):
    """Read a results table back into dicts; ``numeric`` columns are parsed
    to float (empty fields to None), everything else stays a string."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CsvFormatError(f"{path}: empty file, header row is mandatory")
        out = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}"
                )
            d = {}
            for name, cell in zip(header, row):
                if name in numeric:
                    d[name] = None if cell == "" else _parse_number(cell, path, line_no, name)
                else:
                    d[name] = cell
            out.append(d)
    return header, out


# -- run configuration ---------------------------------------------------------

CONFIG_KEYS = {
    "dgm": list,
    "methods": list,
    "n_sim": int,
    "n_obs": int,
    "seed": int,
    "m": int,
    "iterations": int,
    "workers": int,
    "calibration_probe": int,
    "formula": str,
    "strategy": str,
    "data": str,
}

CONFIG_DEFAULTS = {
    "dgm": ["1"],
    "methods": ["passive", "jav", "sia", "smcfcs"],
    "n_sim": 1000,
    "n_obs": 10_000,
    "seed": 1,
    "m": 10,
    "iterations": 10,
    "workers": 1,
    "calibration_probe": 1_000_000,
}


def load_config(path):
    """Parse a TOML config file; unknown keys and wrong types are errors.

    An empty file is valid and yields no overrides (all defaults).
    """
    with open(path, "rb") as fh:
        try:
            raw = _toml.load(fh)
        except _toml.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    out = {}
    for key, value in raw.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}: unknown key {key!r}")
        want = CONFIG_KEYS[key]
        if want is list:
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise ConfigError(f"{path}: key {key!r} must be a list of strings")
            out[key] = list(value)
        elif want is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{path}: key {key!r} must be an integer")
            out[key] = value
        else:
            if not isinstance(value, str):
                raise ConfigError(f"{path}: key {key!r} must be a string")
            out[key] = value
    return out


def effective_config(defaults, file_values, flag_values):
    """Merge precedence: flags > file > defaults.  Flag values of None mean
    'not given'."""
    out = dict(defaults)
    out.update(file_values)
    for k, v in flag_values.items():
        if v is not None:
            out[k] = v
    return out


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialise config value {v!r}")


def write_config(path, values):
    """Echo the effective configuration as TOML (sorted keys, stable bytes)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for k in sorted(values):
            fh.write(f"{k} = {_toml_value(values[k])}\n")
