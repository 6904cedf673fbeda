"""Bit-stable CSV and JSON writers.

Every file starts with a header naming the artifact, the package version and
the config hash. Floats are written with 17 significant digits.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import __version__


def header_line(artifact: str, config_hash: str) -> str:
    return f"# sizepop {__version__} artifact={artifact} config_sha256={config_hash}"


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, columns, rows, artifact: str, config_hash: str) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(header_line(artifact, config_hash) + "\n")
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(fmt(v) for v in r) + "\n")
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Columns and float data of a file written by :func:`write_csv`."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    cols = lines[0].split(",")
    data = np.array([[float(t) for t in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(cols))
    return cols, data


def jsonable(obj):
    """Plain-JSON form; non-finite floats become the strings ``"inf"``, ``"-inf"``, ``"nan"``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return float(format(v, ".17g"))
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def write_json(path, obj: dict, artifact: str, config_hash: str) -> Path:
    path = Path(path)
    doc = {"header": header_line(artifact, config_hash), **jsonable(obj)}
    path.write_text(json.dumps(doc, indent=1, sort_keys=False, allow_nan=False) + "\n")
    return path
