"""Problem descriptors (JSON) and binary rasters.

Raster layout, little-endian: int32 ``d``, int32 ``rows``, int32 ``cols``,
``d`` int32 grid dimensions, then float64 values in C order with shape
``(*dims, rows, cols)``.
"""

import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .model import Problem


def write_raster(path, data, d):
    data = np.asarray(data)
    if np.iscomplexobj(data):
        raise ConfigurationError("rasters hold real values only")
    if data.ndim != d + 2:
        raise ConfigurationError(f"raster data must have {d} grid axes plus a matrix pair")
    rows, cols = data.shape[-2:]
    header = np.array([d, rows, cols, *data.shape[:d]], dtype="<i4")
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_raster(path):
    """Return the value array of shape (*dims, rows, cols)."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise ConfigurationError(f"{path}: truncated raster header")
    d, rows, cols = np.frombuffer(raw[:12], dtype="<i4")
    end = 12 + 4 * int(d)
    dims = tuple(int(v) for v in np.frombuffer(raw[12:end], dtype="<i4"))
    shape = dims + (int(rows), int(cols))
    expected = end + 8 * int(np.prod(shape))
    if len(raw) != expected:
        raise ConfigurationError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw[end:], dtype="<f8").reshape(shape).astype(float)


def problem_from_dict(data, base_dir="."):
    data = json.loads(json.dumps(data))  # private copy
    coef = data.get("coefficient", {})
    if coef.get("family") == "raster" and "file" in coef:
        coef["data"] = read_raster(Path(base_dir) / coef.pop("file"))
    return Problem.from_dict(data)


def load_problem(path):
    path = Path(path)
    with open(path) as fh:
        data = json.load(fh)
    return problem_from_dict(data.get("problem", data), path.parent)


def save_problem(problem, path):
    with open(path, "w") as fh:
        json.dump(problem.to_dict(), fh, indent=2)
