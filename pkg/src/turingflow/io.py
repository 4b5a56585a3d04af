"""File formats: CSV rasters, binary PGM images and small CSV tables.

Raster CSVs hold ``ny`` rows of ``nx`` comma-separated values, top row at
maximum y, printed with 9 significant digits. Arrays in memory keep row 0 at
minimum y.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidArgument, StageInputError

FIELD_FORMAT = "%.9g"


def atomic_write(path, data, mode: str = "w"):
    """Write ``data`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def field_to_csv(values) -> str:
    a = np.asarray(values, dtype=float)
    if a.ndim != 2:
        raise InvalidArgument("raster must be two-dimensional")
    buf = io.StringIO()
    np.savetxt(buf, a[::-1], fmt=FIELD_FORMAT, delimiter=",")
    return buf.getvalue()


def write_field_csv(path, values):
    atomic_write(path, field_to_csv(values))


def read_field_csv(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise StageInputError(f"missing input file {path}")
    a = np.loadtxt(path, delimiter=",", ndmin=2)
    return a[::-1].copy()


def scale_to_bytes(values) -> np.ndarray:
    """Linear map of min..max onto 0..255; a constant field maps to 0."""
    a = np.asarray(values, dtype=float)
    lo, hi = float(np.min(a)), float(np.max(a))
    if hi <= lo:
        return np.zeros(a.shape, np.uint8)
    return np.rint((a - lo) / (hi - lo) * 255.0).astype(np.uint8)


def pgm_bytes(image) -> bytes:
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise InvalidArgument("PGM image must be a 2-D uint8 array")
    ny, nx = img.shape
    return f"P5\n{nx} {ny}\n255\n".encode("ascii") + np.ascontiguousarray(img[::-1]).tobytes()


def write_pgm(path, image):
    atomic_write(path, pgm_bytes(image), mode="wb")


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5, maxval <= 255) PGM; row 0 of the result is the bottom row."""
    path = Path(path)
    if not path.exists():
        raise StageInputError(f"missing input file {path}")
    data = path.read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise InvalidArgument(f"{path} is not a binary PGM")
    nx, ny, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise InvalidArgument("16-bit PGM files are not supported")
    pos += 1
    img = np.frombuffer(data[pos:pos + nx * ny], dtype=np.uint8)
    if img.size != nx * ny:
        raise InvalidArgument(f"{path} is truncated")
    return img.reshape(ny, nx)[::-1].copy()


def pattern_image(raster) -> np.ndarray:
    """255 for fluid, 0 for solid."""
    return np.where(np.asarray(raster) > 0, 255, 0).astype(np.uint8)


def pattern_from_image(img) -> np.ndarray:
    return (np.asarray(img) >= 128).astype(np.int8)


def table_to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return FIELD_FORMAT % v
    return v


def write_table(path, header, rows):
    atomic_write(path, table_to_csv(header, rows))


def read_table(path):
    path = Path(path)
    if not path.exists():
        raise StageInputError(f"missing input file {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
