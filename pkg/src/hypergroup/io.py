"""File formats: binary PGM grids, headered float32 matrices, CSV tables."""

from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path

import numpy as np

DESCRIPTOR_MAGIC = b"H2GD"
EMBEDDING_MAGIC = b"H2GE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class FormatError(ValueError):
    pass


def write_pgm(path, grid: np.ndarray) -> None:
    """Binary PGM of a nonnegative integer grid; 16-bit big-endian when any
    value exceeds 255."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError("PGM grids are 2-D")
    if grid.size and (grid.min() < 0 or grid.max() > 65535):
        raise ValueError("PGM values must lie in [0, 65535]")
    maxval = 255 if grid.size == 0 or grid.max() <= 255 else 65535
    dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
    h, w = grid.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(grid.astype(dtype).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1  # single whitespace byte after maxval
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    count = w * h
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return raw.reshape(h, w).astype(np.int64)


def write_mask(path, mask: np.ndarray) -> None:
    write_pgm(path, np.asarray(mask, dtype=bool).astype(np.uint8) * 255)


def read_mask(path) -> np.ndarray:
    return read_pgm(path) > 0


def write_matrix(path, matrix: np.ndarray, magic: bytes = DESCRIPTOR_MAGIC) -> None:
    """Little-endian float32 matrix behind a 16-byte header."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("expected a matrix")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(magic, FORMAT_VERSION, m.shape[0], m.shape[1]))
        f.write(m.astype("<f4").tobytes())


def read_matrix(path, magic: bytes = DESCRIPTOR_MAGIC) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    got, version, rows, cols = _HEADER.unpack_from(data)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(data) != _HEADER.size + 4 * rows * cols:
        raise FormatError(f"{path}: payload size does not match {rows}x{cols}")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).astype(np.float64)


def format_float(x: float) -> str:
    return repr(float(x))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    Path(path).write_text(csv_text(header, rows))


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
