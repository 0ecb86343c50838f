"""Deterministic on-disk formats.

Two binary containers, both little-endian with fixed 8-byte magics:

* matrix container (``NODEMAT1``): uint64 rows, uint64 cols, float32
  row-major data. Used for context embeddings and exported embeddings.
* named-array container (``NAMEDF64``): uint64 entry count, then per
  entry uint16 name length, utf-8 name, uint8 ndim, uint64 dims,
  float64 data. Entries sorted by name; used for checkpoints.

Text matrices are whitespace-delimited, one node per row. All writers
are byte-deterministic for identical inputs.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError

MATRIX_MAGIC = b"NODEMAT1"
NAMED_MAGIC = b"NAMEDF64"


def save_matrix(path, arr):
    """Write a 2-D array as the float32 matrix container."""
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    if arr.ndim != 2:
        raise DataError(f"matrix container holds 2-D arrays, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        fh.write(arr.tobytes(order="C"))


def load_matrix(path):
    """Read the float32 matrix container back as (rows, cols) float32."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MATRIX_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {MATRIX_MAGIC!r}")
        rows, cols = struct.unpack("<QQ", fh.read(16))
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != rows * cols:
        raise DataError(f"{path}: payload holds {data.size} values, header says {rows}x{cols}")
    return data.reshape(rows, cols).copy()


def load_text_matrix(path):
    """Whitespace-delimited text matrix, one node per row, float64."""
    try:
        arr = np.loadtxt(path, dtype=np.float64, ndmin=2, comments="#")
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None
    return arr


def save_text_matrix(path, arr, fmt="%.17g"):
    np.savetxt(path, np.asarray(arr), fmt=fmt)


def sniff_load_matrix(path):
    """Load a matrix from either container, detected by magic."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic == MATRIX_MAGIC:
        return load_matrix(path).astype(np.float64)
    return load_text_matrix(path)


def save_named_arrays(path, named):
    """Write a dict of name -> ndarray (float64, ndim <= 2), sorted by name."""
    with open(path, "wb") as fh:
        fh.write(NAMED_MAGIC)
        fh.write(struct.pack("<Q", len(named)))
        for name in sorted(named):
            arr = np.ascontiguousarray(named[name], dtype=np.float64)
            if arr.ndim > 2:
                raise DataError(f"checkpoint entry {name!r} has ndim {arr.ndim}")
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.tobytes(order="C"))


def load_named_arrays(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != NAMED_MAGIC:
        raise DataError(f"{path}: bad magic {blob[:8]!r}, expected {NAMED_MAGIC!r}")
    off = 8
    (count,) = struct.unpack_from("<Q", blob, off)
    off += 8
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from("<" + "Q" * ndim, blob, off)
        off += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape)
        off += 8 * size
        out[name] = arr.copy()
    if off != len(blob):
        raise DataError(f"{path}: {len(blob) - off} trailing bytes")
    return out


def write_table(path, header, rows):
    """Tab-separated table; floats rendered with %.17g so reruns are bitwise identical."""

    def cell(x):
        if isinstance(x, (bool, np.bool_)):
            return str(int(x))
        if isinstance(x, (int, np.integer)):
            return str(int(x))
        if isinstance(x, (float, np.floating)):
            return "%.17g" % x
        return str(x)

    with open(path, "wt", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(cell(x) for x in row) + "\n")


def read_table(path):
    """Read a write_table file back as (header, list of string rows)."""
    with open(path, "rt", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines:
        raise DataError(f"{path}: empty table")
    header = lines[0].split("\t")
    return header, [ln.split("\t") for ln in lines[1:] if ln]
