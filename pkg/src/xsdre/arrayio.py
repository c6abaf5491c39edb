"""Serialization helpers: a small binary array container, matrix-market files, CSV.

The binary container is deliberately minimal: a magic tag, the shape, the
dtype string, then the raw payload in column-major order.  It is used for
snapshot sets, POD bases, low-rank solution factors and feedback gains.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_MAGIC = b"XARR"


def save_array(path, arr) -> None:
    """Write a dense array to the binary container format."""
    arr = np.asarray(arr)
    dtype_tag = arr.dtype.str.encode("ascii")
    if len(dtype_tag) > 8:
        raise ValueError(f"dtype tag too long: {dtype_tag!r}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<i", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
        fh.write(dtype_tag.ljust(8, b" "))
        fh.write(np.asfortranarray(arr).tobytes(order="F"))


def load_array(path) -> np.ndarray:
    """Read an array written by :func:`save_array`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not an array container (magic {magic!r})")
        (ndim,) = struct.unpack("<i", fh.read(4))
        shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim))
        dtype = np.dtype(fh.read(8).decode("ascii").strip())
        data = np.frombuffer(fh.read(), dtype=dtype)
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: payload size does not match header shape {shape}")
    return data.reshape(shape, order="F").copy()


def save_csv(path, columns: dict, float_fmt: str = "%.17g") -> None:
    """Write named columns to CSV with a fixed float format.

    All columns must have equal length.  The format string is pinned so that
    repeated runs produce byte-identical files.
    """
    names = list(columns)
    cols = [np.atleast_1d(np.asarray(columns[k])) for k in names]
    n_rows = len(cols[0]) if cols else 0
    for name, col in zip(names, cols):
        if len(col) != n_rows:
            raise ValueError(f"column {name!r} has length {len(col)} != {n_rows}")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(n_rows):
            cells = []
            for col in cols:
                x = col[i]
                if np.issubdtype(col.dtype, np.floating):
                    cells.append(float_fmt % x)
                else:
                    cells.append(str(x))
            fh.write(",".join(cells) + "\n")


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
