"""Minimal NPY v1.0 writer for unsigned byte matrices.

Reading is delegated to :func:`numpy.load`; the writer is kept separate so
the two can check each other.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

NPY_MAGIC = b"\x93NUMPY"
NPY_ALIGN = 64


class IoFailure(OSError):
    pass


def npy_header(shape: tuple[int, ...], descr: str = "|u1") -> bytes:
    """Version 1.0 header, space padded so the data starts on a 64-byte boundary."""
    if len(shape) == 1:
        shape_repr = f"({shape[0]},)"
    else:
        shape_repr = "(" + ", ".join(str(d) for d in shape) + ")"
    text = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_repr}, }}"
    # magic(6) + version(2) + length(2) + text + '\n'
    used = len(NPY_MAGIC) + 2 + 2 + len(text) + 1
    text += " " * ((-used) % NPY_ALIGN) + "\n"
    if len(text) > 0xFFFF:
        raise ValueError("header too large for format version 1.0")
    return NPY_MAGIC + b"\x01\x00" + struct.pack("<H", len(text)) + text.encode("latin1")


def write_npy(path: str | Path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array)
    if array.dtype != np.uint8:
        raise TypeError(f"expected uint8 array, got {array.dtype}")
    try:
        with open(path, "wb") as fh:
            fh.write(npy_header(array.shape))
            fh.write(array.tobytes(order="C"))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_npy(path: str | Path) -> np.ndarray:
    try:
        return np.load(path, allow_pickle=False)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
