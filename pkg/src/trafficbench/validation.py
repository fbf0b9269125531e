"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np

from .tensorize import ROW_BYTES, TensorSample


def check_tensor_batch(X, n_packets: int = 10) -> np.ndarray:
    """Coerce ``X`` to an ``(N, n_packets, 160)`` uint8 array.

    Accepts a list of :class:`TensorSample`, a flattened ``(N, n_packets*160)``
    array, or the 3-d form.
    """
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], TensorSample):
        X = np.stack([s.bytes for s in X])
    arr = np.asarray(X)
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.integer) or arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError(f"expected unsigned byte values, got dtype {arr.dtype}")
        arr = arr.astype(np.uint8)
    if arr.ndim == 2 and arr.shape[1] == n_packets * ROW_BYTES:
        arr = arr.reshape(arr.shape[0], n_packets, ROW_BYTES)
    if arr.ndim != 3 or arr.shape[1:] != (n_packets, ROW_BYTES):
        raise ValueError(f"expected shape (N, {n_packets}, {ROW_BYTES}), got {arr.shape}")
    return arr


def check_same_length(a, b, what: str = "inputs") -> None:
    if len(a) != len(b):
        raise ValueError(f"{what} have different lengths: {len(a)} != {len(b)}")
