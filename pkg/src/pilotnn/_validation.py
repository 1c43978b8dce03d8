"""Small argument checks shared across modules."""

from __future__ import annotations

import numbers

import numpy as np


def check_int(value, name: str, minimum: int | None = None) -> int:
    """Return ``value`` as a Python int, rejecting floats and bools."""
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return value


def check_snr(snr, name: str = "snr") -> float:
    """Linear SNR must be a finite non-negative real."""
    snr = float(snr)
    if not np.isfinite(snr) or snr < 0:
        raise ValueError(f"{name} must be finite and non-negative, got {snr}")
    return snr


def db_to_linear(snr_db):
    return 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)


def linear_to_db(snr):
    return 10.0 * np.log10(np.asarray(snr, dtype=float))


def check_complex_array(x, name: str, ndim: int | None = None) -> np.ndarray:
    """Convert to a complex128 array, checking dimensionality and finiteness.

    scikit-learn's ``check_array`` rejects complex input, so channel data
    goes through this helper instead.
    """
    arr = np.asarray(x)
    if arr.dtype.kind not in "biufc":
        raise TypeError(f"{name} must be numeric, got dtype {arr.dtype}")
    arr = arr.astype(np.complex128, copy=False)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr
