"""Input-validation helpers shared across module boundaries.

Shaped after the sklearn ``check_*`` convention: each helper either returns
the validated (possibly coerced) value or raises :class:`InputError` with a
message naming the offending argument.
"""

from __future__ import annotations

import numbers

import numpy as np

from .errors import InputError


def check_positive(value, name: str, *, strict: bool = True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise InputError(f"{name} must be a finite number, got {value!r}")
    if strict and value <= 0:
        raise InputError(f"{name} must be > 0, got {value}")
    if not strict and value < 0:
        raise InputError(f"{name} must be >= 0, got {value}")
    return float(value)


def check_in_range(value, name: str, lo: float, hi: float, *,
                   inclusive: bool = True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise InputError(f"{name} must be a finite number, got {value!r}")
    ok = lo <= value <= hi if inclusive else lo < value < hi
    if not ok:
        bracket = "[]" if inclusive else "()"
        raise InputError(
            f"{name} must be in {bracket[0]}{lo}, {hi}{bracket[1]}, got {value}"
        )
    return float(value)


def check_array_1d(values, name: str, *, min_len: int = 1,
                   dtype=float) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    if arr.ndim != 1:
        raise InputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_len:
        raise InputError(f"{name} must have at least {min_len} samples, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise InputError(f"{name} contains a non-finite value at index {bad}")
    return arr


def check_strictly_increasing(values, name: str) -> np.ndarray:
    arr = check_array_1d(values, name)
    if arr.size > 1 and not np.all(np.diff(arr) > 0):
        bad = int(np.flatnonzero(np.diff(arr) <= 0)[0]) + 1
        raise InputError(f"{name} must be strictly increasing (violation at index {bad})")
    return arr


def check_int(value, name: str, *, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise InputError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise InputError(f"{name} must be >= {minimum}, got {value}")
    return value
