"""Input validation helpers shared by the fitting, prediction and control code."""

import numpy as np


class NumericalError(RuntimeError):
    """Raised when a simulation or rollout produces non-finite values."""


def check_finite(arr, name="array"):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_vector(v, size, name="vector"):
    """Return `v` as a finite 1-D float array of length `size`."""
    v = check_finite(v, name)
    if v.ndim != 1 or v.shape[0] != size:
        raise ValueError(f"{name} must have shape ({size},), got {v.shape}")
    return v


def check_columns(M, rows, name="matrix"):
    """Return `M` as a finite 2-D array with `rows` rows (one sample per column)."""
    M = check_finite(M, name)
    if M.ndim == 1 and rows == 1:
        M = M[None, :]
    if M.ndim != 2 or M.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got shape {M.shape}")
    return M


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def steps_in(duration, step, name="duration"):
    """Number of whole `step`s in `duration`; raises if it is not a multiple."""
    if step <= 0:
        raise ValueError("step must be positive")
    n = int(round(duration / step))
    if n < 0 or abs(n * step - duration) > 1e-9 * max(1.0, abs(duration)):
        raise ValueError(f"{name}={duration} is not a non-negative multiple of {step}")
    return n


def frozen(arr):
    """Copy `arr` to a read-only float array."""
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out
