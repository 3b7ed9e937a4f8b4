"""Input validation helpers shared by the solvers and estimators."""

import numpy as np

from .exceptions import InvalidArgumentError


def check_field(u, name="field", min_extent=1):
    """Return `u` as a finite float64 array with 1 to 3 axes."""
    arr = np.asarray(u, dtype=np.float64)
    if arr.ndim < 1 or arr.ndim > 3:
        raise InvalidArgumentError(f"{name} must have 1, 2 or 3 axes, got shape {arr.shape}")
    if min(arr.shape) < min_extent:
        raise InvalidArgumentError(
            f"{name} needs at least {min_extent} voxels per axis, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return arr


def check_vector_field(p, shape=None, name="vector field"):
    """Return `p` as a float64 array of shape ``(d, *grid)`` with ``d == len(grid)``."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim < 2 or arr.shape[0] != arr.ndim - 1:
        raise InvalidArgumentError(
            f"{name} must have shape (d, *grid) with d grid axes, got {arr.shape}"
        )
    if shape is not None and arr.shape[1:] != tuple(shape):
        raise InvalidArgumentError(
            f"{name} grid {arr.shape[1:]} does not match {tuple(shape)}"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return arr


def check_same_grid(*fields, names=None):
    """Raise unless every array in `fields` has the same shape."""
    shapes = [np.shape(f) for f in fields]
    if len(set(shapes)) > 1:
        names = names or [f"field {i}" for i in range(len(fields))]
        detail = ", ".join(f"{n}={s}" for n, s in zip(names, shapes))
        raise InvalidArgumentError(f"grid mismatch: {detail}")


def check_nonnegative(value, name):
    value = float(value)
    if not value >= 0:
        raise InvalidArgumentError(f"{name} must be >= 0, got {value}")
    return value


def check_binary_mask(mask, name="mask"):
    arr = np.asarray(mask, dtype=np.float64)
    if not np.all((arr == 0) | (arr == 1)):
        raise InvalidArgumentError(f"{name} must contain only 0 and 1")
    return arr
