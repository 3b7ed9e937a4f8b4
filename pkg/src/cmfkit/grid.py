"""Discrete differential and interpolation operators on regular grids.

Fields are plain numpy arrays. A scalar field has 1 to 3 axes; a vector field
has shape ``(d, *grid)`` where component ``i`` is the displacement or flow
along array axis ``i``. Grid spacing is one voxel on every axis.

The forward-difference gradient (Neumann: zero difference across the far face)
and the backward-difference divergence form an exact negative-adjoint pair,

    <gradient(u), p> = -<u, divergence(p)>,

which the max-flow solvers rely on for their flow-balance constraints.
"""

from dataclasses import dataclass
import logging
import math

import numpy as np

from ._validation import check_field, check_vector_field
from .exceptions import InvalidArgumentError

__all__ = [
    "gradient",
    "divergence",
    "total_variation",
    "Pyramid",
    "build_pyramid",
    "warp",
    "image_gradient",
    "upsample_deformation",
    "interpolate",
]

logger = logging.getLogger(__name__)

TV_NORMS = ("isotropic", "anisotropic")


def _axis_slice(ndim, axis, sl):
    index = [slice(None)] * ndim
    index[axis] = sl
    return tuple(index)


def gradient(u):
    """Forward-difference gradient with a zero difference across the far face.

    Returns an array of shape ``(u.ndim, *u.shape)``.
    """
    u = np.asarray(u, dtype=np.float64)
    out = np.zeros((u.ndim,) + u.shape)
    for axis in range(u.ndim):
        head = _axis_slice(u.ndim, axis, slice(None, -1))
        tail = _axis_slice(u.ndim, axis, slice(1, None))
        out[axis][head] = u[tail] - u[head]
    return out


def divergence(p):
    """Backward-difference divergence, the exact negative adjoint of `gradient`."""
    p = np.asarray(p, dtype=np.float64)
    ndim = p.ndim - 1
    out = np.zeros(p.shape[1:])
    for axis in range(ndim):
        comp = p[axis]
        n = comp.shape[axis]
        if n == 1:
            continue
        first = _axis_slice(ndim, axis, 0)
        last = _axis_slice(ndim, axis, -1)
        out[first] += comp[first]
        if n > 2:
            mid = _axis_slice(ndim, axis, slice(1, -1))
            out[mid] += comp[mid] - comp[_axis_slice(ndim, axis, slice(0, -2))]
        out[last] -= comp[_axis_slice(ndim, axis, -2)]
    return out


def pointwise_norm(p, tv_norm="isotropic"):
    """Per-voxel magnitude of a vector field (Euclidean or l1 over components)."""
    if tv_norm == "isotropic":
        return np.sqrt(np.sum(p * p, axis=0))
    if tv_norm == "anisotropic":
        return np.sum(np.abs(p), axis=0)
    raise InvalidArgumentError(f"tv_norm must be one of {TV_NORMS}, got {tv_norm!r}")


def total_variation(u, tv_norm="isotropic"):
    """Discrete total variation of `u` under the isotropic or anisotropic norm."""
    return float(np.sum(pointwise_norm(gradient(u), tv_norm)))


@dataclass
class Pyramid:
    """Coarse-to-fine image pyramid; ``levels[0]`` is coarsest, ``levels[-1]`` the input."""

    levels: list

    @property
    def n_levels(self):
        return len(self.levels)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, index):
        return self.levels[index]

    def __iter__(self):
        return iter(self.levels)


def _smooth_axis(a, axis):
    # binomial (1/4, 1/2, 1/4) with replicated edges; summed so constants stay exact
    n = a.shape[axis]
    if n == 1:
        return a.copy()
    idx = np.arange(n)
    left = np.take(a, np.maximum(idx - 1, 0), axis=axis)
    right = np.take(a, np.minimum(idx + 1, n - 1), axis=axis)
    return 0.5 * a + 0.25 * (left + right)


def _reduce(a):
    for axis in range(a.ndim):
        a = _smooth_axis(a, axis)
    return a[tuple(slice(None, None, 2) for _ in range(a.ndim))]


def build_pyramid(image, levels, min_extent=4):
    """Build up to `levels` pyramid levels by binomial smoothing and decimation by 2.

    Each coarser level has extents ``ceil(n / 2)``. Coarsening stops early when it
    would bring an axis below `min_extent` voxels; ``Pyramid.n_levels`` reports
    the number actually built.
    """
    image = check_field(image, "image")
    if int(levels) != levels or levels < 1:
        raise InvalidArgumentError(f"levels must be an integer >= 1, got {levels}")
    stack = [image.copy()]
    while len(stack) < levels:
        coarse_shape = [math.ceil(n / 2) for n in stack[0].shape]
        if min(coarse_shape) < min_extent:
            logger.info("pyramid truncated to %d of %d levels", len(stack), levels)
            break
        stack.insert(0, _reduce(stack[0]))
    return Pyramid(stack)


def interpolate(image, coords):
    """Multilinear interpolation of `image` at fractional voxel `coords`.

    `coords` has shape ``(image.ndim, *out_shape)``. Coordinates outside the
    domain are clamped to the nearest boundary voxel.
    """
    image = np.asarray(image, dtype=np.float64)
    ndim = image.ndim
    lo_idx, hi_idx, frac = [], [], []
    for axis in range(ndim):
        n = image.shape[axis]
        x = np.clip(coords[axis], 0.0, n - 1)
        i0 = np.floor(x).astype(np.intp)
        i0 = np.minimum(i0, n - 1)
        lo_idx.append(i0)
        hi_idx.append(np.minimum(i0 + 1, n - 1))
        frac.append(x - i0)
    out = np.zeros(np.shape(coords)[1:])
    for corner in range(1 << ndim):
        weight = 1.0
        index = []
        for axis in range(ndim):
            if corner >> axis & 1:
                weight = weight * frac[axis]
                index.append(hi_idx[axis])
            else:
                weight = weight * (1.0 - frac[axis])
                index.append(lo_idx[axis])
        out += weight * image[tuple(index)]
    return out


def _identity_coords(shape):
    return np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij"))


def warp(image, u):
    """Evaluate ``image(x + u(x))`` with multilinear interpolation and edge clamping."""
    image = check_field(image, "image")
    u = check_vector_field(u, name="deformation")
    if u.shape[1:] != image.shape:
        raise InvalidArgumentError(
            f"grid mismatch: image={image.shape}, deformation={u.shape[1:]}"
        )
    if not np.any(u):
        return image.copy()
    return interpolate(image, _identity_coords(image.shape) + u)


def image_gradient(image):
    """Centered differences in the interior, one-sided at the boundary."""
    image = check_field(image, "image")
    if min(image.shape) < 2:
        raise InvalidArgumentError(
            f"image_gradient needs at least 2 voxels per axis, got shape {image.shape}"
        )
    return np.stack(
        [np.gradient(image, axis=axis, edge_order=1) for axis in range(image.ndim)]
    )


def upsample_deformation(u, target_shape):
    """Transfer a displacement field to the next finer pyramid level.

    Fine voxel ``j`` samples the coarse field at ``j / 2`` (decimation keeps even
    voxels); displacements are doubled since they are measured in voxels.
    """
    u = check_vector_field(u, name="deformation")
    target_shape = tuple(int(n) for n in target_shape)
    coarse_shape = u.shape[1:]
    if len(target_shape) != len(coarse_shape) or any(
        math.ceil(t / 2) != c for t, c in zip(target_shape, coarse_shape)
    ):
        raise InvalidArgumentError(
            f"cannot upsample grid {coarse_shape} to {target_shape}"
        )
    coords = _identity_coords(target_shape) / 2.0
    return np.stack([2.0 * interpolate(comp, coords) for comp in u])
