"""Spatial transformer: resample volumes at ``x + u(x)``."""

import numpy as np

from .interp import identity_coords, sample_linear, sample_nearest
from .volume import LabelVolume, Volume


def _coords(f, dims):
    if f.grid.dims != dims:
        raise ValueError(f"grid mismatch: volume {dims} vs field {f.grid.dims}")
    x = identity_coords(dims)
    return [x[a] + f.data[a] for a in range(3)]


def warp_array(arr, f):
    """Trilinear warp of a raw ``[x, y, z(, k)]`` array; returns float64."""
    return sample_linear(np.asarray(arr, dtype=np.float64), _coords(f, arr.shape[:3]))


def warp_scalar(v, f):
    return Volume(v.grid, warp_array(v.data, f))


def warp_labels(labels, f):
    return LabelVolume(labels.grid, sample_nearest(labels.data, _coords(f, labels.grid.dims)))


def affine_resample(v, matrix, offset):
    """Sample ``v`` at ``matrix @ x + offset`` for every voxel ``x``."""
    x = np.stack(identity_coords(v.grid.dims))
    y = np.einsum("ij,j...->i...", np.asarray(matrix, dtype=np.float64), x)
    y += np.asarray(offset, dtype=np.float64)[:, None, None, None]
    return Volume(v.grid, sample_linear(v.data.astype(np.float64), list(y)))
