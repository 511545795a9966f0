"""Volume and label-map containers, grid geometry and preprocessing.

All voxel arrays are indexed ``[x, y, z]``. Flattening with ``order="F"``
gives the canonical x-fastest layout used on disk.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import LabelNotFoundError
from .interp import sample_linear, sample_nearest


@dataclass(frozen=True)
class Grid:
    dims: tuple
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
            raise ValueError("grid needs three dims, spacings and origin values")
        if min(dims) < 1:
            raise ValueError(f"dims must be >= 1, got {dims}")
        if min(spacing) <= 0 or not np.all(np.isfinite(spacing)):
            raise ValueError(f"spacing must be positive, got {spacing}")
        if not np.all(np.isfinite(origin)):
            raise ValueError("origin must be finite")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def size(self):
        return int(np.prod(self.dims))

    def same_shape(self, other):
        return self.dims == other.dims


def _frozen(arr):
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Volume:
    """Scalar image on a :class:`Grid`; data stored as float32."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.shape != self.grid.dims:
            raise ValueError(f"data shape {data.shape} does not match dims {self.grid.dims}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def from_flat(cls, grid, flat):
        """Build from an x-fastest flat array."""
        return cls(grid, np.asarray(flat).reshape(grid.dims, order="F"))

    def flat(self):
        return self.data.ravel(order="F")


@dataclass(frozen=True)
class LabelVolume:
    """Integer label map; 0 is background."""

    grid: Grid
    data: np.ndarray
    label_ids: tuple = field(init=False)

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.dtype.kind == "f":
            if not np.all(raw == np.round(raw)):
                raise ValueError("label data must be integral")
        data = np.array(raw, dtype=np.int32, copy=True)
        if data.shape != self.grid.dims:
            raise ValueError(f"data shape {data.shape} does not match dims {self.grid.dims}")
        if data.size and data.min() < 0:
            raise ValueError("label values must be non-negative")
        object.__setattr__(self, "data", _frozen(data))
        ids = tuple(int(i) for i in np.unique(data) if i != 0)
        object.__setattr__(self, "label_ids", ids)

    @classmethod
    def from_flat(cls, grid, flat):
        return cls(grid, np.asarray(flat).reshape(grid.dims, order="F"))

    def flat(self):
        return self.data.ravel(order="F")

    def mask(self, label_id):
        if label_id not in self.label_ids:
            raise LabelNotFoundError(f"label {label_id} not present (ids: {self.label_ids})")
        return self.data == label_id

    def foreground(self):
        return self.data != 0


def _like(v, grid, data):
    return type(v)(grid, data)


def crop(v, lo, hi):
    """Sub-block ``[lo, hi)`` of a Volume or LabelVolume; origin follows the block."""
    lo = tuple(int(a) for a in lo)
    hi = tuple(int(b) for b in hi)
    dims = v.grid.dims
    for a, b, n in zip(lo, hi, dims):
        if not 0 <= a < b <= n:
            raise ValueError(f"invalid crop box {lo}-{hi} for dims {dims}")
    sp = v.grid.spacing
    origin = tuple(o + a * s for o, a, s in zip(v.grid.origin, lo, sp))
    grid = Grid(tuple(b - a for a, b in zip(lo, hi)), sp, origin)
    data = v.data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    return _like(v, grid, data)


def mask_bounding_box(mask, margin=0):
    """Tightest ``(lo, hi)`` box around a boolean mask, dilated and clamped."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask is empty")
    lo, hi = [], []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        hit = np.flatnonzero(mask.any(axis=other))
        lo.append(max(int(hit[0]) - margin, 0))
        hi.append(min(int(hit[-1]) + 1 + margin, mask.shape[axis]))
    return tuple(lo), tuple(hi)


def label_bounding_box(labels, label_id, margin=0):
    return mask_bounding_box(labels.mask(label_id), margin)


def _resize_coords(dims, target_dims):
    axes = []
    for n_in, n_out in zip(dims, target_dims):
        i = np.arange(n_out, dtype=np.float64)
        if n_in == n_out:
            axes.append(i)
        else:
            # voxel-centre alignment keeps the physical extent fixed
            axes.append((i + 0.5) * (n_in / n_out) - 0.5)
    return np.meshgrid(*axes, indexing="ij")


def _resized_grid(grid, target_dims):
    spacing = tuple(s * n / m for s, n, m in zip(grid.spacing, grid.dims, target_dims))
    origin = tuple(o - s / 2 + t / 2 for o, s, t in zip(grid.origin, grid.spacing, spacing))
    return Grid(target_dims, spacing, origin)


def _check_target(target_dims):
    target_dims = tuple(int(t) for t in target_dims)
    if len(target_dims) != 3 or min(target_dims) < 1:
        raise ValueError(f"target dims must be three positive integers, got {target_dims}")
    return target_dims


def resize_trilinear(v, target_dims):
    target_dims = _check_target(target_dims)
    if isinstance(v, LabelVolume):
        raise TypeError("use resize_nearest for label volumes")
    coords = _resize_coords(v.grid.dims, target_dims)
    data = sample_linear(v.data.astype(np.float64), coords)
    return Volume(_resized_grid(v.grid, target_dims), data)


def resize_nearest(labels, target_dims):
    target_dims = _check_target(target_dims)
    coords = _resize_coords(labels.grid.dims, target_dims)
    data = sample_nearest(labels.data, coords)
    return LabelVolume(_resized_grid(labels.grid, target_dims), data)


def normalize_minmax(v):
    """Rescale intensities to [0, 1]; a constant volume maps to zeros."""
    d = v.data.astype(np.float64)
    lo, hi = d.min(), d.max()
    if hi == lo:
        return Volume(v.grid, np.zeros_like(d))
    return Volume(v.grid, (d - lo) / (hi - lo))
