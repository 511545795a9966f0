"""MIND self-similarity descriptors and the registration loss terms."""

from dataclasses import dataclass
from itertools import product

import numpy as np

from .fields import DisplacementField
from .interp import unwrap
from .volume import Grid

SIX_NEIGHBOURHOOD = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
DEFAULT_LAMBDA = 0.2


@dataclass(frozen=True)
class DescriptorVolume:
    """Per-voxel descriptor channels, array shape ``(nx, ny, nz, K)``."""

    grid: object
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 4 or data.shape[:3] != self.grid.dims:
            raise ValueError(f"descriptor shape {data.shape} does not match grid {self.grid.dims}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def k(self):
        return self.data.shape[3]

    def channel(self, i):
        return self.data[..., i]


@dataclass(frozen=True)
class LossWeights:
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ValueError(f"lambda must be a non-negative number, got {self.lam}")


def gaussian_patch_weights(radius, sigma):
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    w = g[:, None, None] * g[None, :, None] * g[None, None, :]
    return w / w.sum()


def patch_distances(img, offsets=SIX_NEIGHBOURHOOD, patch_radius=1, sigma=0.5):
    """Gaussian-weighted patch SSD between ``x`` and ``x + o`` for each offset.

    The image is extended by edge replication. Returns ``(nx, ny, nz, K)``.
    """
    img = np.asarray(img, dtype=np.float64)
    reach = patch_radius + max(max(abs(c) for c in o) for o in offsets)
    padded = np.pad(img, reach, mode="edge")
    nx, ny, nz = img.shape
    w = gaussian_patch_weights(patch_radius, sigma)
    out = np.zeros((nx, ny, nz, len(offsets)))
    span = [n + 2 * patch_radius for n in (nx, ny, nz)]
    s = reach - patch_radius
    base_a = padded[s:s + span[0], s:s + span[1], s:s + span[2]]
    for k, o in enumerate(offsets):
        base_b = padded[s + o[0]:s + o[0] + span[0],
                        s + o[1]:s + o[1] + span[1],
                        s + o[2]:s + o[2] + span[2]]
        diff2 = (base_a - base_b) ** 2
        acc = np.zeros((nx, ny, nz))
        for px, py, pz in product(range(2 * patch_radius + 1), repeat=3):
            acc += w[px, py, pz] * diff2[px:px + nx, py:py + ny, pz:pz + nz]
        out[..., k] = acc
    return out


def mind_descriptor(v, patch_radius=1, neighbourhood=SIX_NEIGHBOURHOOD, sigma=0.5):
    """MIND descriptor of a scalar volume, values in (0, 1], max channel 1.

    ``v`` may also be a plain 3D array (unit-spacing grid); float64 arrays
    skip the float32 rounding a :class:`Volume` applies.
    """
    grid = v.grid if hasattr(v, "grid") else Grid(np.shape(v))
    need = 2 * patch_radius + 3
    if min(grid.dims) < need:
        raise ValueError(f"volume dims {grid.dims} too small; need >= {need} per axis")
    d = patch_distances(unwrap(v), neighbourhood, patch_radius, sigma)
    var = d.mean(axis=-1)
    floor = max(1e-6 * var.mean(), np.finfo(np.float64).tiny)
    var = np.maximum(var, floor)
    desc = np.exp(-d / var[..., None])
    desc /= desc.max(axis=-1, keepdims=True)
    return DescriptorVolume(grid, desc)


def _check_desc(a, b):
    if a.data.shape != b.data.shape:
        raise ValueError(f"descriptor shape mismatch: {a.data.shape} vs {b.data.shape}")


def mind_ssd(d_fixed, d_moving_warped, fg_mask=None):
    """Mean squared descriptor difference over (masked) voxels and channels."""
    fixed = unwrap(d_fixed)
    moving = unwrap(d_moving_warped)
    if fixed.shape != moving.shape:
        raise ValueError(f"descriptor shape mismatch: {fixed.shape} vs {moving.shape}")
    diff2 = (np.asarray(moving, dtype=np.float64) - fixed) ** 2
    if fg_mask is None:
        return float(diff2.mean())
    mask = np.asarray(fg_mask, dtype=bool)
    if mask.shape != fixed.shape[:3]:
        raise ValueError("mask shape does not match descriptor grid")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("similarity mask is empty")
    return float(diff2[mask].sum() / (n * fixed.shape[3]))


def _field_array(f):
    return f.data if isinstance(f, DisplacementField) else np.asarray(f, dtype=np.float64)


def smoothness_penalty(f):
    """Mean squared forward-difference gradient of a displacement field.

    For each axis the squared differences are summed over the three channels
    and averaged over the valid positions; the three axis terms are then
    averaged. A ramp ``u_x = x`` therefore scores exactly 1/3.
    """
    u = _field_array(f)
    if min(u.shape[1:]) < 2:
        raise ValueError("smoothness needs >= 2 voxels per axis")
    total = 0.0
    for axis in (1, 2, 3):
        d = np.diff(u, axis=axis)
        total += float((d ** 2).sum() / d[0].size)
    return total / 3.0


def smoothness_gradient(u):
    """Gradient of :func:`smoothness_penalty` with respect to the field array."""
    u = np.asarray(u, dtype=np.float64)
    grad = np.zeros_like(u)
    for axis in (1, 2, 3):
        d = np.diff(u, axis=axis)
        scale = 2.0 / (3.0 * d[0].size)
        # adjoint of the forward difference
        pad = [(0, 0)] * 4
        pad[axis] = (1, 1)
        dp = np.pad(d, pad)
        grad += scale * -np.diff(dp, axis=axis)
    return grad


def total_loss(sim, smooth, w=LossWeights()):
    return float(sim) + float(w.lam) * float(smooth)
