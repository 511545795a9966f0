"""Clamped trilinear and nearest-neighbour sampling on voxel grids.

Arrays are indexed ``[x, y, z]`` with optional trailing channel axis.
Sample coordinates are voxel indices and are clamped to the grid before
interpolation, so out-of-bounds samples repeat the edge value.
"""

import numpy as np


def unwrap(x):
    """Array behind a Volume-like container; plain arrays pass through.

    ``ndarray.data`` is the raw buffer, so ``getattr(x, "data", x)`` is wrong
    for arrays.
    """
    return x if isinstance(x, np.ndarray) else getattr(x, "data", x)


def _prepare(shape, coords):
    """Flat base index, per-axis strides, fractions and in-range masks."""
    nx, ny, nz = shape[:3]
    strides = (ny * nz, nz, 1)
    base = 0
    fracs, inside, steps = [], [], []
    for axis, n in enumerate((nx, ny, nz)):
        c = np.asarray(coords[axis], dtype=np.float64)
        inside.append((c >= 0.0) & (c <= n - 1))
        if n == 1:
            i0 = np.zeros(c.shape, dtype=np.intp)
            f = np.zeros_like(c)
            steps.append(0)
        else:
            cc = np.clip(c, 0.0, n - 1)
            i0 = np.minimum(cc.astype(np.intp), n - 2)
            f = cc - i0
            steps.append(strides[axis])
        base = base + i0 * strides[axis]
        fracs.append(f)
    return base, steps, fracs, inside


def _gather(arr, base, steps):
    k = arr.shape[3] if arr.ndim == 4 else None
    flat = arr.reshape(-1, k) if k else arr.reshape(-1)
    sx, sy, sz = steps
    take = lambda off: np.take(flat, base + off, axis=0)
    return (take(0), take(sx), take(sy), take(sx + sy),
            take(sz), take(sx + sz), take(sy + sz), take(sx + sy + sz))


def sample_linear(arr, coords):
    """Sample ``arr`` at voxel coordinates ``coords = (cx, cy, cz)``.

    Returns an array shaped like ``cx`` (plus the channel axis if present).
    """
    val, _ = _sample(arr, coords, with_grad=False)
    return val


def sample_linear_with_grad(arr, coords):
    """Trilinear sample plus its derivative with respect to each coordinate.

    The derivative along an axis is zero where that coordinate was clamped.
    Returns ``(values, (dx, dy, dz))``.
    """
    return _sample(arr, coords, with_grad=True)


def _sample(arr, coords, with_grad):
    base, steps, (fx, fy, fz), (mx, my, mz) = _prepare(arr.shape, coords)
    c000, c100, c010, c110, c001, c101, c011, c111 = _gather(arr, base, steps)
    if arr.ndim == 4:
        fx, fy, fz = fx[..., None], fy[..., None], fz[..., None]
        mx, my, mz = mx[..., None], my[..., None], mz[..., None]
    # interpolate along x first, then reuse the partial results
    e00 = c000 + (c100 - c000) * fx
    e10 = c010 + (c110 - c010) * fx
    e01 = c001 + (c101 - c001) * fx
    e11 = c011 + (c111 - c011) * fx
    f0 = e00 + (e10 - e00) * fy
    f1 = e01 + (e11 - e01) * fy
    val = f0 + (f1 - f0) * fz
    if not with_grad:
        return val, None
    gy, gz = 1.0 - fy, 1.0 - fz
    dz = (f1 - f0) * mz
    dy = ((e10 - e00) * gz + (e11 - e01) * fz) * my
    dx = (((c100 - c000) * gy + (c110 - c010) * fy) * gz
          + ((c101 - c001) * gy + (c111 - c011) * fy) * fz) * mx
    return val, (dx, dy, dz)


def sample_nearest(arr, coords):
    """Nearest-neighbour sample with round-half-up on every axis."""
    idx = []
    for axis in range(3):
        c = np.asarray(coords[axis], dtype=np.float64)
        i = np.floor(c + 0.5).astype(np.intp)
        idx.append(np.clip(i, 0, arr.shape[axis] - 1))
    return arr[idx[0], idx[1], idx[2]]


def identity_coords(dims):
    """Voxel index grids for ``dims`` as float64 arrays indexed [x, y, z]."""
    return np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij")
