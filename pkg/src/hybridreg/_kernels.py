"""Compiled inner loops for the descriptor similarity and its gradient."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _axis(c, n):
    # clamp, cell index, fraction, in-range flag; matches interp._prepare
    inside = 1.0 if (c >= 0.0 and c <= n - 1) else 0.0
    if n == 1:
        return 0, 0.0, inside
    if c < 0.0:
        c = 0.0
    elif c > n - 1:
        c = n - 1.0
    i0 = int(c)
    if i0 > n - 2:
        i0 = n - 2
    return i0, c - i0, inside


@njit(cache=True, nogil=True)
def warped_ssd(moving, fixed, ux, uy, uz, with_grad):
    """Sum of squared descriptor residuals after warping ``moving`` by ``u``.

    Returns ``(ssd_sum, gx, gy, gz)`` where ``g*`` hold d(ssd_sum)/du per voxel
    (zeros when ``with_grad`` is False).
    """
    nx, ny, nz, k = moving.shape
    gx = np.zeros((nx, ny, nz))
    gy = np.zeros((nx, ny, nz))
    gz = np.zeros((nx, ny, nz))
    total = 0.0
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                i, fx, mx = _axis(x + ux[x, y, z], nx)
                j, fy, my = _axis(y + uy[x, y, z], ny)
                l, fz, mz = _axis(z + uz[x, y, z], nz)
                i1 = i + 1 if nx > 1 else i
                j1 = j + 1 if ny > 1 else j
                l1 = l + 1 if nz > 1 else l
                ax = 0.0
                ay = 0.0
                az = 0.0
                for c in range(k):
                    c000 = moving[i, j, l, c]
                    c100 = moving[i1, j, l, c]
                    c010 = moving[i, j1, l, c]
                    c110 = moving[i1, j1, l, c]
                    c001 = moving[i, j, l1, c]
                    c101 = moving[i1, j, l1, c]
                    c011 = moving[i, j1, l1, c]
                    c111 = moving[i1, j1, l1, c]
                    e00 = c000 + (c100 - c000) * fx
                    e10 = c010 + (c110 - c010) * fx
                    e01 = c001 + (c101 - c001) * fx
                    e11 = c011 + (c111 - c011) * fx
                    f0 = e00 + (e10 - e00) * fy
                    f1 = e01 + (e11 - e01) * fy
                    r = f0 + (f1 - f0) * fz - fixed[x, y, z, c]
                    total += r * r
                    if with_grad:
                        dz = f1 - f0
                        dy = (e10 - e00) * (1.0 - fz) + (e11 - e01) * fz
                        dx = (((c100 - c000) * (1.0 - fy) + (c110 - c010) * fy) * (1.0 - fz)
                              + ((c101 - c001) * (1.0 - fy) + (c111 - c011) * fy) * fz)
                        ax += 2.0 * r * dx
                        ay += 2.0 * r * dy
                        az += 2.0 * r * dz
                if with_grad:
                    gx[x, y, z] = ax * mx
                    gy[x, y, z] = ay * my
                    gz[x, y, z] = az * mz
    return total, gx, gy, gz


@njit(cache=True, nogil=True)
def _trilinear(a, px, py, pz):
    nx, ny, nz = a.shape
    i, fx, _ = _axis(px, nx)
    j, fy, _ = _axis(py, ny)
    l, fz, _ = _axis(pz, nz)
    i1 = i + 1 if nx > 1 else i
    j1 = j + 1 if ny > 1 else j
    l1 = l + 1 if nz > 1 else l
    e00 = a[i, j, l] + (a[i1, j, l] - a[i, j, l]) * fx
    e10 = a[i, j1, l] + (a[i1, j1, l] - a[i, j1, l]) * fx
    e01 = a[i, j, l1] + (a[i1, j, l1] - a[i, j, l1]) * fx
    e11 = a[i, j1, l1] + (a[i1, j1, l1] - a[i, j1, l1]) * fx
    f0 = e00 + (e10 - e00) * fy
    f1 = e01 + (e11 - e01) * fy
    return f0 + (f1 - f0) * fz


@njit(cache=True, nogil=True)
def invert_displacement(ux, uy, uz, max_iters, tol):
    """Preimages ``p`` with ``p + u(p) = y`` for every voxel ``y``, shape (nx, ny, nz, 3).

    Fixed-point iteration ``p <- y - u(p)`` per voxel, stopped once the
    update falls below ``tol``.
    """
    nx, ny, nz = ux.shape
    out = np.empty((nx, ny, nz, 3))
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                px, py, pz = float(x), float(y), float(z)
                for _ in range(max_iters):
                    qx = x - _trilinear(ux, px, py, pz)
                    qy = y - _trilinear(uy, px, py, pz)
                    qz = z - _trilinear(uz, px, py, pz)
                    step = abs(qx - px) + abs(qy - py) + abs(qz - pz)
                    px, py, pz = qx, qy, qz
                    if step < tol:
                        break
                out[x, y, z, 0] = px
                out[x, y, z, 1] = py
                out[x, y, z, 2] = pz
    return out
