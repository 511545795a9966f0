"""Displacement fields, rigid parameterisation and field algebra.

Displacements are stored in voxel units of the fixed grid as a float64
array of shape ``(3, nx, ny, nz)``; the transform is ``x -> x + u(x)``.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .interp import identity_coords, sample_linear
from .volume import Grid, LabelVolume, Volume


def _vec3(v, name):
    a = np.asarray(v, dtype=np.float64).reshape(-1)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be three finite values")
    return tuple(float(x) for x in a)


def canonical_rotvec(r):
    """Map an axis-angle vector to the equivalent one with angle in [0, pi]."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r)
    if theta <= np.pi:
        return r
    axis = r / theta
    theta = np.mod(theta + np.pi, 2 * np.pi) - np.pi
    if theta < 0:
        axis, theta = -axis, -theta
    return axis * theta


@dataclass(frozen=True)
class RigidParams:
    """Rotation vector ``r`` (radians), translation ``t`` and rotation ``center``.

    Translation and center are in voxels of the fixed grid. The transform is
    ``x -> R (x - center) + center + t``.
    """

    r: tuple = (0.0, 0.0, 0.0)
    t: tuple = (0.0, 0.0, 0.0)
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        r = _vec3(self.r, "r")
        object.__setattr__(self, "r", tuple(float(x) for x in canonical_rotvec(r)))
        object.__setattr__(self, "t", _vec3(self.t, "t"))
        object.__setattr__(self, "center", _vec3(self.center, "center"))

    @property
    def angle_deg(self):
        return float(np.degrees(np.linalg.norm(self.r)))

    def matrix(self):
        return rotvec_to_matrix(self.r)

    def apply(self, points):
        """Map an ``(..., 3)`` array of voxel coordinates."""
        p = np.asarray(points, dtype=np.float64)
        c = np.asarray(self.center)
        return (p - c) @ self.matrix().T + c + np.asarray(self.t)

    def inverse_apply(self, points):
        p = np.asarray(points, dtype=np.float64)
        c = np.asarray(self.center)
        return (p - c - np.asarray(self.t)) @ self.matrix() + c

    def to_dict(self):
        return {"r_deg": [float(np.degrees(x)) for x in self.r], "t_vox": list(self.t),
                "center_vox": list(self.center), "angle_deg": self.angle_deg}


@dataclass(frozen=True)
class DisplacementField:
    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.shape != (3, *self.grid.dims):
            raise ValueError(f"field shape {data.shape} does not match (3, {self.grid.dims})")
        if not np.all(np.isfinite(data)):
            raise ValueError("displacement field contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((3, *grid.dims)))

    @property
    def ux(self):
        return self.data[0]

    @property
    def uy(self):
        return self.data[1]

    @property
    def uz(self):
        return self.data[2]

    def magnitude(self):
        return np.sqrt(np.sum(self.data ** 2, axis=0))

    def to_mm(self):
        """Displacements scaled by voxel spacing, shape ``(3, nx, ny, nz)``."""
        return self.data * np.asarray(self.grid.spacing)[:, None, None, None]


def _check_grids(*fields):
    dims = fields[0].grid.dims
    for f in fields[1:]:
        if f.grid.dims != dims:
            raise ValueError(f"grid mismatch: {f.grid.dims} vs {dims}")


def rotvec_to_matrix(r):
    """Rodrigues map from an axis-angle vector to a rotation matrix."""
    r = np.asarray(r, dtype=np.float64)
    theta2 = float(r @ r)
    theta = np.sqrt(theta2)
    k = np.array([[0.0, -r[2], r[1]],
                  [r[2], 0.0, -r[0]],
                  [-r[1], r[0], 0.0]])
    if theta < 1e-6:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * k + b * (k @ k)


def rigid_to_displacement(p, grid):
    x = np.stack(identity_coords(grid.dims))
    rot = p.matrix()
    c = np.asarray(p.center)[:, None, None, None]
    t = np.asarray(p.t)[:, None, None, None]
    rel = x - c
    moved = np.einsum("ij,j...->i...", rot, rel) + c + t
    return DisplacementField(grid, moved - x)


def mask_field(f, mask):
    if isinstance(mask, (LabelVolume, Volume)):
        mask = mask.data
    mask = np.asarray(mask)
    if mask.shape != f.grid.dims:
        raise ValueError(f"mask shape {mask.shape} does not match field dims {f.grid.dims}")
    return DisplacementField(f.grid, f.data * (mask != 0))


def sum_fields(fields):
    fields = list(fields)
    if not fields:
        raise ValueError("sum_fields needs at least one field")
    _check_grids(*fields)
    total = np.zeros_like(fields[0].data)
    for f in fields:
        total = total + f.data
    return DisplacementField(fields[0].grid, total)


def fuse_hybrid(def_field, rigid_field):
    """Additive fusion of the deformable and rigid displacement fields."""
    _check_grids(def_field, rigid_field)
    return DisplacementField(def_field.grid, def_field.data + rigid_field.data)


def jacobian_det_array(data):
    """Determinant of ``I + du/dx`` for a ``(3, nx, ny, nz)`` displacement array."""
    if min(data.shape[1:]) < 2:
        raise ValueError(f"jacobian needs >= 2 voxels per axis, got {data.shape[1:]}")
    # g[c][a] = d u_c / d x_a
    g = [np.gradient(data[c], axis=(0, 1, 2)) for c in range(3)]
    j00, j01, j02 = 1.0 + g[0][0], g[0][1], g[0][2]
    j10, j11, j12 = g[1][0], 1.0 + g[1][1], g[1][2]
    j20, j21, j22 = g[2][0], g[2][1], 1.0 + g[2][2]
    return (j00 * (j11 * j22 - j12 * j21)
            - j01 * (j10 * j22 - j12 * j20)
            + j02 * (j10 * j21 - j11 * j20))


def jacobian_determinant(f):
    return Volume(f.grid, jacobian_det_array(f.data))


def compose_fields(outer, inner):
    """Displacement of ``outer o inner``: ``inner(x) + outer(x + inner(x))``."""
    _check_grids(outer, inner)
    x = identity_coords(inner.grid.dims)
    coords = [x[a] + inner.data[a] for a in range(3)]
    stacked = np.moveaxis(outer.data, 0, -1)
    sampled = np.moveaxis(sample_linear(stacked, coords), -1, 0)
    return DisplacementField(inner.grid, inner.data + sampled)


def compose_rigid(p, inner):
    """Exact composition of a rigid transform applied after ``inner``."""
    x = np.stack(identity_coords(inner.grid.dims))
    y = x + inner.data
    c = np.asarray(p.center)[:, None, None, None]
    t = np.asarray(p.t)[:, None, None, None]
    moved = np.einsum("ij,j...->i...", p.matrix(), y - c) + c + t
    return DisplacementField(inner.grid, moved - x)


def check_disjoint(masks):
    """Warn when boolean masks overlap; overlapping contributions still add."""
    count = np.zeros(np.shape(masks[0]), dtype=np.int32)
    for m in masks:
        count += np.asarray(m, dtype=bool)
    overlap = int((count > 1).sum())
    if overlap:
        warnings.warn(f"{overlap} voxels belong to more than one mask; rigid fields will add there",
                      stacklevel=2)
    return overlap == 0
