"""Synthetic articulated phantom with known per-vertebra rigid motion.

The fixed image holds ``n_vertebrae`` notched boxes stacked along y inside
a soft-tissue background dotted with small blobs. The ground-truth field
``u`` lives on the fixed grid: inside vertebra ``i`` it is that vertebra's
rigid displacement. Outside bone the background part blends, over a
three-voxel band, from the nearest vertebra's rigid displacement to a
sinusoidal field, so tissue next to a vertebra travels with it and the map
stays one-to-one. The moving image is generated so that
``moving(x + u(x)) == fixed(x)`` up to the intensity remaps, noise and the
partial-volume rendering of moved bone edges.
"""

from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .fields import DisplacementField, RigidParams, fuse_hybrid
from ._kernels import invert_displacement
from .interp import identity_coords
from .volume import Grid, LabelVolume, Volume

TISSUE, BLOB, BONE = 0.3, 0.55, 1.0
BLEND_BAND = 3.0
BLOB_SPACING = 8
BLOB_RADIUS = 1.5
BLOB_CLEARANCE = 6
MIN_MOVED_GAP = 3.0
INVERSE_ITERS = 100


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (64, 64, 48)
    n_vertebrae: int = 4
    vertebra_size: tuple = (16, 7, 12)
    gap: int = 8
    max_rot_deg: float = 5.0
    max_trans_vox: float = 1.5
    bg_field_amp_vox: float = 1.0
    bg_field_period_vox: float = 32.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "vertebra_size", tuple(int(s) for s in self.vertebra_size))
        if self.max_rot_deg > 15 or self.max_rot_deg < 0:
            raise ValueError("max_rot_deg must lie in [0, 15]")
        if self.max_trans_vox < 0 or self.bg_field_amp_vox < 0 or self.noise_sigma < 0:
            raise ValueError("motion amplitudes and noise must be non-negative")
        if self.n_vertebrae < 1:
            raise ValueError("need at least one vertebra")
        sx, sy, sz = self.vertebra_size
        nx, ny, nz = self.dims
        stack = self.n_vertebrae * sy + (self.n_vertebrae - 1) * self.gap
        room = int(np.ceil(self.max_trans_vox)) + 2
        if stack + 2 * room > ny or sx + 2 * room > nx or sz + 2 * room > nz:
            raise ValueError(f"{self.n_vertebrae} vertebrae of size {self.vertebra_size} "
                             f"with gap {self.gap} do not fit in {self.dims}")


@dataclass(frozen=True)
class PhantomPair:
    fixed: Volume
    moving: Volume
    fixed_labels: LabelVolume
    moving_labels: LabelVolume
    gt_rigids: list
    gt_bg_field: DisplacementField
    spec: PhantomSpec = field(default=None, repr=False)


def _boxes(spec):
    """Per-vertebra (lo, hi) boxes and notch boxes, voxel index bounds."""
    sx, sy, sz = spec.vertebra_size
    nx, ny, nz = spec.dims
    stack = spec.n_vertebrae * sy + (spec.n_vertebrae - 1) * spec.gap
    y0 = (ny - stack) // 2
    x0 = (nx - sx) // 2
    z0 = (nz - sz) // 2
    notch_w = max(sx // 3, 1)
    notch_d = max(sz // 3, 1)
    boxes, notches = [], []
    for i in range(spec.n_vertebrae):
        ys = y0 + i * (sy + spec.gap)
        boxes.append(((x0, ys, z0), (x0 + sx, ys + sy, z0 + sz)))
        nxlo = x0 + (sx - notch_w) // 2
        notches.append(((nxlo, ys, z0 + sz - notch_d), (nxlo + notch_w, ys + sy, z0 + sz)))
    return boxes, notches


def _inside(points, box):
    """Continuous containment matching index containment at voxel centres."""
    lo, hi = box
    ok = np.ones(points.shape[:-1], dtype=bool)
    for a in range(3):
        ok &= (points[..., a] >= lo[a] - 0.5) & (points[..., a] < hi[a] - 0.5)
    return ok


def _in_vertebra(points, box, notch):
    return _inside(points, box) & ~_inside(points, notch)


def _box_sdf(points, box):
    lo, hi = (np.asarray(b, dtype=np.float64) for b in box)
    q = np.abs(points - (lo + hi - 1.0) / 2.0) - (hi - lo) / 2.0
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    return outside + np.minimum(q.max(axis=-1), 0.0)


def _bone_fraction(points, boxes, notches):
    """Partial-volume bone occupancy from a one-voxel ramp across the surface.

    Box faces sit on voxel faces, so unmoved vertebrae rasterise to exactly
    0 or 1; moved ones get fractional edges that encode sub-voxel position.
    """
    sd = np.full(points.shape[:-1], np.inf)
    for box, notch in zip(boxes, notches):
        sd = np.minimum(sd, np.maximum(_box_sdf(points, box), -_box_sdf(points, notch)))
    return np.clip(0.5 - sd, 0.0, 1.0)


def _blob_centres(spec, boxes):
    centres = []
    off = BLOB_SPACING // 2
    for c in product(*(range(off, n - 2, BLOB_SPACING) for n in spec.dims)):
        c = np.array(c, dtype=np.float64)
        near = False
        for lo, hi in boxes:
            gap = max(max(lo[a] - c[a], c[a] - (hi[a] - 1), 0.0) for a in range(3))
            if gap < BLOB_CLEARANCE:
                near = True
                break
        if not near:
            centres.append(c)
    return np.array(centres).reshape(-1, 3)


def _tissue(points, centres):
    """Soft-tissue intensity at continuous points: constant level plus blobs."""
    out = np.full(points.shape[:-1], TISSUE)
    if len(centres):
        dist, _ = cKDTree(centres).query(points.reshape(-1, 3), distance_upper_bound=BLOB_RADIUS + 1e-9)
        out[np.isfinite(dist).reshape(out.shape)] = BLOB
    return out


def _sinusoid(spec, rng, coords):
    amp, period = spec.bg_field_amp_vox, spec.bg_field_period_vox
    phases = rng.uniform(0, 2 * np.pi, size=(3, 2))
    k = 2 * np.pi / period
    comps = []
    for c in range(3):
        a, b = (c + 1) % 3, (c + 2) % 3
        comps.append(amp * np.sin(k * coords[a] + phases[c, 0]) * np.cos(k * coords[b] + phases[c, 1]))
    return np.stack(comps)


def _background(labels, rigids, sinus, x):
    """Zero on bone; nearest vertebra's rigid motion fading into ``sinus``."""
    fg = labels > 0
    dist, idx = ndimage.distance_transform_edt(~fg, return_indices=True)
    nearest = labels[idx[0], idx[1], idx[2]]
    carried = np.zeros_like(sinus)
    for i, p in enumerate(rigids, start=1):
        sel = (nearest == i) & ~fg
        carried[:, sel] = (p.apply(x[sel]) - x[sel]).T
    s = np.clip(dist / BLEND_BAND, 0.0, 1.0)
    w = s * s * (3.0 - 2.0 * s)
    return np.where(fg, 0.0, w * sinus + (1.0 - w) * carried)


def _sample_rigids(spec, rng, boxes, centroids):
    max_rot = np.radians(spec.max_rot_deg)
    for _ in range(200):
        rigids = []
        for c in centroids:
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            angle = rng.uniform(-max_rot, max_rot)
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            radius = spec.max_trans_vox * rng.uniform() ** (1.0 / 3.0)
            rigids.append(RigidParams(axis * angle, direction * radius, c))
        if _motion_ok(spec, rigids, boxes):
            return rigids
    raise ValueError("could not sample vertebra motions that keep the vertebrae apart")


def _corners(box):
    lo, hi = box
    return np.array([[x, y, z] for x in (lo[0] - 0.5, hi[0] - 0.5)
                     for y in (lo[1] - 0.5, hi[1] - 0.5)
                     for z in (lo[2] - 0.5, hi[2] - 0.5)])


def _motion_ok(spec, rigids, boxes):
    """Moved vertebrae stay inside the grid and keep a gap along the stack axis."""
    extents = []
    for p, box in zip(rigids, boxes):
        # the moving-frame vertebra is the forward image of the fixed one
        pts = p.apply(_corners(box))
        if np.any(pts.min(axis=0) < 1.0) or np.any(pts.max(axis=0) > np.array(spec.dims) - 2.0):
            return False
        extents.append((pts[:, 1].min(), pts[:, 1].max()))
    for (_, top), (bottom, _) in zip(extents, extents[1:]):
        if bottom - top < MIN_MOVED_GAP:
            return False
    return True


def _remap_fixed(img):
    return 0.9 * img + 0.05


def _remap_moving(img):
    return np.log1p(9.0 * img) / np.log(10.0)


def make_phantom(spec=PhantomSpec()):
    rng = np.random.default_rng(spec.seed)
    grid = Grid(spec.dims)
    boxes, notches = _boxes(spec)
    x = np.stack(identity_coords(spec.dims), axis=-1)

    labels = np.zeros(spec.dims, dtype=np.int32)
    for i, (box, notch) in enumerate(zip(boxes, notches), start=1):
        labels[_in_vertebra(x, box, notch)] = i
    centroids = [np.argwhere(labels == i).mean(axis=0) for i in range(1, spec.n_vertebrae + 1)]
    centres = _blob_centres(spec, boxes)

    if spec.max_rot_deg == 0 and spec.max_trans_vox == 0:
        rigids = [RigidParams((0, 0, 0), (0, 0, 0), c) for c in centroids]
    else:
        rigids = _sample_rigids(spec, rng, boxes, centroids)

    sinus = np.zeros((3, *spec.dims))
    if spec.bg_field_amp_vox > 0:
        sinus = _sinusoid(spec, rng, np.moveaxis(x, -1, 0))
    bg = _background(labels, rigids, sinus, x)
    bg_field = DisplacementField(grid, bg)

    frac = _bone_fraction(x, boxes, notches)
    anatomy = frac * BONE + (1.0 - frac) * _tissue(x, centres)

    total = bg.copy()
    for i, p in enumerate(rigids, start=1):
        sel = labels == i
        total[:, sel] = (p.apply(x[sel]) - x[sel]).T
    if np.any(total):
        pre = invert_displacement(total[0], total[1], total[2], INVERSE_ITERS, 1e-9)
    else:
        pre = x
    # bone and moving labels come from the exact rigid inverse of each
    # vertebra, tissue from the preimage under the blended field
    frac = np.zeros(spec.dims)
    moving_labels = np.zeros(spec.dims, dtype=np.int32)
    for i, (p, box, notch) in enumerate(zip(rigids, boxes, notches), start=1):
        src = p.inverse_apply(x.reshape(-1, 3)).reshape(x.shape)
        frac = np.maximum(frac, _bone_fraction(src, [box], [notch]))
        hit = _in_vertebra(src, box, notch) & (moving_labels == 0)
        moving_labels[hit] = i
    moving_anatomy = frac * BONE + (1.0 - frac) * _tissue(pre, centres)

    fixed_img = _remap_fixed(anatomy)
    moving_img = _remap_moving(moving_anatomy)
    if spec.noise_sigma > 0:
        fixed_img = fixed_img + rng.normal(0, spec.noise_sigma, spec.dims)
        moving_img = moving_img + rng.normal(0, spec.noise_sigma, spec.dims)

    return PhantomPair(
        fixed=Volume(grid, fixed_img),
        moving=Volume(grid, moving_img),
        fixed_labels=LabelVolume(grid, labels),
        moving_labels=LabelVolume(grid, moving_labels),
        gt_rigids=rigids,
        gt_bg_field=bg_field,
        spec=spec,
    )


def gt_rigid_field(pair):
    from .rigid import PerLabelRigid, build_rigid_field

    estimates = [PerLabelRigid(i, p, 0.0, 0) for i, p in enumerate(pair.gt_rigids, start=1)]
    return build_rigid_field(estimates, pair.fixed_labels)


def gt_hybrid_field(pair):
    return fuse_hybrid(pair.gt_bg_field, gt_rigid_field(pair))


def quiet(spec):
    """Same geometry with all motion and noise switched off."""
    return replace(spec, max_rot_deg=0.0, max_trans_vox=0.0, bg_field_amp_vox=0.0, noise_sigma=0.0)
