"""Per-vertebra rigid estimation and masked rigid field assembly.

Each label gets its own 6-DOF transform (rotation vector + translation about
the label centroid), estimated by deterministic coordinate descent on the
masked descriptor SSD. The per-label displacement fields are masked to their
label and summed into one rigid field.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .exceptions import DegenerateInputError
from .fields import (DisplacementField, RigidParams, check_disjoint, mask_field,
                     rigid_to_displacement, rotvec_to_matrix, sum_fields)
from .interp import sample_linear, unwrap
from .mind import mind_descriptor
from .volume import LabelVolume, mask_bounding_box

log = logging.getLogger(__name__)

MIN_MASK_VOXELS = 8
EXACT_MATCH = 1e-14


@dataclass(frozen=True)
class RigidEstimateOptions:
    max_iters: int = 60
    init_step_rot: float = 0.08
    init_step_trans: float = 2.0
    shrink_factor: float = 0.5
    tol: float = 0.01
    roi_margin: int = 3
    mask_dilation: int = 2
    sample_stride: int = 1

    def __post_init__(self):
        if not 0 < self.shrink_factor < 1:
            raise ValueError("shrink_factor must lie in (0, 1)")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.init_step_rot <= 0 or self.init_step_trans <= 0:
            raise ValueError("initial steps must be positive")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")


@dataclass(frozen=True)
class PerLabelRigid:
    label_id: int
    params: RigidParams
    final_loss: float
    iterations_used: int
    initial_loss: float = float("nan")
    flags: tuple = ()
    loss_trace: tuple = field(default=(), repr=False)

    def to_dict(self):
        d = {"label": self.label_id, **self.params.to_dict(),
             "initial_loss": self.initial_loss, "final_loss": self.final_loss,
             "iterations": self.iterations_used, "flags": list(self.flags)}
        return d


def _mask_array(mask):
    return np.asarray(unwrap(mask)) != 0


def select_label(labels, label_id):
    """Binary mask (as a 0/1 LabelVolume) of one label id."""
    return LabelVolume(labels.grid, labels.mask(label_id).astype(np.uint8))


def extract_roi(d, mask, margin):
    """Crop descriptors and mask to the mask's bounding box plus ``margin``.

    Returns ``(block, roi_mask, offset)``; ``offset`` is the block's lower
    corner in full-grid voxel indices.
    """
    m = _mask_array(mask)
    data = unwrap(d)
    if m.shape != data.shape[:3]:
        raise ValueError(f"mask shape {m.shape} does not match descriptor grid {data.shape[:3]}")
    if not m.any():
        raise DegenerateInputError("ROI mask is empty")
    lo, hi = mask_bounding_box(m, margin)
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    return data[sl], m[sl], lo


class _MaskedLoss:
    """Masked descriptor SSD of the moving descriptors under a rigid map."""

    def __init__(self, d_fixed, d_moving, region, center, stride):
        pts = np.argwhere(region)
        if stride > 1:
            keep = np.all(pts % stride == 0, axis=1)
            if keep.any():
                pts = pts[keep]
        self.points = pts.astype(np.float64)
        self.fixed = d_fixed[pts[:, 0], pts[:, 1], pts[:, 2]]
        self.moving = d_moving
        self.center = np.asarray(center, dtype=np.float64)
        self.rel = self.points - self.center

    def params(self, theta):
        return RigidParams(theta[:3], theta[3:], self.center)

    def __call__(self, theta):
        rot = rotvec_to_matrix(theta[:3])
        y = self.rel @ rot.T + self.center + theta[3:]
        w = sample_linear(self.moving, (y[:, 0], y[:, 1], y[:, 2]))
        return float(np.mean((w - self.fixed) ** 2))


def _coordinate_descent(loss, theta, axes, opts):
    steps = np.array([opts.init_step_rot] * 3 + [opts.init_step_trans] * 3)
    current = loss(theta)
    initial = current
    trace = [current]
    sweeps = 0
    while sweeps < opts.max_iters and current > EXACT_MATCH and steps[3] >= opts.tol:
        sweeps += 1
        improved = False
        for i in axes:
            best, best_theta = current, None
            for sign in (1.0, -1.0):
                trial = theta.copy()
                trial[i] += sign * steps[i]
                value = loss(trial)
                if value < best:
                    best, best_theta = value, trial
            if best_theta is not None:
                theta, current = best_theta, best
                trace.append(current)
                improved = True
        if not improved:
            steps *= opts.shrink_factor
    return theta, current, initial, sweeps, trace


def estimate_rigid(d_fixed, d_moving, mask, opts=RigidEstimateOptions(), label_id=1, center=None):
    """Estimate one label's rigid transform.

    The loss is the descriptor SSD over the label mask dilated by
    ``opts.mask_dilation`` voxels, restricted to its ROI box. Tiny masks fall
    back to translation-only search; flat descriptors return the identity.
    """
    fixed = unwrap(d_fixed)
    moving = unwrap(d_moving)
    if fixed.shape != moving.shape:
        raise ValueError(f"descriptor shape mismatch: {fixed.shape} vs {moving.shape}")
    m = _mask_array(mask)
    if m.shape != fixed.shape[:3]:
        raise ValueError("mask does not match descriptor grid")
    n = int(m.sum())
    if n == 0:
        raise DegenerateInputError(f"label {label_id}: mask is empty")
    if center is None:
        center = np.argwhere(m).mean(axis=0)
    flags = []
    lo, hi = mask_bounding_box(m, opts.roi_margin)
    region = np.zeros_like(m)
    sl = tuple(slice(a, b) for a, b in zip(lo, hi))
    region[sl] = m[sl]
    if opts.mask_dilation > 0:
        grown = ndimage.binary_dilation(m, iterations=opts.mask_dilation)
        region[sl] = grown[sl]
    loss = _MaskedLoss(fixed, moving, region, center, opts.sample_stride)
    theta = np.zeros(6)

    roi_fixed = fixed[sl]
    if np.ptp(roi_fixed) < 1e-12 and np.ptp(moving[sl]) < 1e-12:
        flags.append("degenerate")
        value = loss(theta)
        return PerLabelRigid(label_id, loss.params(theta), value, 0, value, tuple(flags), (value,))

    axes = range(6)
    if n < MIN_MASK_VOXELS:
        log.warning("label %s has %d voxels; estimating translation only", label_id, n)
        flags.append("translation_only")
        axes = range(3, 6)
    theta, value, initial, sweeps, trace = _coordinate_descent(loss, theta, list(axes), opts)
    return PerLabelRigid(label_id, loss.params(theta), value, sweeps, initial,
                         tuple(flags), tuple(trace))


def estimate_all(d_fixed, d_moving, labels, opts=RigidEstimateOptions(), threads=1):
    """Independent estimates for every label id, in ascending id order."""
    ids = sorted(labels.label_ids)

    def one(i):
        return estimate_rigid(d_fixed, d_moving, labels.data == i, opts, label_id=i)

    if threads > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, ids))
    return [one(i) for i in ids]


def build_rigid_field(estimates, labels, grid=None):
    """Sum of per-label rigid displacements, each masked to its label."""
    grid = labels.grid if grid is None else grid
    ids = [e.label_id for e in estimates]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate label ids in estimates: {ids}")
    missing = set(ids) - set(labels.label_ids)
    if missing:
        raise ValueError(f"estimates reference labels absent from the label map: {sorted(missing)}")
    if not estimates:
        return DisplacementField.zeros(grid)
    masks = [labels.data == i for i in ids]
    check_disjoint(masks)
    parts = [mask_field(rigid_to_displacement(e.params, grid), m) for e, m in zip(estimates, masks)]
    return sum_fields(parts)


def global_prereg(fixed, moving, opts=None, d_fixed=None, d_moving=None):
    """Whole-image rigid pre-alignment about the grid centre.

    Uses every second voxel per axis unless ``opts`` says otherwise.
    """
    opts = RigidEstimateOptions(sample_stride=2, mask_dilation=0, roi_margin=0) if opts is None else opts
    d_fixed = mind_descriptor(fixed) if d_fixed is None else d_fixed
    d_moving = mind_descriptor(moving) if d_moving is None else d_moving
    dims = fixed.grid.dims
    mask = np.ones(dims, dtype=bool)
    center = [(n - 1) / 2.0 for n in dims]
    return estimate_rigid(d_fixed, d_moving, mask, opts, label_id=0, center=center)
