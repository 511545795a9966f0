"""Deformable field on a coarse control grid, optimised by adaptive gradient descent.

The dense displacement is the trilinear upsampling of control-point values
spaced ``grid_spacing_vox`` voxels apart. The objective is the descriptor SSD
between the fixed descriptors and the moving descriptors warped by
``upsample(g) + rigid``, plus ``lam`` times the smoothness penalty.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import warped_ssd
from .exceptions import NumericalError
from .fields import DisplacementField
from .interp import unwrap
from .mind import DEFAULT_LAMBDA, smoothness_gradient, smoothness_penalty, total_loss, LossWeights


@dataclass(frozen=True)
class DeformableOptions:
    lam: float = DEFAULT_LAMBDA
    step_size: float = 0.1
    max_iters: int = 200
    grid_spacing_vox: float = 4.0
    grad_tol: float = 1e-6
    smooth_on_hybrid: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.grid_spacing_vox <= 0:
            raise ValueError("grid_spacing_vox must be positive")
        LossWeights(self.lam)


@dataclass(frozen=True)
class ControlGrid:
    cdims: tuple
    spacing_vox: tuple
    values: np.ndarray

    def __post_init__(self):
        cdims = tuple(int(c) for c in self.cdims)
        spacing = tuple(float(s) for s in self.spacing_vox)
        if min(cdims) < 2:
            raise ValueError(f"control grid needs >= 2 points per axis, got {cdims}")
        if min(spacing) <= 0:
            raise ValueError("control spacing must be positive")
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.shape != (3, *cdims):
            raise ValueError(f"values shape {values.shape} does not match (3, {cdims})")
        values.setflags(write=False)
        object.__setattr__(self, "cdims", cdims)
        object.__setattr__(self, "spacing_vox", spacing)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros_for(cls, grid, spacing_vox):
        spacing = (float(spacing_vox),) * 3 if np.isscalar(spacing_vox) else tuple(spacing_vox)
        cdims = tuple(max(int(math.ceil((n - 1) / s - 1e-9)) + 1, 2) for n, s in zip(grid.dims, spacing))
        return cls(cdims, spacing, np.zeros((3, *cdims)))

    def with_values(self, values):
        return ControlGrid(self.cdims, self.spacing_vox, values)

    def covers(self, grid):
        return all((c - 1) * s >= n - 1 - 1e-9 for c, s, n in zip(self.cdims, self.spacing_vox, grid.dims))


def interpolation_matrix(n, c, s):
    """``(n, c)`` matrix of 1D linear weights from control points at ``j*s``."""
    w = np.zeros((n, c))
    p = np.arange(n, dtype=np.float64) / s
    j0 = np.minimum(np.floor(p).astype(int), c - 2)
    f = p - j0
    rows = np.arange(n)
    w[rows, j0] = 1.0 - f
    w[rows, j0 + 1] = f
    return w


def _matrices(g, grid):
    if not g.covers(grid):
        raise ValueError(f"control grid {g.cdims} x {g.spacing_vox} does not cover dims {grid.dims}")
    return [interpolation_matrix(n, c, s) for n, c, s in zip(grid.dims, g.cdims, g.spacing_vox)]


def _apply(mats, values):
    wx, wy, wz = mats
    out = np.einsum("ia,cabd->cibd", wx, values)
    out = np.einsum("jb,cibd->cijd", wy, out)
    return np.einsum("kd,cijd->cijk", wz, out)


def _adjoint(mats, dense):
    wx, wy, wz = mats
    out = np.einsum("kd,cijk->cijd", wz, dense)
    out = np.einsum("jb,cijd->cibd", wy, out)
    return np.einsum("ia,cibd->cabd", wx, out)


def upsample_grid(g, grid):
    return DisplacementField(grid, _apply(_matrices(g, grid), g.values))


def _desc(d):
    return np.ascontiguousarray(unwrap(d), dtype=np.float64)


def _evaluate(d_fixed, d_moving, g, rigid_field, lam, smooth_on_hybrid, with_grad):
    fixed, moving = _desc(d_fixed), _desc(d_moving)
    if fixed.shape != moving.shape:
        raise ValueError(f"descriptor shape mismatch: {fixed.shape} vs {moving.shape}")
    grid = rigid_field.grid
    if grid.dims != fixed.shape[:3]:
        raise ValueError("rigid field grid does not match descriptors")
    mats = _matrices(g, grid)
    u_def = _apply(mats, g.values)
    u = u_def + rigid_field.data
    total, gx, gy, gz = warped_ssd(moving, fixed, u[0], u[1], u[2], with_grad)
    count = fixed.size
    sim = total / count
    reg_field = u if smooth_on_hybrid else u_def
    smooth = smoothness_penalty(reg_field)
    loss = total_loss(sim, smooth, LossWeights(lam))
    if not with_grad:
        return loss, None
    dense = np.stack([gx, gy, gz]) / count
    if lam > 0:
        dense = dense + lam * smoothness_gradient(reg_field)
    return loss, _adjoint(mats, dense)


def objective(d_fixed, d_moving, g, rigid_field, lam=DEFAULT_LAMBDA, smooth_on_hybrid=False):
    return _evaluate(d_fixed, d_moving, g, rigid_field, lam, smooth_on_hybrid, False)[0]


def objective_gradient(d_fixed, d_moving, g, rigid_field, lam=DEFAULT_LAMBDA, smooth_on_hybrid=False):
    """Gradient of :func:`objective` with respect to the control values."""
    return _evaluate(d_fixed, d_moving, g, rigid_field, lam, smooth_on_hybrid, True)[1]


def value_and_gradient(d_fixed, d_moving, g, rigid_field, lam=DEFAULT_LAMBDA, smooth_on_hybrid=False):
    return _evaluate(d_fixed, d_moving, g, rigid_field, lam, smooth_on_hybrid, True)


@dataclass
class LossTrace:
    losses: list = field(default_factory=list)
    best: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    stop_reason: str = ""

    @property
    def iterations(self):
        return len(self.losses)

    def to_dict(self):
        return {"losses": self.losses, "best": self.best, "grad_norms": self.grad_norms,
                "iterations": self.iterations, "stop_reason": self.stop_reason}


def optimize_deformable(d_fixed, d_moving, rigid_field, opts=DeformableOptions(), init=None):
    """Minimise the objective over control values; returns the best grid seen."""
    g = init if init is not None else ControlGrid.zeros_for(rigid_field.grid, opts.grid_spacing_vox)
    theta = g.values.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    trace = LossTrace()
    best_loss, best_theta = math.inf, theta.copy()
    for it in range(1, opts.max_iters + 1):
        loss, grad = value_and_gradient(d_fixed, d_moving, g.with_values(theta), rigid_field,
                                        opts.lam, opts.smooth_on_hybrid)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NumericalError(f"non-finite loss or gradient at iteration {it}")
        gnorm = float(np.linalg.norm(grad))
        if loss < best_loss:
            best_loss, best_theta = loss, theta.copy()
        trace.losses.append(float(loss))
        trace.best.append(float(best_loss))
        trace.grad_norms.append(gnorm)
        if gnorm <= opts.grad_tol:
            trace.stop_reason = "grad_tol"
            break
        if it == opts.max_iters:
            trace.stop_reason = "max_iters"
            break
        m = opts.beta1 * m + (1 - opts.beta1) * grad
        v = opts.beta2 * v + (1 - opts.beta2) * grad * grad
        mhat = m / (1 - opts.beta1 ** it)
        vhat = v / (1 - opts.beta2 ** it)
        theta = theta - opts.step_size * mhat / (np.sqrt(vhat) + opts.eps)
    best = g.with_values(best_theta)
    return best, upsample_grid(best, rigid_field.grid), trace
