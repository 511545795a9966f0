"""End-to-end hybrid registration driver and its JSON report."""

import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

from . import __version__
from .deformable import DeformableOptions, LossTrace, optimize_deformable
from .exceptions import StageError
from .fields import DisplacementField, compose_rigid, fuse_hybrid, rigid_to_displacement
from .metrics import evaluate
from .mind import DescriptorVolume, mind_descriptor
from .resample import warp_array, warp_labels, warp_scalar
from .rigid import RigidEstimateOptions, build_rigid_field, estimate_all, global_prereg

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegistrationOptions:
    rigid: RigidEstimateOptions = RigidEstimateOptions()
    prereg: RigidEstimateOptions = RigidEstimateOptions(sample_stride=2, mask_dilation=0, roi_margin=0)
    deformable: DeformableOptions = DeformableOptions()
    skip_rigid: bool = False
    skip_prereg: bool = False
    threads: int = 1
    fg_dilation: int = 2

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RegistrationResult:
    hybrid_field: DisplacementField
    deformable_field: DisplacementField
    rigid_field: DisplacementField
    prereg: object
    rigids: list
    warped: object
    warped_labels: object
    metrics: dict
    deformable_trace: LossTrace
    timings: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def report(self, include_timings=True):
        rep = {
            "version": __version__,
            "config": self.config,
            "prereg": self.prereg.to_dict() if self.prereg is not None else None,
            "rigids": [r.to_dict() for r in self.rigids],
            "metrics": self.metrics,
            "traces": {"deformable": self.deformable_trace.to_dict(),
                       "rigid": {str(r.label_id): list(r.loss_trace) for r in self.rigids}},
            "notes": list(self.notes),
        }
        if include_timings:
            rep["timings_s"] = dict(self.timings)
        return rep


@contextmanager
def _stage(name, timings):
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - start


def register_hybrid(fixed, moving, labels_fixed, opts=RegistrationOptions(), labels_moving=None):
    """Register ``moving`` onto ``fixed``.

    Pipeline: descriptors, global rigid pre-alignment, per-label rigid
    estimates, deformable optimisation on top of the masked rigid field,
    additive fusion, then composition with the pre-alignment.

    ``labels_moving`` is only used for evaluation; without it the fixed
    labels stand in for both images.
    """
    timings, notes = {}, []
    if fixed.grid.dims != moving.grid.dims or fixed.grid.dims != labels_fixed.grid.dims:
        raise StageError("input", ValueError("fixed, moving and labels must share a grid"))
    grid = fixed.grid

    with _stage("descriptors", timings):
        d_fixed = mind_descriptor(fixed)
        d_moving = mind_descriptor(moving)

    with _stage("prereg", timings):
        if opts.skip_prereg:
            prereg = None
            d_moving_pre = d_moving
        else:
            prereg = global_prereg(fixed, moving, opts.prereg, d_fixed, d_moving)
            pre_field = rigid_to_displacement(prereg.params, grid)
            d_moving_pre = DescriptorVolume(grid, warp_array(d_moving.data, pre_field))

    with _stage("rigid", timings):
        if opts.skip_rigid:
            rigids = []
        elif not labels_fixed.label_ids:
            log.warning("label map is empty; running deformable-only registration")
            notes.append("empty label map: deformable-only registration")
            rigids = []
        else:
            rigids = estimate_all(d_fixed, d_moving_pre, labels_fixed, opts.rigid, opts.threads)
        rigid_field = build_rigid_field(rigids, labels_fixed, grid)

    with _stage("deformable", timings):
        _, def_field, trace = optimize_deformable(d_fixed, d_moving_pre, rigid_field, opts.deformable)

    with _stage("fusion", timings):
        hybrid = fuse_hybrid(def_field, rigid_field)
        total = compose_rigid(prereg.params, hybrid) if prereg is not None else hybrid

    with _stage("warp", timings):
        warped = warp_scalar(moving, total)
        eval_labels = labels_moving
        if eval_labels is None:
            notes.append("moving labels not supplied; fixed labels used for both images")
            eval_labels = labels_fixed
        warped_labels = warp_labels(eval_labels, total)

    with _stage("metrics", timings):
        if labels_fixed.label_ids and warped_labels.label_ids:
            metrics = evaluate(labels_fixed, warped_labels, total, fg_dilation=opts.fg_dilation)
        else:
            metrics = {}
            notes.append("no labels to evaluate")

    return RegistrationResult(
        hybrid_field=total, deformable_field=def_field, rigid_field=rigid_field,
        prereg=prereg, rigids=rigids, warped=warped, warped_labels=warped_labels,
        metrics=metrics, deformable_trace=trace, timings=timings,
        config=opts.to_dict(), notes=notes,
    )
