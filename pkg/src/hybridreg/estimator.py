"""scikit-learn style wrappers around the registration pipeline.

``HybridRegistration.fit(fixed, moving, labels)`` runs the full pipeline and
stores the hybrid field; ``transform`` then resamples any moving-frame
volume with it. Hyperparameters live in ``__init__`` so ``get_params`` and
``set_params`` behave as usual.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .deformable import DeformableOptions
from .mind import DEFAULT_LAMBDA, mind_descriptor
from .pipeline import RegistrationOptions, register_hybrid
from .resample import warp_labels, warp_scalar
from .rigid import RigidEstimateOptions
from .volume import LabelVolume, Volume


def check_volume(v, name="volume"):
    if not isinstance(v, Volume):
        raise TypeError(f"{name} must be a Volume, got {type(v).__name__}")
    return v


def check_label_volume(v, name="labels"):
    if not isinstance(v, LabelVolume):
        raise TypeError(f"{name} must be a LabelVolume, got {type(v).__name__}")
    return v


def check_same_grid(*items):
    """All items share dims and spacing; returns the common grid."""
    grids = [it.grid for it in items]
    ref = grids[0]
    for g in grids[1:]:
        if g.dims != ref.dims or not np.allclose(g.spacing, ref.spacing):
            raise ValueError(f"grid mismatch: {ref.dims}/{ref.spacing} vs {g.dims}/{g.spacing}")
    return ref


class HybridRegistration(BaseEstimator):
    """Per-vertebra rigid plus deformable registration of ``moving`` onto ``fixed``."""

    def __init__(self, lam=DEFAULT_LAMBDA, grid_spacing=4.0, max_iters=200, step_size=0.1,
                 skip_rigid=False, skip_prereg=False, smooth_on_hybrid=False, threads=1,
                 fg_dilation=2):
        self.lam = lam
        self.grid_spacing = grid_spacing
        self.max_iters = max_iters
        self.step_size = step_size
        self.skip_rigid = skip_rigid
        self.skip_prereg = skip_prereg
        self.smooth_on_hybrid = smooth_on_hybrid
        self.threads = threads
        self.fg_dilation = fg_dilation

    def to_options(self):
        deformable = DeformableOptions(lam=self.lam, step_size=self.step_size, max_iters=self.max_iters,
                                       grid_spacing_vox=self.grid_spacing,
                                       smooth_on_hybrid=self.smooth_on_hybrid)
        return RegistrationOptions(rigid=RigidEstimateOptions(), deformable=deformable,
                                   skip_rigid=self.skip_rigid, skip_prereg=self.skip_prereg,
                                   threads=self.threads, fg_dilation=self.fg_dilation)

    def fit(self, fixed, moving, labels, labels_moving=None):
        check_volume(fixed, "fixed")
        check_volume(moving, "moving")
        check_label_volume(labels)
        items = [fixed, moving, labels]
        if labels_moving is not None:
            items.append(check_label_volume(labels_moving, "labels_moving"))
        check_same_grid(*items)
        self.result_ = register_hybrid(fixed, moving, labels, self.to_options(), labels_moving=labels_moving)
        self.field_ = self.result_.hybrid_field
        self.rigids_ = self.result_.rigids
        self.metrics_ = self.result_.metrics
        return self

    def transform(self, moving):
        check_is_fitted(self, "field_")
        check_same_grid(check_volume(moving, "moving"), self.field_)
        return warp_scalar(moving, self.field_)

    def transform_labels(self, labels):
        check_is_fitted(self, "field_")
        check_same_grid(check_label_volume(labels), self.field_)
        return warp_labels(labels, self.field_)

    def fit_transform(self, fixed, moving, labels, labels_moving=None):
        return self.fit(fixed, moving, labels, labels_moving).transform(moving)

    def score(self, fixed, moving, labels, labels_moving=None):
        """Fit on the given pair and return the mean Dice."""
        self.fit(fixed, moving, labels, labels_moving)
        return self.metrics_.get("mean_dice", float("nan"))


class MindTransformer(TransformerMixin, BaseEstimator):
    """Volume to MIND descriptor volume; stateless."""

    def __init__(self, patch_radius=1, sigma=0.5):
        self.patch_radius = patch_radius
        self.sigma = sigma

    def fit(self, X=None, y=None):
        self.n_channels_ = 6
        return self

    def transform(self, X):
        check_is_fitted(self, "n_channels_")
        return mind_descriptor(check_volume(X, "X"), patch_radius=self.patch_radius, sigma=self.sigma)
