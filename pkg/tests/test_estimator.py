import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from hybridreg.estimator import (HybridRegistration, MindTransformer, check_label_volume,
                                 check_same_grid, check_volume)
from hybridreg.phantom import PhantomSpec, make_phantom, quiet
from hybridreg.volume import Grid, LabelVolume, Volume

SMALL = PhantomSpec(dims=(32, 40, 24), n_vertebrae=2, vertebra_size=(10, 6, 8), gap=6, seed=2)


def test_params_round_trip():
    est = HybridRegistration(lam=0.5, grid_spacing=6, skip_rigid=True)
    params = est.get_params()
    assert params["lam"] == 0.5 and params["skip_rigid"] is True
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(max_iters=7)
    assert est.to_options().deformable.max_iters == 7
    assert est.to_options().skip_rigid


def test_not_fitted():
    v = Volume(Grid((8, 8, 8)), np.zeros((8, 8, 8)))
    with pytest.raises(NotFittedError):
        HybridRegistration().transform(v)


def test_fit_transform_identity():
    p = make_phantom(quiet(SMALL))
    est = HybridRegistration(max_iters=3)
    warped = est.fit_transform(p.fixed, p.fixed, p.fixed_labels)
    assert np.array_equal(warped.data, p.fixed.data)
    assert np.array_equal(est.transform_labels(p.fixed_labels).data, p.fixed_labels.data)
    assert est.metrics_["mean_dice"] == 1.0
    assert len(est.rigids_) == 2


def test_validation_helpers():
    g = Grid((4, 4, 4))
    v = Volume(g, np.zeros(g.dims))
    lab = LabelVolume(g, np.zeros(g.dims))
    assert check_volume(v) is v and check_label_volume(lab) is lab
    with pytest.raises(TypeError):
        check_volume(lab)
    with pytest.raises(TypeError):
        check_label_volume(v)
    with pytest.raises(ValueError):
        check_same_grid(v, Volume(Grid((4, 4, 5)), np.zeros((4, 4, 5))))
    with pytest.raises(ValueError):
        check_same_grid(v, Volume(Grid((4, 4, 4), spacing=(2, 1, 1)), np.zeros(g.dims)))


def test_mind_transformer(rng):
    v = Volume(Grid((6, 6, 6)), rng.random((6, 6, 6)))
    d = MindTransformer().fit_transform(v)
    assert d.data.shape == (6, 6, 6, 6)
    with pytest.raises(NotFittedError):
        MindTransformer().transform(v)
