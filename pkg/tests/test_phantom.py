from dataclasses import replace

import numpy as np
import pytest

from hybridreg.metrics import mean_dice
from hybridreg.mind import mind_descriptor
from hybridreg.phantom import PhantomSpec, gt_hybrid_field, gt_rigid_field, make_phantom, quiet
from hybridreg.resample import warp_labels, warp_scalar


@pytest.fixture(scope="module")
def pair():
    return make_phantom(PhantomSpec(seed=4))


def test_seed_is_bit_exact(pair):
    again = make_phantom(PhantomSpec(seed=4))
    assert np.array_equal(pair.fixed.data, again.fixed.data)
    assert np.array_equal(pair.moving.data, again.moving.data)
    assert np.array_equal(pair.moving_labels.data, again.moving_labels.data)
    assert np.array_equal(pair.gt_bg_field.data, again.gt_bg_field.data)
    other = make_phantom(PhantomSpec(seed=5))
    assert not np.array_equal(pair.moving.data, other.moving.data)


def test_labels_disjoint_and_large(pair):
    lab = pair.fixed_labels
    assert lab.label_ids == (1, 2, 3, 4)
    # one id per voxel makes supports disjoint; check sizes
    for i in lab.label_ids:
        assert (lab.data == i).sum() >= 200
    assert pair.moving_labels.label_ids == (1, 2, 3, 4)


def test_motion_within_bounds(pair):
    for p in pair.gt_rigids:
        assert p.angle_deg <= pair.spec.max_rot_deg + 1e-9
        assert np.linalg.norm(p.t) <= pair.spec.max_trans_vox + 1e-9


def test_zero_motion_descriptors_agree():
    still = make_phantom(quiet(PhantomSpec(seed=2)))
    assert not np.allclose(still.fixed.data, still.moving.data)
    diff = np.abs(mind_descriptor(still.fixed).data - mind_descriptor(still.moving).data)
    assert diff.max() <= 1e-3
    assert np.all(gt_hybrid_field(still).data == 0)


def test_translation_only_piecewise_constant():
    p = make_phantom(replace(PhantomSpec(seed=1), max_rot_deg=0.0, bg_field_amp_vox=0.0))
    f = gt_hybrid_field(p).data
    for i, rp in enumerate(p.gt_rigids, start=1):
        m = p.fixed_labels.data == i
        assert np.allclose(f[:, m], np.asarray(rp.t)[:, None], atol=1e-12)


def test_field_matches_analytic_on_labels(pair):
    f = gt_hybrid_field(pair).data
    rng = np.random.default_rng(0)
    pts = np.argwhere(pair.fixed_labels.data > 0)
    for idx in pts[rng.choice(len(pts), 100, replace=False)]:
        rp = pair.gt_rigids[pair.fixed_labels.data[tuple(idx)] - 1]
        assert np.allclose(f[(slice(None), *idx)], rp.apply(idx.astype(float)) - idx, atol=1e-6)


def test_background_zero_on_bone(pair):
    assert np.all(pair.gt_bg_field.data[:, pair.fixed_labels.data > 0] == 0)
    assert np.all(gt_rigid_field(pair).data[:, pair.fixed_labels.data == 0] == 0)


def test_ground_truth_warp_recovers_labels(pair):
    warped = warp_labels(pair.moving_labels, gt_hybrid_field(pair))
    assert mean_dice(pair.fixed_labels, warped)[1] >= 0.97


def test_ground_truth_warp_recovers_anatomy(pair):
    # undo the two intensity remaps, then compare away from bone edges
    warped = warp_scalar(pair.moving, gt_hybrid_field(pair)).data.astype(np.float64)
    anat_m = (10.0 ** warped - 1.0) / 9.0
    anat_f = (pair.fixed.data.astype(np.float64) - 0.05) / 0.9
    from scipy import ndimage
    edge = ndimage.binary_dilation(pair.fixed_labels.data > 0, iterations=2) & ~ndimage.binary_erosion(
        pair.fixed_labels.data > 0, iterations=2)
    err = np.abs(anat_m - anat_f)[~edge]
    assert np.median(err) <= 0.01


def test_spec_validation():
    with pytest.raises(ValueError):
        PhantomSpec(max_rot_deg=20)
    with pytest.raises(ValueError):
        PhantomSpec(n_vertebrae=12)
