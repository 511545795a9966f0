import numpy as np
import pytest

from hybridreg.exceptions import DegenerateInputError
from hybridreg.fields import RigidParams, rigid_to_displacement, rotvec_to_matrix
from hybridreg.mind import mind_descriptor
from hybridreg.phantom import PhantomSpec, make_phantom, quiet
from hybridreg.resample import affine_resample
from hybridreg.rigid import (PerLabelRigid, build_rigid_field, estimate_all, estimate_rigid,
                             extract_roi, global_prereg, select_label)
from hybridreg.volume import Grid, LabelVolume

from conftest import random_labels


@pytest.fixture(scope="module")
def still():
    pair = make_phantom(quiet(PhantomSpec(seed=3)))
    return pair, mind_descriptor(pair.fixed)


def test_select_label_single_id():
    data = np.zeros((4, 4, 4), int)
    data[1:3, 1:3, 1:3] = 3
    lab = LabelVolume(Grid(data.shape), data)
    assert np.array_equal(select_label(lab, 3).data != 0, data != 0)
    data[0, 0, 0] = 5
    assert select_label(LabelVolume(Grid(data.shape), data), 5).data.sum() == 1


def test_label_masks_partition_foreground(rng):
    lab = random_labels(rng, (6, 6, 6))
    masks = [select_label(lab, i).data.astype(int) for i in lab.label_ids]
    total = sum(masks)
    assert total.max() == 1
    assert np.array_equal(total != 0, lab.data != 0)


def test_extract_roi_cases(rng):
    d = rng.random((5, 6, 7, 6))
    block, m, off = extract_roi(d, np.ones((5, 6, 7)), 0)
    assert np.array_equal(block, d) and off == (0, 0, 0)
    single = np.zeros((5, 6, 7), bool)
    single[0, 3, 3] = True
    block, m, off = extract_roi(d, single, 1)
    assert block.shape[:3] == (2, 3, 3) and off == (0, 2, 2)
    with pytest.raises(DegenerateInputError):
        extract_roi(d, np.zeros((5, 6, 7)), 1)


def test_extract_roi_coordinate_round_trip(rng):
    d = rng.random((8, 8, 8, 2))
    for _ in range(20):
        mask = rng.random((8, 8, 8)) < 0.02
        mask[tuple(rng.integers(0, 8, 3))] = True
        block, m, off = extract_roi(d, mask, int(rng.integers(0, 3)))
        for local in np.argwhere(m):
            glob = tuple(local + off)
            assert mask[glob] and np.array_equal(block[tuple(local)], d[glob])


def test_identity_estimate(still):
    pair, df = still
    e = estimate_rigid(df, df, pair.fixed_labels.data == 1)
    assert e.final_loss <= 1e-8 and e.iterations_used <= 2
    assert e.params.angle_deg == 0 and e.params.t == (0, 0, 0)


def test_translated_vertebra(still):
    pair, df = still
    m = pair.fixed_labels.data == 1
    t = np.array([2.0, -1.0, 0.0])
    moved = mind_descriptor(affine_resample(pair.moving, np.eye(3), -t))
    e = estimate_rigid(df, moved, m)
    assert np.max(np.abs(np.array(e.params.t) - t)) <= 0.5
    assert e.params.angle_deg <= 1.0


def test_rotated_vertebra(still):
    pair, df = still
    m = pair.fixed_labels.data == 2
    c = np.argwhere(m).mean(axis=0)
    R = rotvec_to_matrix(np.radians(8.0) * np.array([0, 0, 1.0]))
    moved = mind_descriptor(affine_resample(pair.moving, R.T, c - R.T @ c))
    e = estimate_rigid(df, moved, m, center=c)
    assert abs(e.params.angle_deg - 8.0) <= 2.0


def test_loss_trace_monotone(still):
    pair, df = still
    moved = mind_descriptor(affine_resample(pair.moving, np.eye(3), -np.array([1.0, 0.5, 0.0])))
    for e in estimate_all(df, moved, pair.fixed_labels, threads=2):
        assert np.all(np.diff(e.loss_trace) <= 0)
        assert e.final_loss <= e.initial_loss


def test_tiny_mask_translation_only(still):
    pair, df = still
    m = np.zeros(pair.fixed.grid.dims, bool)
    m[30, 10, 20] = True
    e = estimate_rigid(df, df, m)
    assert "translation_only" in e.flags


def test_flat_roi_flagged_degenerate():
    d = np.ones((8, 8, 8, 6))
    m = np.zeros((8, 8, 8), bool)
    m[3:5, 3:5, 3:5] = True
    e = estimate_rigid(d, d, m)
    assert "degenerate" in e.flags and e.params.t == (0, 0, 0)


def test_build_rigid_field_cases():
    g = Grid((4, 4, 4))
    everything = LabelVolume(g, np.ones(g.dims))
    f = build_rigid_field([PerLabelRigid(1, RigidParams(), 0.0, 0)], everything)
    assert np.all(f.data == 0)
    data = np.zeros(g.dims, int)
    data[:2] = 1
    data[2:3] = 2
    lab = LabelVolume(g, data)
    ests = [PerLabelRigid(1, RigidParams(t=(1, 0, 0)), 0.0, 0),
            PerLabelRigid(2, RigidParams(t=(0, 1, 0)), 0.0, 0)]
    f = build_rigid_field(ests, lab).data
    assert np.all(f[:, :2] == np.array([1, 0, 0])[:, None, None, None])
    assert np.all(f[:, 2:3] == np.array([0, 1, 0])[:, None, None, None])
    assert np.all(f[:, 3:] == 0)
    with pytest.raises(ValueError):
        build_rigid_field([PerLabelRigid(7, RigidParams(), 0.0, 0)], lab)


def test_build_rigid_field_matches_per_label(still):
    pair, _ = still
    rng = np.random.default_rng(0)
    ests = [PerLabelRigid(i, RigidParams(rng.normal(size=3) * 0.05, rng.normal(size=3), (30, 30, 20)), 0.0, 0)
            for i in pair.fixed_labels.label_ids]
    f = build_rigid_field(ests, pair.fixed_labels)
    for e in ests:
        m = pair.fixed_labels.data == e.label_id
        ref = rigid_to_displacement(e.params, pair.fixed.grid).data
        assert np.array_equal(f.data[:, m], ref[:, m])


def test_global_prereg(still):
    pair, _ = still
    g = global_prereg(pair.fixed, pair.fixed)
    assert g.params.t == (0, 0, 0) and g.params.angle_deg == 0
    t = np.array([1.0, 2.0, -1.0])
    g = global_prereg(pair.fixed, affine_resample(pair.moving, np.eye(3), -t))
    assert np.max(np.abs(np.array(g.params.t) - t)) <= 0.5
    assert np.all(np.diff(g.loss_trace) <= 0)
