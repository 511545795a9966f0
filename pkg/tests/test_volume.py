import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridreg.exceptions import LabelNotFoundError
from hybridreg.volume import (Grid, LabelVolume, Volume, crop, label_bounding_box, mask_bounding_box,
                              normalize_minmax, resize_nearest, resize_trilinear)

from conftest import random_labels, random_volume


def test_grid_rejects_bad_geometry():
    with pytest.raises(ValueError):
        Grid((0, 2, 2))
    with pytest.raises(ValueError):
        Grid((2, 2, 2), spacing=(1, 0, 1))
    with pytest.raises(ValueError):
        Grid((2, 2))


def test_volume_is_immutable_float32(rng):
    v = random_volume(rng)
    assert v.data.dtype == np.float32
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1


def test_volume_rejects_nan():
    with pytest.raises(ValueError):
        Volume(Grid((2, 2, 2)), np.full((2, 2, 2), np.nan))


def test_labels_reject_fractional_and_negative():
    with pytest.raises(ValueError):
        LabelVolume(Grid((1, 1, 2)), np.array([[[0.5, 1.0]]]))
    with pytest.raises(ValueError):
        LabelVolume(Grid((1, 1, 2)), np.array([[[-1, 1]]]))


def test_label_ids_and_missing_mask():
    lab = LabelVolume(Grid((2, 2, 1)), np.array([[[0], [3]], [[1], [3]]]))
    assert lab.label_ids == (1, 3)
    with pytest.raises(LabelNotFoundError):
        lab.mask(2)


def test_flat_layout_is_x_fastest():
    data = np.arange(24).reshape((2, 3, 4), order="F")
    v = Volume(Grid((2, 3, 4)), data)
    assert np.array_equal(v.flat(), np.arange(24))
    assert np.array_equal(Volume.from_flat(v.grid, v.flat()).data, v.data)


def test_crop_full_extent_identity(rng):
    v = random_volume(rng)
    c = crop(v, (0, 0, 0), v.grid.dims)
    assert np.array_equal(c.data, v.data) and c.grid == v.grid


def test_crop_single_center_voxel():
    v = Volume(Grid((3, 3, 3)), np.arange(27).reshape(3, 3, 3))
    c = crop(v, (1, 1, 1), (2, 2, 2))
    assert c.grid.dims == (1, 1, 1) and c.data[0, 0, 0] == 13


def test_crop_origin_tracks_block():
    v = Volume(Grid((4, 4, 4), spacing=(2, 1, 3), origin=(10, 0, 0)), np.zeros((4, 4, 4)))
    assert crop(v, (1, 2, 3), (3, 4, 4)).grid.origin == (12.0, 2.0, 9.0)


def test_crop_rejects_bad_box(rng):
    with pytest.raises(ValueError):
        crop(random_volume(rng), (0, 0, 0), (9, 1, 1))
    with pytest.raises(ValueError):
        crop(random_volume(rng), (2, 0, 0), (2, 1, 1))


@given(st.integers(0, 2 ** 31 - 1))
def test_crop_never_adds_label_ids(seed):
    rng = np.random.default_rng(seed)
    lab = random_labels(rng)
    lo = [int(rng.integers(0, n)) for n in lab.grid.dims]
    hi = [int(rng.integers(a + 1, n + 1)) for a, n in zip(lo, lab.grid.dims)]
    assert set(crop(lab, lo, hi).label_ids) <= set(lab.label_ids)


def test_bounding_box_single_voxel():
    data = np.zeros((5, 6, 7), dtype=int)
    data[2, 3, 4] = 1
    lab = LabelVolume(Grid(data.shape), data)
    assert label_bounding_box(lab, 1) == ((2, 3, 4), (3, 4, 5))
    assert label_bounding_box(lab, 1, margin=100) == ((0, 0, 0), (5, 6, 7))


@given(st.integers(0, 2 ** 31 - 1))
def test_bounding_box_matches_scan(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((6, 5, 4)) < 0.08
    mask[tuple(rng.integers(0, 4, 3))] = True
    pts = [(i, j, k) for i in range(6) for j in range(5) for k in range(4) if mask[i, j, k]]
    lo = tuple(min(p[a] for p in pts) for a in range(3))
    hi = tuple(max(p[a] for p in pts) + 1 for a in range(3))
    assert mask_bounding_box(mask) == (lo, hi)


def test_resize_identity_and_constant(rng):
    v = random_volume(rng)
    assert np.array_equal(resize_trilinear(v, v.grid.dims).data, v.data)
    const = Volume(v.grid, np.full(v.grid.dims, 3.25))
    assert np.allclose(resize_trilinear(const, (5, 11, 3)).data, 3.25, atol=0)


def test_resize_downscale_linear_ramp():
    dims = (16, 12, 8)
    x, y, z = np.meshgrid(*(np.arange(n, dtype=float) for n in dims), indexing="ij")
    v = Volume(Grid(dims), 0.5 * x - 0.25 * y + 0.125 * z)
    out = resize_trilinear(v, (8, 6, 4))
    # voxel centres of the coarse grid in fine-grid coordinates
    cx, cy, cz = np.meshgrid(*((np.arange(m) + 0.5) * n / m - 0.5 for n, m in zip(dims, (8, 6, 4))),
                             indexing="ij")
    assert np.max(np.abs(out.data - (0.5 * cx - 0.25 * cy + 0.125 * cz))) <= 1e-5
    assert np.allclose(out.grid.spacing, (2.0, 2.0, 2.0))


def test_resize_nearest_identity_and_constant(rng):
    lab = random_labels(rng)
    assert np.array_equal(resize_nearest(lab, lab.grid.dims).data, lab.data)
    block = LabelVolume(lab.grid, np.full(lab.grid.dims, 2))
    assert np.all(resize_nearest(block, (3, 9, 4)).data == 2)


def test_resize_nearest_no_new_ids():
    rng = np.random.default_rng(0)
    for _ in range(100):
        lab = random_labels(rng, dims=tuple(rng.integers(2, 7, 3)))
        target = tuple(int(t) for t in rng.integers(1, 10, 3))
        assert set(resize_nearest(lab, target).label_ids) <= set(lab.label_ids)


def test_resize_trilinear_refuses_labels(rng):
    with pytest.raises(TypeError):
        resize_trilinear(random_labels(rng), (2, 2, 2))


def test_normalize_minmax(rng):
    v = random_volume(rng)
    n = normalize_minmax(v)
    assert n.data.min() == 0.0 and n.data.max() == 1.0
    flat = normalize_minmax(Volume(v.grid, np.ones(v.grid.dims)))
    assert np.all(flat.data == 0)
