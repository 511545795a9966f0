import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridreg.exceptions import DegenerateInputError
from hybridreg.fields import DisplacementField, RigidParams, jacobian_determinant, rigid_to_displacement
from hybridreg.metrics import (boundary, dice, dice_masks, evaluate, foreground_mask, format_table,
                               hd95, mean_dice, neg_jacobian_pct)
from hybridreg.volume import Grid, LabelVolume

import oracles
from conftest import random_labels


def test_dice_identical_and_disjoint():
    a = np.zeros((4, 4, 4), bool)
    a[:2] = True
    assert dice_masks(a, a) == (1.0, False)
    assert dice_masks(a, ~a) == (0.0, False)
    assert dice_masks(np.zeros_like(a), np.zeros_like(a)) == (1.0, True)


@given(st.integers(0, 2 ** 31 - 1))
def test_dice_voxel_count_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((2, 4, 4, 4)) < 0.5
    inter = sum(1 for i in np.ndindex(4, 4, 4) if a[i] and b[i])
    na, nb = sum(a.flat), sum(b.flat)
    expect = 1.0 if na + nb == 0 else 2 * inter / (na + nb)
    assert dice_masks(a, b)[0] == expect


def test_mean_dice_aggregation(rng):
    g = Grid((3, 1, 1))
    one = LabelVolume(g, np.array([1, 0, 0]).reshape(3, 1, 1))
    assert mean_dice(one, one) == ([(1, 1.0)], 1.0, 0.0)
    f = LabelVolume(g, np.array([1, 2, 2]).reshape(3, 1, 1))
    w = LabelVolume(g, np.array([1, 1, 2]).reshape(3, 1, 1))
    per, m, s = mean_dice(f, w)
    assert per == [(1, 2 / 3), (2, 2 / 3)] and m == pytest.approx(2 / 3) and s == 0
    a = LabelVolume(g, np.array([1, 2, 0]).reshape(3, 1, 1))
    b = LabelVolume(g, np.array([1, 0, 2]).reshape(3, 1, 1))
    assert mean_dice(a, b)[1:] == (0.5, 0.5)


def test_mean_dice_four_labels_recomputed(rng):
    f, w = random_labels(rng, (6, 6, 6)), random_labels(rng, (6, 6, 6))
    per, m, s = mean_dice(f, w)
    vals = []
    for i in (1, 2, 3, 4):
        a = [x == i for x in f.data.flat]
        b = [x == i for x in w.data.flat]
        vals.append(2 * sum(p and q for p, q in zip(a, b)) / (sum(a) + sum(b)))
    mean = sum(vals) / 4
    assert [d for _, d in per] == vals
    assert m == pytest.approx(mean, abs=1e-15)
    assert s == pytest.approx((sum((v - mean) ** 2 for v in vals) / 4) ** 0.5, abs=1e-15)


def test_hd95_closed_forms():
    a = np.zeros((6, 3, 3), bool)
    b = np.zeros_like(a)
    a[1, 1, 1] = True
    b[4, 1, 1] = True
    assert hd95(a, a) == 0.0
    assert hd95(a, b) == 3.0
    assert hd95(a, b, spacing=(2, 1, 1)) == 6.0
    with pytest.raises(DegenerateInputError):
        hd95(a, np.zeros_like(a))


@given(st.integers(0, 2 ** 31 - 1))
def test_hd95_brute_force(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(2, 7, 3))
    a, b = rng.random((2, *shape)) < 0.4
    a[0, 0, 0] = b[-1, -1, -1] = True
    spacing = np.array([1.0, 1.0, 3.0])
    assert abs(hd95(a, b, spacing) - oracles.hd95(a, b, spacing)) <= 1e-9


def test_boundary_matches_brute(rng):
    m = rng.random((5, 5, 5)) < 0.6
    assert np.array_equal(boundary(m), oracles.boundary(m))


def test_neg_jacobian_rigid_is_zero():
    g = Grid((8, 8, 8))
    f = rigid_to_displacement(RigidParams((0.3, -0.2, 0.4), (1, 2, -1), (3, 3, 3)), g)
    assert neg_jacobian_pct(f, np.ones(g.dims)) == 0.0


def test_neg_jacobian_folding_field():
    g = Grid((6, 6, 6))
    u = np.zeros((3, *g.dims))
    u[0] = -2 * np.arange(6)[:, None, None]
    fg = np.zeros(g.dims, bool)
    fg[1:-1, 1:-1, 1:-1] = True
    assert neg_jacobian_pct(DisplacementField(g, u), fg) == 100.0


@given(st.integers(0, 2 ** 31 - 1))
def test_neg_jacobian_recount(seed):
    rng = np.random.default_rng(seed)
    g = Grid((5, 5, 5))
    f = DisplacementField(g, rng.normal(scale=0.6, size=(3, 5, 5, 5)))
    fg = rng.random(g.dims) < 0.5
    fg[0, 0, 0] = True
    det = jacobian_determinant(f).data
    count = sum(1 for i in np.ndindex(5, 5, 5) if fg[i] and det[i] < 0)
    assert neg_jacobian_pct(f, fg) == 100.0 * count / int(fg.sum())


def test_foreground_dilation():
    lab = np.zeros((7, 7, 7), int)
    lab[3, 3, 3] = 1
    fg = foreground_mask(lab, 2)
    assert fg.sum() == 25  # 6-connected ball of radius 2


def test_evaluate_identity_and_table(rng):
    lab = random_labels(rng, (6, 6, 6))
    m = evaluate(lab, lab, DisplacementField.zeros(lab.grid))
    assert m["mean_dice"] == 1.0 and m["mean_hd95_mm"] == 0.0 and m["neg_jacobian_pct"] == 0.0
    table = format_table(m)
    assert "Avg Dice" in table and "100.00+-0.00" in table


def test_dice_by_id():
    lab = LabelVolume(Grid((2, 1, 1)), np.array([1, 2]).reshape(2, 1, 1))
    assert dice(lab, lab, 2) == 1.0
