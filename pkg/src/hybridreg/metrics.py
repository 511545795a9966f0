"""Evaluation metrics: Dice overlap, HD95 and folding percentage."""

import math

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .exceptions import DegenerateInputError, LabelNotFoundError
from .fields import jacobian_determinant
from .interp import unwrap


def _data(x):
    return np.asarray(unwrap(x))


def dice_masks(a, b):
    """Dice of two boolean masks. Returns ``(value, degenerate)``."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shape mismatch: {a.shape} vs {b.shape}")
    na, nb = int(a.sum()), int(b.sum())
    if na + nb == 0:
        return 1.0, True
    return 2.0 * int(np.logical_and(a, b).sum()) / (na + nb), False


def dice(fixed_labels, warped_labels, label_id):
    fixed, warped = _data(fixed_labels), _data(warped_labels)
    if fixed.shape != warped.shape:
        raise ValueError(f"grid mismatch: {fixed.shape} vs {warped.shape}")
    return dice_masks(fixed == label_id, warped == label_id)[0]


def mean_dice(fixed_labels, warped_labels):
    """Per-label Dice over shared ids plus mean and population std."""
    shared = sorted(set(fixed_labels.label_ids) & set(warped_labels.label_ids))
    if not shared:
        raise LabelNotFoundError("no label ids shared between the two label maps")
    per_label = [(i, dice(fixed_labels, warped_labels, i)) for i in shared]
    values = np.array([d for _, d in per_label])
    return per_label, float(values.mean()), float(values.std())


def boundary(mask):
    """Voxels with at least one 6-neighbour outside the mask (grid exterior counts)."""
    mask = np.asarray(mask, dtype=bool)
    inner = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(3, 1),
                                   border_value=0)
    return mask & ~inner


def _boundary_points(mask, spacing):
    return np.argwhere(boundary(mask)) * np.asarray(spacing, dtype=np.float64)


def nearest_rank(values, q):
    values = np.sort(np.asarray(values, dtype=np.float64))
    rank = max(math.ceil(q / 100.0 * len(values)), 1)
    return float(values[rank - 1])


def hd95(mask_a, mask_b, spacing=(1.0, 1.0, 1.0)):
    """Symmetric 95th-percentile boundary distance in mm.

    Directed nearest-boundary distances in both directions are pooled and
    the 95th percentile is taken by nearest rank.
    """
    a, b = _data(mask_a) != 0, _data(mask_b) != 0
    if a.shape != b.shape:
        raise ValueError(f"mask shape mismatch: {a.shape} vs {b.shape}")
    if not a.any() or not b.any():
        raise DegenerateInputError("hd95 needs two non-empty masks")
    pa = _boundary_points(a, spacing)
    pb = _boundary_points(b, spacing)
    d_ab = cKDTree(pb).query(pa)[0]
    d_ba = cKDTree(pa).query(pb)[0]
    return nearest_rank(np.concatenate([d_ab, d_ba]), 95)


def foreground_mask(labels, dilation=2):
    """Union of nonzero labels dilated by ``dilation`` voxels (6-connected)."""
    fg = _data(labels) != 0
    if dilation > 0 and fg.any():
        fg = ndimage.binary_dilation(fg, structure=ndimage.generate_binary_structure(3, 1),
                                     iterations=dilation)
    return fg


def neg_jacobian_pct(field, fg_mask):
    fg = _data(fg_mask) != 0
    if fg.shape != field.grid.dims:
        raise ValueError(f"mask shape {fg.shape} does not match field dims {field.grid.dims}")
    n = int(fg.sum())
    if n == 0:
        raise DegenerateInputError("foreground mask is empty")
    det = jacobian_determinant(field).data
    return 100.0 * int((det[fg] < 0).sum()) / n


def evaluate(fixed_labels, warped_labels, field, spacing=None, fg_dilation=2):
    """All evaluation metrics as a plain dict suitable for the JSON report."""
    spacing = fixed_labels.grid.spacing if spacing is None else spacing
    per_label, mean, std = mean_dice(fixed_labels, warped_labels)
    rows = []
    for label_id, d in per_label:
        a, b = fixed_labels.data == label_id, warped_labels.data == label_id
        _, degenerate = dice_masks(a, b)
        rows.append({"label": label_id, "dice": d, "dice_degenerate": degenerate,
                     "hd95_mm": hd95(a, b, spacing)})
    fg = foreground_mask(fixed_labels, fg_dilation)
    hd_values = [r["hd95_mm"] for r in rows]
    return {
        "per_label": rows,
        "mean_dice": mean,
        "std_dice": std,
        "mean_hd95_mm": float(np.mean(hd_values)),
        "neg_jacobian_pct": neg_jacobian_pct(field, fg),
        "foreground": f"nonzero labels dilated by {fg_dilation} voxels (6-connected)",
    }


def format_table(metrics):
    """Plain-text table: % |J|<0, HD95, per-label Dice, average Dice."""
    labels = [r["label"] for r in metrics["per_label"]]
    head = ["%|J|<0", "HD95"] + [f"L{i}" for i in labels] + ["Avg Dice"]
    vals = [f"{metrics['neg_jacobian_pct']:.3f}", f"{metrics['mean_hd95_mm']:.2f}"]
    vals += [f"{r['dice']:.3f}" for r in metrics["per_label"]]
    vals += [f"{100 * metrics['mean_dice']:.2f}+-{100 * metrics['std_dice']:.2f}"]
    width = [max(len(h), len(v)) for h, v in zip(head, vals)]
    line = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, width))
    return line(head) + "\n" + line(vals) + "\n"
