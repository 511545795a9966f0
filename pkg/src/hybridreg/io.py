"""Readers and writers for single-file NIfTI-1 and raw + JSON sidecar volumes."""

import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .volume import Grid, LabelVolume, Volume

HEADER_SIZE = 348
VOX_OFFSET = 352
INTENT_VECTOR = 1007

NIFTI_DTYPES = {2: np.dtype("u1"), 4: np.dtype("i2"), 16: np.dtype("f4")}
RAW_DTYPES = {"u8": np.dtype("u1"), "i16": np.dtype("i2"), "f32": np.dtype("f4")}


def _raw_paths(path):
    path = Path(path)
    stem = path.with_suffix("")
    return stem.with_suffix(".raw"), stem.with_suffix(".json")


def _is_raw(path):
    return Path(path).suffix in (".raw", ".json")


# --- NIfTI-1 -----------------------------------------------------------------

def _read_header(buf):
    if len(buf) < HEADER_SIZE:
        raise OSError(f"truncated NIfTI header ({len(buf)} bytes)")
    for endian in "<>":
        if struct.unpack_from(endian + "i", buf, 0)[0] == HEADER_SIZE:
            break
    else:
        raise FormatError("sizeof_hdr", "expected 348")
    magic = buf[344:348]
    if magic != b"n+1\x00":
        raise FormatError("magic", f"unsupported magic {magic!r} (only single-file n+1)")
    u = lambda fmt, off: struct.unpack_from(endian + fmt, buf, off)
    hdr = {
        "endian": endian,
        "dim": u("8h", 40),
        "intent_code": u("h", 68)[0],
        "datatype": u("h", 70)[0],
        "pixdim": u("8f", 76),
        "vox_offset": u("f", 108)[0],
        "scl_slope": u("f", 112)[0],
        "scl_inter": u("f", 116)[0],
        "qform_code": u("h", 252)[0],
        "sform_code": u("h", 254)[0],
        "qoffset": u("3f", 268),
        "srow": (u("4f", 280), u("4f", 296), u("4f", 312)),
    }
    return hdr


def _geometry(hdr):
    dim = hdr["dim"]
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise FormatError("dim", f"invalid dimension count {ndim}")
    dims = tuple(max(int(d), 1) for d in dim[1:4])
    spacing = tuple(abs(float(p)) if p != 0 else 1.0 for p in hdr["pixdim"][1:4])
    origin = (0.0, 0.0, 0.0)
    if hdr["qform_code"] > 0:
        origin = tuple(float(o) for o in hdr["qoffset"])
    elif hdr["sform_code"] > 0:
        srow = np.array(hdr["srow"], dtype=np.float64)
        spacing = tuple(float(s) for s in np.linalg.norm(srow[:, :3], axis=0))
        origin = tuple(float(o) for o in srow[:, 3])
    return Grid(dims, spacing, origin)


def _read_nifti(path):
    buf = Path(path).read_bytes()
    hdr = _read_header(buf)
    dtype = NIFTI_DTYPES.get(hdr["datatype"])
    if dtype is None:
        raise FormatError("datatype", f"unsupported NIfTI datatype code {hdr['datatype']}")
    dtype = dtype.newbyteorder(hdr["endian"])
    grid = _geometry(hdr)
    extra = tuple(max(int(d), 1) for d in hdr["dim"][4:1 + hdr["dim"][0]])
    count = grid.size * int(np.prod(extra, dtype=np.int64))
    offset = int(hdr["vox_offset"])
    nbytes = count * dtype.itemsize
    if len(buf) < offset + nbytes:
        raise OSError(f"truncated NIfTI data: need {offset + nbytes} bytes, file has {len(buf)}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if slope not in (0.0, 1.0) or inter != 0.0:
        arr = arr.astype(np.float64) * (slope if slope != 0 else 1.0) + inter
    return hdr, grid, arr, extra


def _write_nifti(path, grid, arr, datatype, extra_dims=(), intent=0):
    dims = list(grid.dims) + list(extra_dims)
    dim = [len(dims)] + dims + [1] * (7 - len(dims))
    dtype = NIFTI_DTYPES[datatype]
    hdr = bytearray(VOX_OFFSET)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<c", hdr, 38, b"r")
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 68, intent)
    struct.pack_into("<h", hdr, 70, datatype)
    struct.pack_into("<h", hdr, 72, dtype.itemsize * 8)
    pixdim = [1.0, *grid.spacing, 1.0, 1.0, 1.0, 1.0]
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<f", hdr, 112, 1.0)
    struct.pack_into("<B", hdr, 123, 2)  # mm
    struct.pack_into("<h", hdr, 252, 1)
    struct.pack_into("<h", hdr, 254, 1)
    struct.pack_into("<3f", hdr, 268, *grid.origin)
    sx, sy, sz = grid.spacing
    ox, oy, oz = grid.origin
    struct.pack_into("<4f", hdr, 280, sx, 0.0, 0.0, ox)
    struct.pack_into("<4f", hdr, 296, 0.0, sy, 0.0, oy)
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, sz, oz)
    hdr[344:348] = b"n+1\x00"
    data = np.ascontiguousarray(arr, dtype=dtype.newbyteorder("<"))
    with open(path, "wb") as fh:
        fh.write(bytes(hdr))
        fh.write(data.tobytes())


# --- raw + JSON sidecar ---------------------------------------------------------

def _read_raw(path):
    raw_path, json_path = _raw_paths(path)
    try:
        meta = json.loads(json_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError("sidecar", str(exc)) from exc
    for key in ("dims", "spacing", "dtype"):
        if key not in meta:
            raise FormatError(key, "missing from sidecar")
    dtype = RAW_DTYPES.get(meta["dtype"])
    if dtype is None:
        raise FormatError("dtype", f"unsupported raw dtype {meta['dtype']!r}")
    grid = Grid(meta["dims"], meta["spacing"], meta.get("origin", (0.0, 0.0, 0.0)))
    channels = int(meta.get("channels", 1))
    count = grid.size * channels
    buf = raw_path.read_bytes()
    if len(buf) < count * dtype.itemsize:
        raise OSError(f"truncated raw data: need {count * dtype.itemsize} bytes, file has {len(buf)}")
    arr = np.frombuffer(buf, dtype=dtype.newbyteorder("<"), count=count)
    return meta, grid, arr


def _write_raw(path, grid, arr, dtype_name, **extra):
    raw_path, json_path = _raw_paths(path)
    dtype = RAW_DTYPES[dtype_name].newbyteorder("<")
    raw_path.write_bytes(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    meta = {"dims": list(grid.dims), "spacing": list(grid.spacing),
            "origin": list(grid.origin), "dtype": dtype_name, **extra}
    json_path.write_text(json.dumps(meta, indent=2) + "\n")


# --- public API ------------------------------------------------------------------

def load_volume(path, kind=None):
    """Load a Volume or LabelVolume.

    ``kind`` is ``"scalar"``, ``"label"`` or None; with None, uint8 files
    load as labels and everything else as scalars.
    """
    path = Path(path)
    if _is_raw(path):
        meta, grid, arr = _read_raw(path)
        is_label = meta["dtype"] == "u8"
    else:
        hdr, grid, arr, extra = _read_nifti(path)
        if int(np.prod(extra)) != 1:
            raise FormatError("dim", f"expected a 3D volume, got extra dims {extra}")
        is_label = hdr["datatype"] == 2 and arr.dtype.kind != "f"
    if kind == "label" or (kind is None and is_label):
        return LabelVolume.from_flat(grid, arr)
    return Volume.from_flat(grid, arr.astype(np.float32))


def save_volume(v, path):
    path = Path(path)
    if isinstance(v, LabelVolume):
        if v.data.size and v.data.max() > 255:
            raise ValueError("label ids above 255 do not fit the uint8 on-disk format")
        flat = v.flat().astype(np.uint8)
        if _is_raw(path):
            _write_raw(path, v.grid, flat, "u8")
        else:
            _write_nifti(path, v.grid, flat, 2)
    else:
        flat = v.flat().astype(np.float32)
        if _is_raw(path):
            _write_raw(path, v.grid, flat, "f32")
        else:
            _write_nifti(path, v.grid, flat, 16)


def save_field(f, path):
    """Write a displacement field as a 5D vector NIfTI or three raw channels."""
    path = Path(path)
    flat = np.concatenate([c.ravel(order="F") for c in f.data]).astype(np.float32)
    if _is_raw(path):
        _write_raw(path, f.grid, flat, "f32", channels=3, units="voxel")
    else:
        _write_nifti(path, f.grid, flat, 16, extra_dims=(1, 3), intent=INTENT_VECTOR)


def load_field(path):
    from .fields import DisplacementField

    path = Path(path)
    if _is_raw(path):
        meta, grid, arr = _read_raw(path)
        if int(meta.get("channels", 1)) != 3:
            raise FormatError("channels", "displacement field needs 3 channels")
        if meta.get("units", "voxel") != "voxel":
            raise FormatError("units", f"unsupported field units {meta['units']!r}")
    else:
        hdr, grid, arr, extra = _read_nifti(path)
        if int(np.prod(extra)) != 3:
            raise FormatError("dim", f"displacement field needs 3 components, got extra dims {extra}")
    chans = arr.astype(np.float64).reshape(3, -1)
    data = np.stack([c.reshape(grid.dims, order="F") for c in chans])
    return DisplacementField(grid, data)
