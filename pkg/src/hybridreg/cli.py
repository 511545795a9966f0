"""Command-line entry point: ``hybridreg <subcommand> ...``.

Exit codes: 0 success, 1 I/O or validation failure, 2 numerical abort.
Registration writes ``report.json`` without timings so that repeated runs
are byte-identical; wall-clock times go to ``timings.json``.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .deformable import DeformableOptions
from .exceptions import FormatError, NumericalError, StageError
from .fields import DisplacementField
from .io import load_field, load_volume, save_field, save_volume
from .metrics import evaluate, format_table
from .pipeline import RegistrationOptions, register_hybrid
from .volume import LabelVolume, normalize_minmax

log = logging.getLogger("hybridreg")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

# flat config keys, mirroring flag names with dashes as underscores
REGISTER_DEFAULTS = {
    "lambda": 0.2,
    "grid_spacing": 4.0,
    "max_iters": 200,
    "step_size": 0.1,
    "skip_rigid": False,
    "skip_prereg": False,
    "smooth_on_hybrid": False,
    "threads": None,
    "seed": 0,
    "format": "nifti",
}


class InputError(ValueError):
    pass


def _ext(fmt):
    return ".raw" if fmt == "raw" else ".nii"


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load(path, kind=None, what="volume"):
    if path is None:
        raise InputError(f"missing required --{what}")
    if not Path(path).exists() and not Path(path).with_suffix(".raw").exists():
        raise InputError(f"{what}: no such file {path}")
    return load_volume(path, kind)


def resolve_config(args):
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = dict(REGISTER_DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"config: {exc}") from exc
        if not isinstance(loaded, dict):
            raise InputError("config must be a JSON object")
        loaded = {k.replace("-", "_"): v for k, v in loaded.items()}
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise InputError(f"config: unknown keys {unknown}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, "lam" if key == "lambda" else key, None)
        if val is not None and val is not False:
            cfg[key] = val
    if cfg["threads"] is None:
        cfg["threads"] = os.cpu_count() or 1
    if cfg["format"] not in ("nifti", "raw"):
        raise InputError(f"format must be 'nifti' or 'raw', got {cfg['format']!r}")
    return cfg


def options_from_config(cfg):
    try:
        deformable = DeformableOptions(lam=float(cfg["lambda"]), step_size=float(cfg["step_size"]),
                                       max_iters=int(cfg["max_iters"]),
                                       grid_spacing_vox=float(cfg["grid_spacing"]),
                                       smooth_on_hybrid=bool(cfg["smooth_on_hybrid"]))
        threads = int(cfg["threads"])
        if threads < 1:
            raise ValueError("threads must be >= 1")
    except (TypeError, ValueError) as exc:
        raise InputError(f"config: {exc}") from exc
    return RegistrationOptions(deformable=deformable, skip_rigid=bool(cfg["skip_rigid"]),
                               skip_prereg=bool(cfg["skip_prereg"]), threads=threads)


def cmd_register(args):
    cfg = resolve_config(args)
    opts = options_from_config(cfg)
    fixed = _load(args.fixed, "scalar", "fixed")
    moving = _load(args.moving, "scalar", "moving")
    labels = _load(args.labels, "label", "labels")
    moving_labels = _load(args.moving_labels, "label", "moving-labels") if args.moving_labels else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    result = register_hybrid(fixed, moving, labels, opts, labels_moving=moving_labels)

    ext = _ext(cfg["format"])
    save_field(result.hybrid_field, out / f"field{ext}")
    save_volume(result.warped, out / f"warped{ext}")
    save_volume(result.warped_labels, out / f"warped_labels{ext}")
    report = result.report(include_timings=False)
    report["cli_config"] = dict(cfg)
    report["inputs"] = {"fixed": str(args.fixed), "moving": str(args.moving), "labels": str(args.labels),
                        "moving_labels": str(args.moving_labels) if args.moving_labels else None}
    _dump_json(report, out / "report.json")
    _dump_json({"timings_s": result.timings, "threads": cfg["threads"]}, out / "timings.json")
    table = format_table(result.metrics) if result.metrics else "no labels to evaluate"
    (out / "metrics.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def cmd_phantom(args):
    from .phantom import PhantomSpec, gt_hybrid_field, make_phantom

    kw = {"seed": args.seed if args.seed is not None else 0}
    if args.dims:
        kw["dims"] = tuple(args.dims)
    if args.noise is not None:
        kw["noise_sigma"] = args.noise
    try:
        spec = PhantomSpec(**kw)
    except ValueError as exc:
        raise InputError(f"phantom spec: {exc}") from exc
    pair = make_phantom(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = _ext(args.format)
    save_volume(pair.fixed, out / f"fixed{ext}")
    save_volume(pair.moving, out / f"moving{ext}")
    save_volume(pair.fixed_labels, out / f"fixed_labels{ext}")
    save_volume(pair.moving_labels, out / f"moving_labels{ext}")
    save_field(gt_hybrid_field(pair), out / f"gt_field{ext}")
    rigids = [{"label": i, **p.to_dict()} for i, p in enumerate(pair.gt_rigids, start=1)]
    _dump_json({"seed": spec.seed, "dims": list(spec.dims), "rigids": rigids}, out / "gt_rigids.json")
    print(f"phantom seed {spec.seed} written to {out}")
    return EXIT_OK


def cmd_warp(args):
    moving = _load(args.moving, "label" if args.nearest else None, "moving")
    if args.field is None:
        raise InputError("missing required --field")
    field = load_field(args.field)
    if field.grid.dims != moving.grid.dims:
        raise InputError(f"field dims {field.grid.dims} differ from volume dims {moving.grid.dims}")
    from .resample import warp_labels, warp_scalar

    warped = warp_labels(moving, field) if isinstance(moving, LabelVolume) else warp_scalar(moving, field)
    save_volume(warped, args.out)
    return EXIT_OK


def cmd_metrics(args):
    fixed = _load(args.fixed_labels, "label", "fixed-labels")
    warped = _load(args.warped_labels, "label", "warped-labels")
    if fixed.grid.dims != warped.grid.dims:
        raise InputError("label maps must share a grid")
    if args.field:
        field = load_field(args.field)
    else:
        field = DisplacementField(fixed.grid, np.zeros((3, *fixed.grid.dims)))
    if not fixed.label_ids:
        raise InputError("fixed label map is empty")
    metrics = evaluate(fixed, warped, field)
    print(format_table(metrics))
    if args.out:
        _dump_json(metrics, args.out)
    return EXIT_OK


def cmd_convert(args):
    v = _load(args.input, args.kind, "in")
    if args.normalize:
        if isinstance(v, LabelVolume):
            raise InputError("--normalize applies to scalar volumes only")
        v = normalize_minmax(v)
    save_volume(v, args.out)
    return EXIT_OK


def cmd_msl_check(args):
    from .msl_check import run_checks

    results = run_checks()
    for name, passed, detail, secs in results:
        extra = f" ({detail})" if detail else ""
        print(f"{'PASS' if passed else 'FAIL'}  {name}{extra}  [{secs:.3f}s]")
    failed = sum(not r[1] for r in results)
    print(f"{len(results) - failed}/{len(results)} properties passed")
    return EXIT_OK if failed == 0 else EXIT_INPUT


def build_parser():
    p = argparse.ArgumentParser(prog="hybridreg", description="Rigid-deformable hybrid registration.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("register", help="register moving onto fixed")
    r.add_argument("--fixed")
    r.add_argument("--moving")
    r.add_argument("--labels", help="fixed-image label map")
    r.add_argument("--moving-labels", help="moving-image label map, used for evaluation only")
    r.add_argument("--out", required=True)
    r.add_argument("--config", help="JSON file with flat keys named like the flags")
    r.add_argument("--lambda", dest="lam", type=float)
    r.add_argument("--grid-spacing", type=float)
    r.add_argument("--max-iters", type=int)
    r.add_argument("--step-size", type=float)
    r.add_argument("--skip-rigid", action="store_true")
    r.add_argument("--skip-prereg", action="store_true")
    r.add_argument("--smooth-on-hybrid", action="store_true")
    r.add_argument("--threads", type=int)
    r.add_argument("--seed", type=int, help="accepted for symmetry; registration is deterministic")
    r.add_argument("--format", choices=("nifti", "raw"))
    r.set_defaults(func=cmd_register)

    ph = sub.add_parser("phantom", help="write a synthetic spine phantom pair")
    ph.add_argument("--out", required=True)
    ph.add_argument("--seed", type=int)
    ph.add_argument("--dims", type=int, nargs=3)
    ph.add_argument("--noise", type=float)
    ph.add_argument("--format", choices=("nifti", "raw"), default="nifti")
    ph.set_defaults(func=cmd_phantom)

    w = sub.add_parser("warp", help="resample a volume with a displacement field")
    w.add_argument("--moving", required=True)
    w.add_argument("--field")
    w.add_argument("--out", required=True)
    w.add_argument("--nearest", action="store_true", help="treat input as labels")
    w.set_defaults(func=cmd_warp)

    m = sub.add_parser("metrics", help="Dice, HD95 and folding for a pair of label maps")
    m.add_argument("--fixed-labels", required=True)
    m.add_argument("--warped-labels", required=True)
    m.add_argument("--field")
    m.add_argument("--out")
    m.set_defaults(func=cmd_metrics)

    c = sub.add_parser("convert", help="convert between NIfTI and raw+JSON")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--kind", choices=("scalar", "label"))
    c.add_argument("--normalize", action="store_true", help="min-max rescale to [0, 1]")
    c.set_defaults(func=cmd_convert)

    k = sub.add_parser("msl-check", help="run the Mamba-Swin layer property suite")
    k.set_defaults(func=cmd_msl_check)
    return p


def _is_numeric(exc):
    return isinstance(exc, (NumericalError, FloatingPointError, OverflowError, ZeroDivisionError))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        code = EXIT_NUMERIC if _is_numeric(exc.cause) else EXIT_INPUT
        print(f"error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return code
    except (InputError, FormatError, OSError, ValueError, TypeError, KeyError) as exc:
        print(f"error in stage '{args.command}' input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:
        if _is_numeric(exc):
            print(f"numerical error in '{args.command}': {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        raise


if __name__ == "__main__":
    sys.exit(main())
