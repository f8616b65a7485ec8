"""Command-line front end: synth, decompose, flow, metrics, strain, scanline.

Every command writes its outputs plus a JSON run report.  Exit status is 0 on
success, 2 on invalid input (one-line diagnostic on stderr) and 1 on any
other failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .driver import PROLONGATIONS, MorphFlowConfig, run, run_baseline
from .lattice import ValidationError
from .lifting import LiftingMode, analyze
from .metrics import (AXES, SsimParams, StrainField, ml_ssim, residual, residual_stats, rmse,
                      scanline, ssim, strain)
from .synth import PRESETS, CrackOpen, Translate, deform, make_phantom
from .tvl1 import SolverParams
from .volume import (RawFormatError, Volume, VolumeMeta, load_field, load_raw, load_volume,
                     save_field, save_raw, warp)

THREADS_ENV = "MORPHFLOW_THREADS"


@dataclass
class RunReport:
    command: str
    parameters: dict
    version: str = __version__
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: list = field(default_factory=list)
    levels: list = field(default_factory=list)
    results: dict = field(default_factory=dict)
    seconds: float | None = None

    def add_input(self, path):
        self.inputs[str(path)] = _sha256(path)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), sort_keys=True, indent=2) + "\n")
        return path


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- input helpers

def _load_input(path, args, report: RunReport) -> Volume:
    """Read a volume via its sidecar, or as a headerless raw file given --shape."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"input not found: {path}")
    report.add_input(path)
    sidecar = Path(str(path) + ".json")
    if sidecar.exists():
        return load_volume(path)
    if not getattr(args, "shape", None):
        raise ValidationError(f"{path} has no .json sidecar; pass --shape NX NY NZ")
    return load_raw(path, VolumeMeta(tuple(args.shape), args.dtype))


def _load_field_input(prefix, report: RunReport):
    prefix = str(prefix)
    if not Path(prefix + ".json").exists():
        raise ValidationError(f"field sidecar not found: {prefix}.json")
    for c in "uvw":
        report.add_input(f"{prefix}_{c}.raw")
    return load_field(prefix)


def _float32(volume: Volume) -> Volume:
    return Volume(volume.lattice, volume.data.astype(np.float32), volume.original_extents)


def _write_pgm(path, image: np.ndarray):
    """8-bit binary PGM, rows top to bottom, linear map of [min, max] to [0, 255]."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    scaled = np.zeros_like(img) if hi <= lo else (img - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


# ---------------------------------------------------------------- commands

def cmd_synth(args, report: RunReport):
    if args.preset not in PRESETS:
        raise ValidationError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
    spec = PRESETS[args.preset]
    spec = type(spec)(**{**asdict(spec), "seed": args.seed})
    fixed = make_phantom(spec)
    if args.crack_open is not None:
        if spec.crack is None:
            raise ValidationError("--crack-open needs a preset with a crack")
        c = spec.crack
        truth = CrackOpen(axis=c.axis, position=c.position + c.opening / 2.0 - 0.5,
                          opening=args.crack_open)
    else:
        truth = Translate(tuple(args.shift))
    moving, field_ = deform(fixed, truth)
    prefix = args.out_prefix
    outs = []
    for name, vol in (("fixed", fixed), ("moving", moving)):
        path = Path(f"{prefix}_{name}.raw")
        save_raw(_float32(vol), path)
        outs += [str(path), str(path) + ".json"]
    outs += [str(p) for p in save_field(field_, f"{prefix}_truth")]
    spec_path = Path(f"{prefix}_spec.json")
    spec_json = {"phantom": spec.to_json(), "deformation": {type(truth).__name__: asdict(truth)}}
    spec_path.write_text(json.dumps(spec_json, sort_keys=True, indent=2) + "\n")
    outs.append(str(spec_path))
    report.outputs = outs


def cmd_decompose(args, report: RunReport):
    vol = _load_input(args.input, args, report)
    dec = analyze(vol, args.levels, LiftingMode(args.mode))
    manifest = {"mode": dec.mode.value, "levels": []}
    for level in range(dec.levels + 1):
        approx = dec.approximation(level)
        path = Path(f"{args.out_prefix}_level{level:02d}.raw")
        save_raw(approx, path)
        report.outputs.append(str(path))
        manifest["levels"].append({"level": level, "path": path.name,
                                   "lattice": approx.lattice.to_json()})
    mpath = Path(f"{args.out_prefix}_manifest.json")
    mpath.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    report.outputs.append(str(mpath))


def cmd_flow(args, report: RunReport):
    fixed = _load_input(args.fixed, args, report)
    moving = _load_input(args.moving, args, report)
    solver = SolverParams(tau=args.tau, lam=args.lam, theta=args.theta, warps=args.warps,
                          inner_iters=args.iters, primal_update=args.primal_update)
    config = MorphFlowConfig(l_start=args.l_start, l_end=args.l_end, solver=solver, mode=args.mode,
                             prolongation=args.prolongation)
    stages = []
    if args.pyramid == "morph":
        u = run(fixed, moving, config, stages)
    else:
        u = run_baseline(fixed, moving, args.pyramid, config, stages)
    report.levels = [s.to_json() for s in stages]
    report.outputs = [str(p) for p in save_field(u, args.out_prefix)]
    if u.lattice.same_grid(fixed.lattice):
        report.results = {"rmse_initial": rmse(fixed, moving),
                          "rmse_warped": rmse(fixed, warp(moving, u))}


def cmd_metrics(args, report: RunReport):
    a = _load_input(args.a, args, report)
    b = _load_input(args.b, args, report)
    params = SsimParams(window_edge=args.window, levels_M=args.levels_m)
    warped = b
    field_ = None
    if args.field:
        field_ = _load_field_input(args.field, report)
        warped = warp(b, field_)
    res = residual(a, b, field_)
    results = {
        "rmse": rmse(a, warped),
        "ssim": ssim(a, warped, params),
        "ml_ssim": ml_ssim(a, warped, params),
        "residual": residual_stats(res),
    }
    if args.residual_out:
        save_raw(_float32(res), args.residual_out)
        report.outputs.append(str(args.residual_out))
    report.results = results
    print(json.dumps(results, sort_keys=True))


def cmd_strain(args, report: RunReport):
    f = _load_field_input(args.field, report)
    eps = strain(f)
    for name in StrainField.COMPONENTS:
        path = Path(f"{args.out_prefix}_{name}.raw")
        save_raw(Volume(f.lattice, eps.component(name).astype(np.float32)), path)
        report.outputs.append(str(path))
    axis = AXES[args.slice_axis]
    ext = f.lattice.extents
    index = ext[axis] // 2 if args.slice_index is None else args.slice_index
    if not 0 <= index < ext[axis]:
        raise ValidationError(f"slice index {index} outside 0..{ext[axis] - 1}")
    image = np.take(eps.e33, index, axis=axis).T  # rows follow the higher remaining axis
    pgm = Path(f"{args.out_prefix}_e33_{args.slice_axis}{index:03d}.pgm")
    _write_pgm(pgm, image)
    report.outputs.append(str(pgm))
    e33 = eps.e33
    report.results = {"e33_max": float(e33.max()),
                      "e33_argmax": [int(i) for i in np.unravel_index(np.argmax(e33), e33.shape)]}


def cmd_scanline(args, report: RunReport):
    vol = _load_input(args.input, args, report)
    rows = scanline(vol, args.axis, args.slice, args.line)
    text = "coordinate,value\n" + "".join(f"{c:.6g},{v:.9g}\n" for c, v in rows)
    if args.out:
        Path(args.out).write_text(text)
        report.outputs.append(str(args.out))
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- parser

def _add_raw_flags(p):
    p.add_argument("--shape", type=int, nargs=3, metavar=("NX", "NY", "NZ"),
                   help="extents of headerless raw inputs")
    p.add_argument("--dtype", default="uint8", choices=("uint8", "uint16", "float32"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="morphflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON file of option defaults; explicit flags win")
        p.add_argument("--threads", type=int, help=f"worker cap (env {THREADS_ENV} if unset)")
        p.add_argument("--report", help="run report path (default <out-prefix>_report.json)")
        return p

    p = command("synth", cmd_synth, "generate a phantom pair with ground truth")
    p.add_argument("--preset", default="grains32")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shift", type=float, nargs=3, default=(1.0, 0.0, 0.0), metavar=("DX", "DY", "DZ"))
    p.add_argument("--crack-open", type=float, help="open the preset's crack by this many voxels")
    p.add_argument("--out-prefix", required=True)

    p = command("decompose", cmd_decompose, "morphological lifting decomposition")
    p.add_argument("--input", required=True)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--mode", default="min", choices=("min", "max"))
    p.add_argument("--out-prefix", required=True)
    _add_raw_flags(p)

    p = command("flow", cmd_flow, "estimate the displacement field between two volumes")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--l-start", type=int, default=12)
    p.add_argument("--l-end", type=int, default=0)
    p.add_argument("--mode", default="min", choices=("min", "max"))
    p.add_argument("--tau", type=float, default=0.25)
    p.add_argument("--lambda", dest="lam", type=float, default=25.0)
    p.add_argument("--theta", type=float, default=0.2)
    p.add_argument("--warps", type=int, default=20)
    p.add_argument("--iters", type=int, default=30)
    p.add_argument("--primal-update", default="prox", choices=("prox", "printed"))
    p.add_argument("--pyramid", default="morph", choices=("morph", "gauss", "haar"))
    p.add_argument("--prolongation", default="midrange", choices=PROLONGATIONS,
                   help="zero-detail predictor for the field between levels")
    p.add_argument("--out-prefix", required=True)
    _add_raw_flags(p)

    p = command("metrics", cmd_metrics, "RMSE, SSIM, ML-SSIM and residual statistics")
    p.add_argument("--a", required=True, help="reference (fixed) volume")
    p.add_argument("--b", required=True, help="compared (moving) volume")
    p.add_argument("--field", help="displacement prefix; b is warped with it first")
    p.add_argument("--window", type=int, default=7)
    p.add_argument("--levels-m", type=int, default=3)
    p.add_argument("--residual-out", help="write the residual volume here")
    _add_raw_flags(p)

    p = command("strain", cmd_strain, "strain components of a displacement field")
    p.add_argument("--field", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--slice-axis", default="y", choices=tuple(AXES))
    p.add_argument("--slice-index", type=int)

    p = command("scanline", cmd_scanline, "grey value profile along one grid line (CSV)")
    p.add_argument("--input", required=True)
    p.add_argument("--axis", default="x", choices=tuple(AXES))
    p.add_argument("--slice", type=int, default=0)
    p.add_argument("--line", type=int, default=0)
    p.add_argument("--out")
    _add_raw_flags(p)
    return parser


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(config, dict):
            raise ValidationError("config file must hold a JSON object")
        config = {k.replace("-", "_"): v for k, v in config.items()}
        if "lambda" in config:
            config["lam"] = config.pop("lambda")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(config) - known)
        if unknown:
            raise ValidationError(f"unknown config keys for {args.command}: {unknown}")
        sub.set_defaults(**config)
        args = parser.parse_args(argv)
    return args


def _thread_cap(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return None


def _report_path(args) -> Path | None:
    if args.report:
        return Path(args.report)
    prefix = getattr(args, "out_prefix", None)
    return Path(f"{prefix}_report.json") if prefix else None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        threads = _thread_cap(args)
        if threads is not None and threads < 1:
            raise ValidationError("--threads must be positive")
        params = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
        report = RunReport(args.command, json.loads(json.dumps(params)))
        start = time.perf_counter()
        if threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                args.func(args, report)
        else:
            args.func(args, report)
        if args.command not in ("synth",):
            report.seconds = time.perf_counter() - start
        path = _report_path(args)
        if path is not None:
            report.write(path)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0)
    except (ValidationError, RawFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0
