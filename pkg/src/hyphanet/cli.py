"""Command-line entry point: generate, segment, close-gaps, features, score, sweep, export-slices."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import inject_gaps, parameter_sweep
from .features import component_features, skeleton_to_graph
from .gaps import GapClosingConfig, close_gaps
from .io import VolumeFileError, load_volume, save_volume, write_pgm
from .metrics import voxel_metrics
from .segmentation import (
    FrangiParams,
    PhansalkarParams,
    apply_threshold,
    frangi_vesselness,
    optimal_threshold_f1,
    phansalkar_threshold,
)
from .synth import SynthesisConfig, generate_trees, render_stack, trees_from_json, trees_to_json
from .volume import Volume

DISTANCE_MODES = {"euclid": "scaled_euclidean", "geodesic": "geodesic_time"}


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------

def _number(text: str) -> float | int:
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_range(text: str) -> list:
    """``a:b:step`` (b included when reached exactly), ``a:b`` (step 1), ``v1,v2,...`` or ``v``."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [_number(p) for p in text.split(":")]
            if len(parts) == 2:
                parts.append(1)
            if len(parts) != 3:
                raise ValueError
            a, b, step = parts
            if step <= 0 or b < a:
                raise ValueError
            n = int(np.floor((b - a) / step + 1e-9)) + 1
            vals = [a + i * step for i in range(n)]
            if all(isinstance(v, int) for v in (a, b, step)):
                return [int(v) for v in vals]
            return [float(np.round(v, 12)) for v in vals]
        vals = [_number(p) for p in text.split(",") if p.strip()]
        if not vals:
            raise ValueError
        return vals
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed range {text!r}; expected a:b:step, a:b or a comma list") from None


def parse_scale(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed scale {text!r}; expected comma-separated numbers") from None
    if not vals or any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError(f"scale components must be positive, got {text!r}")
    return vals


def _json_arg(text: str | None) -> dict:
    """Inline JSON object or a path to a JSON file."""
    if text is None:
        return {}
    path = Path(text)
    raw = path.read_text() if not text.lstrip().startswith("{") and path.is_file() else text
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CliError(f"could not parse JSON parameters {text!r}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CliError("JSON parameters must be an object")
    return doc


def _write_json(doc: dict, path) -> None:
    text = json.dumps(doc, sort_keys=True, indent=1) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _check_dims(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise CliError(f"incompatible dims for {what}: {list(a.shape)} vs {list(b.shape)}")


def _binary(vol: Volume, name: str) -> np.ndarray:
    data = np.asarray(vol.data)
    if vol.kind != "binary":
        if data.size and not np.all((data == 0) | (data == 1)):
            raise CliError(f"{name} must be a binary volume")
    return data.astype(np.uint8)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> None:
    config = SynthesisConfig.from_dict(_json_arg(args.config))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trees = generate_trees(config, args.seed)
    stack, gt = render_stack(trees, config, args.seed)
    save_volume(Volume(stack.astype(np.float32), kind="gray"), out / "stack.raw")
    save_volume(Volume(gt, kind="binary"), out / "gt.raw")
    echo = {"seed": args.seed, "config": config.to_dict()}
    (out / "trees.json").write_text(trees_to_json(trees, config.dims, {"seed": args.seed}) + "\n")
    _write_json(
        {**echo, "network_count": len(trees), "noxels": int(gt.sum()), "files": ["stack.raw", "gt.raw", "trees.json"]},
        out / "generate.json",
    )


def cmd_segment(args) -> None:
    vol = load_volume(args.inp)
    params = _json_arg(args.params)
    data = np.asarray(vol.data, dtype=np.float64)
    report: dict = {"method": args.method, "input": str(args.inp)}
    if args.method == "frangi":
        fp = FrangiParams(**params)
        info: dict = {}
        result = frangi_vesselness(data, fp, report=info)
        report["params"] = asdict(fp)
        report["c"] = info["c"]
        out = Volume(result.astype(np.float32), vol.scale, "gray")
    elif args.method == "phansalkar":
        pp = PhansalkarParams(**params)
        report["params"] = asdict(pp)
        out = Volume(phansalkar_threshold(data, pp), vol.scale, "binary")
    else:
        unknown = set(params) - {"t"}
        if unknown or "t" not in params:
            raise CliError("threshold method takes exactly one parameter 't'")
        report["params"] = {"t": float(params["t"])}
        out = Volume(apply_threshold(data, float(params["t"])), vol.scale, "binary")
    save_volume(out, args.out)

    if args.gt is not None:
        gt = _binary(load_volume(args.gt), "ground truth")
        _check_dims(out.data, gt, "segmentation and ground truth")
        if out.kind == "gray":
            t, best = optimal_threshold_f1(out.data, gt)
            report["optimal_threshold"] = t
            report["metrics"] = best.to_dict()
        else:
            report["metrics"] = voxel_metrics(out.data, gt).to_dict()
    if args.report is not None or args.gt is not None:
        _write_json(report, args.report)


def cmd_close_gaps(args) -> None:
    vol = load_volume(args.inp)
    skel = _binary(vol, "input skeleton")
    scale = args.scale if args.scale is not None else vol.scale
    if len(scale) != skel.ndim:
        raise CliError(f"--scale has {len(scale)} entries for a {skel.ndim}-D volume")
    config = GapClosingConfig(
        max_gap=args.max_gap,
        scale=tuple(scale),
        distance_mode=DISTANCE_MODES[args.distance],
        isolated_as_endpoints=args.isolated_endpoints,
    )
    out, report = close_gaps(skel, config)
    save_volume(Volume(out, vol.scale, "binary"), args.out)
    if args.report is not None:
        _write_json(report.to_dict(), args.report)


def cmd_features(args) -> None:
    vol = load_volume(args.inp)
    skel = _binary(vol, "input skeleton")
    scale = args.scale if args.scale is not None else vol.scale
    if len(scale) != skel.ndim:
        raise CliError(f"--scale has {len(scale)} entries for a {skel.ndim}-D volume")
    report = component_features(skeleton_to_graph(skel), scale)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".csv":
        out.write_text(report.to_csv())
    elif out.suffix == ".json":
        out.write_text(report.to_json())
    else:
        raise CliError(f"--out must end in .csv or .json, got {out.name}")


def cmd_score(args) -> None:
    pred = _binary(load_volume(args.pred), "prediction")
    gt = _binary(load_volume(args.gt), "ground truth")
    _check_dims(pred, gt, "prediction and ground truth")
    _write_json({"pred": str(args.pred), "gt": str(args.gt), "metrics": voxel_metrics(pred, gt).to_dict()}, args.out)


def _is_tree_file(path: Path) -> bool:
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return False
    return isinstance(doc, dict) and isinstance(doc.get("networks"), list)


def _sweep_inputs(args):
    """(trees, dims, injection seed, source label) per record."""
    if args.trees is not None:
        files = [f for f in sorted(Path(args.trees).glob("*.json")) if _is_tree_file(f)]
        if not files:
            raise CliError(f"no tree JSON files in {args.trees}")
        seeds = args.seeds if args.seeds is not None else list(range(len(files)))
        if len(seeds) < len(files):
            raise CliError(f"--seeds lists {len(seeds)} seeds for {len(files)} tree files")
        out = []
        for f, s in zip(files, seeds):
            try:
                trees, dims = trees_from_json(f.read_text())
            except (ValueError, KeyError) as exc:
                raise CliError(f"{f}: not a tree file ({exc})") from exc
            if dims is None:
                raise CliError(f"{f}: tree file lacks 'dims'")
            out.append((trees, dims, int(s), f.name))
        return out, None
    if args.seeds is None:
        raise CliError("sweep needs --trees or --seeds")
    config = SynthesisConfig.from_dict(_json_arg(args.config))
    return [(generate_trees(config, int(s)), config.dims, int(s), f"seed {s}") for s in args.seeds], config


def cmd_sweep(args) -> None:
    inputs, config = _sweep_inputs(args)
    records = [
        inject_gaps(trees, dims, tuple(args.gap_count), tuple(args.gap_size), seed)
        for trees, dims, seed, _ in inputs
    ]
    surface = parameter_sweep(records, args.l, args.sz, threads=args.threads)
    extra = {
        "sources": [name for *_, name in inputs],
        "injection_seeds": [seed for _, _, seed, _ in inputs],
        "gap_count_range": list(args.gap_count),
        "gap_size_range": list(args.gap_size),
        "flank_pairs": [len(r.flank_pairs) for r in records],
        "synthesis_config": None if config is None else config.to_dict(),
        "gap_closing": {"scale": "(1, 1, s_z)", "distance_mode": "scaled_euclidean", "isolated_as_endpoints": False},
    }
    surface.write(args.out, extra)


def cmd_export_slices(args) -> None:
    vol = load_volume(args.inp)
    data = np.asarray(vol.data, dtype=np.float64)
    if data.ndim != 3:
        raise CliError(f"export-slices needs a 3-D volume, got {data.ndim}-D")
    zs = args.z if args.z is not None else list(range(data.shape[2]))
    bad = [z for z in zs if not (isinstance(z, int) and 0 <= z < data.shape[2])]
    if bad:
        raise CliError(f"slice indices out of range [0, {data.shape[2]}): {bad}")
    if args.normalize and data.size and data.max() > 0:
        data = data / data.max()
    out = Path(args.out_dir)
    width = len(str(data.shape[2] - 1))
    for z in zs:
        write_pgm(data[:, :, z], out / f"{args.prefix}{z:0{width}d}.pgm")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyphanet", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads (results do not depend on it)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a stack, its ground-truth skeleton and tree JSON")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", help="synthesis config as inline JSON or a JSON file")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("segment", help="Frangi vesselness, Phansalkar or global threshold")
    p.add_argument("--method", choices=("frangi", "phansalkar", "threshold"), required=True)
    p.add_argument("--params", help="method parameters as inline JSON or a JSON file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt", help="ground truth; adds metrics (optimal-F1 for Frangi) to the report")
    p.add_argument("--report", help="report JSON path (stdout when --gt is given without it)")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("close-gaps", help="reconnect skeleton fragments with a minimum spanning tree")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-gap", type=float, required=True)
    p.add_argument("--scale", type=parse_scale, help="sx,sy,sz (default: the volume header's scale)")
    p.add_argument("--distance", choices=tuple(DISTANCE_MODES), default="euclid")
    p.add_argument("--isolated-endpoints", action="store_true", help="let isolated noxels source edges")
    p.add_argument("--report")
    p.set_defaults(func=cmd_close_gaps)

    p = sub.add_parser("features", help="per-network depth, mass and branching")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--scale", type=parse_scale)
    p.add_argument("--out", required=True, help="*.csv or *.json")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("score", help="voxel precision / recall / F1 of a mask against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="report JSON (default: stdout)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("sweep", help="endpoint metrics of gap closing over (l, s_z)")
    p.add_argument("--trees", help="directory of tree JSON files (as written by generate)")
    p.add_argument("--config", help="synthesis config for --seeds without --trees")
    p.add_argument("--seeds", type=parse_range, help="generation seeds, or injection seeds with --trees")
    p.add_argument("--l", type=parse_range, required=True)
    p.add_argument("--sz", type=parse_range, required=True)
    p.add_argument("--gap-count", type=int, nargs=2, default=(1, 5), metavar=("LO", "HI"))
    p.add_argument("--gap-size", type=int, nargs=2, default=(1, 10), metavar=("LO", "HI"))
    p.add_argument("--out", required=True, help="output directory for the CSVs and surface.json")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-slices", help="write z-slices as 8-bit PGM images")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--z", type=parse_range, help="slice indices (default: all)")
    p.add_argument("--prefix", default="slice_")
    p.add_argument("--normalize", action="store_true", help="scale by the volume maximum first")
    p.set_defaults(func=cmd_export_slices)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        args.func(args)
    except (CliError, VolumeFileError, OSError, ValueError, TypeError) as exc:
        print(f"hyphanet {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
