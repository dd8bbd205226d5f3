"""Command-line entry point: ``sparse4d <subcommand> [flags]``.

Exit codes: 0 success, 1 validation failure (JSON error on stderr), 2 usage.
Option precedence is flags > ``--config file.json`` > built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .attention import attn_check
from .errors import BudgetExceededError
from .fileio import load_manifest, load_obj, load_points, write_point_frames
from .flops import REFERENCE_ARCH, ArchConfig, calibrate_at, predict_scaling, scaling_csv, scaling_svg
from .geometry import (
    build_tracked_sequence,
    check_watertight,
    concatenate,
    detect_sharp_edges,
    normalize_sequence,
    sample_sharp,
    sample_uniform,
)
from .mask import GridSpec, build_block_mask, density_report, parse_schedule, parse_variant, render_mask
from .metrics import DEFAULT_TAU, chamfer_distance, f_score, voxel_iou
from .rope import DEFAULT_BASE, build_rope_table, dump_table_csv

OUT_DIR_ENV = "SPARSE4D_OUT_DIR"
SIG_DIGITS = 9


class ValidationError(Exception):
    pass


def _round_floats(obj):
    if isinstance(obj, float):
        return float(f"{obj:.{SIG_DIGITS}g}")
    if isinstance(obj, (np.floating,)):
        return _round_floats(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def dumps_report(obj) -> str:
    return json.dumps(_round_floats(obj), indent=2, sort_keys=True) + "\n"


def _resolved_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    return _round_floats(cfg)


def _envelope(args, result: dict, seed=None) -> dict:
    return {**result, "config": _resolved_config(args), "seed": seed, "version": __version__}


def _emit(text: str, path: str | None):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _frames_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad frame list {text!r}") from exc


def _calibration(text: str) -> tuple[float, int]:
    ratio, _, ref = text.partition("@")
    try:
        return float(ratio), int(ref) if ref else 16
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected RATIO@FRAMES, got {text!r}") from exc


def cmd_mask(args) -> int:
    grid = GridSpec(args.frames, args.tokens, args.block)
    mask = build_block_mask(grid, parse_variant(args.variant, args.schedule))
    if args.render:
        render_mask(mask, args.render)
    _emit(dumps_report(_envelope(args, density_report(mask))), args.report)
    return 0


def cmd_flops(args) -> int:
    variant = parse_variant(args.variant, args.schedule)
    arch = ArchConfig(tokens_per_frame=args.tokens, block_size=args.block)
    kappa = None
    ref = 16
    if args.calibrate_total is not None:
        target, ref = args.calibrate_total
        kappa = calibrate_at(arch, variant, target, ref)
    points = predict_scaling(arch, variant, args.frames, kappa, ref)
    header = dumps_report(_envelope(args, {"kappa_ref": kappa, "reference_frames": ref}))
    text = "".join(f"# {line}\n" for line in header.splitlines()) + scaling_csv(points)
    _emit(text, args.out)
    if args.svg:
        Path(args.svg).write_text(scaling_svg(points))
    return 0


def cmd_attn_check(args) -> int:
    variant = parse_variant(args.variant, args.schedule)
    result = attn_check(args.frames, args.tokens, args.block, variant, seeds=args.seeds,
                        tolerance=args.tolerance, heads=args.heads, head_dim=args.head_dim,
                        use_rope=not args.no_rope, max_tokens=args.max_tokens)
    _emit(dumps_report(_envelope(args, result, seed=list(range(args.seeds)))), args.report)
    return 0 if result["seeds_passed"] == result["seeds"] else 1


def cmd_rope(args) -> int:
    table = build_rope_table(args.head_dim, args.base, args.frames)
    if args.dump is not None:
        _emit(dump_table_csv(table), args.dump)
    else:
        _emit(dumps_report(_envelope(args, {
            "head_dim": table.head_dim, "base": table.base, "max_frames": table.max_frames,
            "frequencies": table.frequencies.tolist(),
        })), None)
    return 0


def cmd_sample(args) -> int:
    manifest = load_manifest(args.manifest)
    rest = load_obj(manifest["rest"])
    parts = []
    if args.uniform:
        parts.append(sample_uniform(rest, args.uniform, seed=args.seed))
    if args.sharp:
        edges = detect_sharp_edges(rest, args.threshold)
        parts.append(sample_sharp(rest, edges, args.sharp, seed=None if args.seed is None else args.seed + 1))
    if not parts:
        raise ValidationError("nothing to sample: --uniform and --sharp are both 0")
    samples = concatenate(parts)
    deformed = [load_obj(f["deformed"]) for f in manifest["frames"]]
    watertight = None
    if all(f["watertight"] for f in manifest["frames"]):
        watertight = [load_obj(f["watertight"]) for f in manifest["frames"]]
        for k, m in enumerate(watertight):
            check_watertight(m, f"watertight mesh of frame {k}")
    if args.fps and args.fps > len(samples):
        raise ValidationError(f"--fps {args.fps} exceeds sample count {len(samples)}")
    seq = build_tracked_sequence(samples, deformed, watertight, fps_k=args.fps or None, seed=args.seed)
    seq, center, scale = normalize_sequence(seq)

    out = Path(args.out)
    extra = _round_floats({"center": center.tolist(), "scale": scale, "tags": "sharp=1,uniform=0",
                           "config": _resolved_config(args), "seed": args.seed, "version": __version__})
    write_point_frames(out, seq.positions, seq.normals, extra_header=extra)
    np.save(out / "tags.npy", seq.tags)
    if seq.fps_indices is not None:
        (out / "fps.json").write_text(json.dumps(seq.fps_indices.tolist()) + "\n")
    return 0


def cmd_metrics(args) -> int:
    result = {}
    if args.pred or args.gt:
        if not (args.pred and args.gt):
            raise ValidationError("--pred and --gt must be given together")
        a, b = load_points(args.pred), load_points(args.gt)
        result["chamfer"] = chamfer_distance(a, b, squared=args.squared)
        result["fscore"] = f_score(a, b, args.tau)
    if args.mesh_pred or args.mesh_gt:
        if not (args.mesh_pred and args.mesh_gt):
            raise ValidationError("--mesh-pred and --mesh-gt must be given together")
        result["iou"] = voxel_iou(load_obj(args.mesh_pred), load_obj(args.mesh_gt), args.iou_res)
    if not result:
        raise ValidationError("give --pred/--gt and/or --mesh-pred/--mesh-gt")
    _emit(dumps_report(_envelope(args, result)), args.report)
    return 0


def _add_grid_flags(p, frames_default=16, tokens_default=4096, block_default=128):
    p.add_argument("--frames", type=int, default=frames_default)
    p.add_argument("--tokens", type=int, default=tokens_default, help="tokens per frame")
    p.add_argument("--block", type=int, default=block_default, help="block size")


def _add_variant_flags(p):
    p.add_argument("--variant", default="ours",
                   help="ours|no-anchor|fixed:s|aggressive|conservative|temporal|full")
    p.add_argument("--schedule", type=parse_schedule, default=(1, 1, 2, 4, 8, 16))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparse4d", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="JSON file of flag defaults")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("mask", help="build a block mask, report density, render PGM")
    _add_grid_flags(p)
    _add_variant_flags(p)
    p.add_argument("--render", help="write a PGM image of the mask")
    p.add_argument("--report", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("flops", help="sparse/full FLOPs ratios over frame counts (CSV)")
    p.add_argument("--frames", type=_frames_list, default=[8, 16, 32])
    p.add_argument("--tokens", type=int, default=REFERENCE_ARCH.tokens_per_frame)
    p.add_argument("--block", type=int, default=REFERENCE_ARCH.block_size)
    _add_variant_flags(p)
    p.add_argument("--calibrate-total", type=_calibration, metavar="RATIO@FRAMES",
                   help="calibrate fixed cost so the total ratio hits RATIO at FRAMES")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--svg", help="also write a two-line SVG chart")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("attn-check", help="block-sparse vs dense attention equivalence")
    _add_grid_flags(p, 4, 64, 16)
    _add_variant_flags(p)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--head-dim", type=int, default=8)
    p.add_argument("--no-rope", action="store_true")
    p.add_argument("--max-tokens", type=int, default=4096)
    p.add_argument("--report")
    p.set_defaults(func=cmd_attn_check)

    p = sub.add_parser("rope", help="temporal RoPE table")
    p.add_argument("--head-dim", type=int, default=128)
    p.add_argument("--base", type=float, default=DEFAULT_BASE)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--dump", nargs="?", const="-", help="dump the table as CSV (path or stdout)")
    p.set_defaults(func=cmd_rope)

    p = sub.add_parser("sample", help="temporally consistent surface sampling")
    p.add_argument("--manifest", required=True)
    p.add_argument("--uniform", type=int, default=4096)
    p.add_argument("--sharp", type=int, default=0)
    p.add_argument("--fps", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=30.0, help="dihedral angle in degrees")
    p.add_argument("--out", default=os.environ.get(OUT_DIR_ENV, "."))
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("metrics", help="Chamfer, F-score and voxel IoU")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--mesh-pred")
    p.add_argument("--mesh-gt")
    p.add_argument("--iou-res", type=int, default=64)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--squared", action="store_true", help="squared-L2 Chamfer")
    p.add_argument("--report")
    p.set_defaults(func=cmd_metrics)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]):
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cfg = json.loads(Path(args.config).read_text())
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (ValueError, OSError, ValidationError, BudgetExceededError, KeyError) as exc:
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
