"""Command line interface.

Exit codes: 0 ok, 2 bad input, 3 file format error, 4 config error.
"""
from __future__ import annotations

import argparse
import json
import sys
from contextlib import nullcontext
from importlib import resources
from pathlib import Path

import numpy as np

from . import io
from .completion import complete_flows_laplacian
from .config import ConfigError, PipelineConfig, load_config
from .cost import CostConfig, cost_table, model_curves, write_series_csv
from .flow import endpoint_error, warping_error
from .image_prop import propagate_global
from .metrics import psnr, psnr_text, ssim
from .pipeline import complete_flows, load_weights, run_pipeline
from .reference import reference_curves
from .synth import SceneSpec, corrupt, gen_masks, gen_sequence
from .weights import WeightShapeError

EXIT_OK, EXIT_INPUT, EXIT_FORMAT, EXIT_CONFIG = 0, 2, 3, 4


class InputError(Exception):
    pass


def demo_dir() -> Path:
    return Path(str(resources.files("dualprop") / "data" / "demo"))


def _threads(n):
    if n is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    try:
        return cfg.with_overrides(mode=getattr(args, "mode", None),
                                  epsilon=getattr(args, "epsilon", None),
                                  seed=getattr(args, "seed", None))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _sequence(path) -> dict:
    path = Path(path)
    if not (path / "frames").is_dir():
        raise InputError(f"{path} has no frames/ directory")
    seq = io.read_sequence(path)
    if seq["masks"] is None:
        seq["masks"] = np.zeros(seq["frames"].shape[:3], dtype=bool)
    return seq


def _need_flows(seq, path):
    if seq["flows_fwd"] is None or seq["flows_bwd"] is None:
        raise InputError(f"{path} has no forward and backward flows under flows/")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    if not args.out_dir:
        raise InputError("--out-dir is required")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# subcommands ---------------------------------------------------------------

def cmd_gen(args):
    cfg = _config(args)
    spec = SceneSpec(seed=cfg.seed, T=args.frames, H=args.height, W=args.width,
                     velocity=tuple(args.velocity))
    seq = gen_sequence(spec)
    masks = gen_masks(spec, args.mask_kind, seed=cfg.seed, coverage=args.coverage)
    _, fwd, bwd = corrupt(seq.frames, masks, seq.flows_fwd, seq.flows_bwd)
    out = _out_dir(args)
    io.write_sequence(out, seq.frames, masks, fwd, bwd, fmt=args.format)
    (out / "flows_gt").mkdir(exist_ok=True)
    for t in range(spec.T - 1):
        io.write_flo(out / "flows_gt" / f"fwd_{t:05d}.flo", seq.flows_fwd[t])
        io.write_flo(out / "flows_gt" / f"bwd_{t:05d}.flo", seq.flows_bwd[t])
    print(f"wrote {spec.T} frames of {spec.H}x{spec.W} to {out}")


def cmd_complete_flow(args):
    cfg = _config(args)
    seq = _sequence(args.sequence)
    _need_flows(seq, args.sequence)
    rfc = None
    if args.weights:
        _, rfc = load_weights(io.read_archive(args.weights), cfg)
    fwd, bwd = complete_flows(seq["flows_fwd"], seq["flows_bwd"], seq["masks"], rfc)
    out = _out_dir(args)
    io.write_sequence(out, seq["frames"], seq["masks"], fwd, bwd, fmt=args.format)
    print(f"completed {len(fwd)} flow pairs ({'rfc' if rfc else 'laplacian'}) into {out}")


def cmd_propagate(args):
    cfg = _config(args)
    seq = _sequence(args.sequence)
    _need_flows(seq, args.sequence)
    masks = seq["masks"]
    fwd = complete_flows_laplacian(list(seq["flows_fwd"]), list(masks[:-1]))
    bwd = complete_flows_laplacian(list(seq["flows_bwd"]), list(masks[1:]))
    x = np.where(masks[..., None], 0.0, seq["frames"])
    state = propagate_global(list(x), list(masks), fwd, bwd, cfg.max_passes, cfg.epsilon,
                             cfg.sweep_order)
    out = _out_dir(args)
    io.write_sequence(out, state.frames, state.masks, fwd, bwd, fmt=args.format)
    _write_json(out / "diagnostics.json", {
        "masked_per_pass": [int(v) for v in state.masked_per_pass],
        "passes": state.pass_count,
        "events": [vars(e) for e in state.events],
    })
    print(f"masked pixels per pass: {state.masked_per_pass}")


def cmd_inpaint(args):
    cfg = _config(args)
    seq = _sequence(args.sequence or demo_dir())
    _need_flows(seq, args.sequence or "demo")
    weights = io.read_archive(args.weights) if args.weights else None
    out_frames, diag = run_pipeline(seq["frames"], seq["masks"], seq["flows_fwd"],
                                    seq["flows_bwd"], cfg, weights)
    out = _out_dir(args)
    io.write_sequence(out, out_frames, fmt=args.format)
    _write_json(out / "diagnostics.json", diag)
    print(f"inpainted {len(out_frames)} frames ({cfg.mode}); "
          f"propagation filled {diag['fill_ratio']:.1%} of masked pixels")


def cmd_metrics(args):
    cfg = _config(args)
    pred = _sequence(args.pred)
    gt_dir = Path(args.gt)
    gt = _sequence(gt_dir)
    if pred["frames"].shape != gt["frames"].shape:
        raise InputError(f"prediction {pred['frames'].shape} and ground truth "
                         f"{gt['frames'].shape} differ")
    a, b = pred["frames"], gt["frames"]
    p = float(np.mean([psnr(x, y) for x, y in zip(a, b)]))
    result = {
        "psnr": psnr_text(p),
        "ssim": float(np.mean([ssim(x, y) for x, y in zip(a, b)])),
        "e_warp": None,
        "epe": None,
    }
    if (gt_dir / "flows_gt").is_dir():
        fwd_gt = np.stack([io.read_flo(q) for q in sorted((gt_dir / "flows_gt").glob("fwd_*.flo"))])
        bwd_gt = np.stack([io.read_flo(q) for q in sorted((gt_dir / "flows_gt").glob("bwd_*.flo"))])
    else:
        fwd_gt, bwd_gt = gt["flows_fwd"], gt["flows_bwd"]
    if fwd_gt is not None and len(a) > 1:
        # reported in units of 1e-3
        result["e_warp"] = warping_error(a, fwd_gt, bwd_gt, cfg.epsilon) * 1e3
    if fwd_gt is not None and pred["flows_fwd"] is not None:
        result["epe"] = float(np.mean([endpoint_error(f, g)
                                       for f, g in zip(pred["flows_fwd"], fwd_gt)]))
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out_dir:
        out = _out_dir(args)
        (out / "metrics.json").write_text(text + "\n")
    print(text)


def cmd_cost_report(args):
    base = CostConfig()
    print(cost_table(base))
    if args.out_dir:
        out = _out_dir(args)
        model = model_curves(base)
        ref = reference_curves()
        for axis in ("length", "resolution"):
            write_series_csv(out / f"flops_vs_{axis}.csv", {**ref[axis], **model[axis]})
        print(f"wrote curves to {out}")


def cmd_selftest(args):
    """Quick end-to-end checks that need no files."""
    failures = []

    def check(name, ok):
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        if not ok:
            failures.append(name)

    spec = SceneSpec(seed=7, T=6, H=48, W=64, velocity=(2, 0))
    seq = gen_sequence(spec)
    masks = gen_masks(spec, "stationary", seed=7)
    frames, fwd, bwd = corrupt(seq.frames, masks, seq.flows_fwd, seq.flows_bwd)
    out, diag = run_pipeline(frames, masks, fwd, bwd, PipelineConfig())
    check("unmasked pixels unchanged", bool(np.array_equal(out[~masks], seq.frames[~masks])))
    series = diag["masked_per_pass"]
    check("mask shrinkage non-increasing", all(x >= y for x, y in zip(series, series[1:])))
    filled = masks & ~np.isclose(out, 0).all(-1)
    check("propagation fills pixels", diag["filled_by_propagation"] > 0 and bool(filled.any()))
    empty = np.zeros_like(masks)
    same, _ = run_pipeline(seq.frames, empty, seq.flows_fwd, seq.flows_bwd, PipelineConfig())
    check("empty masks return input exactly", bool(np.array_equal(same, seq.frames)))
    ref = reference_curves()["length"]
    check("reference FLOPs ordering", all(
        dict(ref["Ours"])[t] < dict(ref["E2FGVI"])[t] < dict(ref["FGT"])[t]
        for t in dict(ref["Ours"]) if t in dict(ref["FGT"])))
    return EXIT_OK if not failures else 1


# parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--mode", help="propagation-only or weighted")
    common.add_argument("--epsilon", type=float, help="flow consistency threshold")
    common.add_argument("--seed", type=int)
    common.add_argument("--weights", help="weight archive")
    common.add_argument("--out-dir")
    common.add_argument("--format", choices=("png", "pfm"), default="png")
    common.add_argument("--threads", type=int, help="cap BLAS threads")

    parser = argparse.ArgumentParser(prog="dualprop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="write a synthetic sequence")
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=192)
    p.add_argument("--velocity", type=int, nargs=2, default=(1, 0), metavar=("VX", "VY"))
    p.add_argument("--mask-kind", choices=("stationary", "object"), default="stationary")
    p.add_argument("--coverage", type=float, default=0.136)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("complete-flow", parents=[common], help="complete masked flows")
    p.add_argument("sequence")
    p.set_defaults(func=cmd_complete_flow)

    p = sub.add_parser("propagate", parents=[common], help="image-domain propagation only")
    p.add_argument("sequence")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("inpaint", parents=[common], help="full pipeline")
    p.add_argument("sequence", nargs="?", help="sequence directory (default: bundled demo)")
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("metrics", parents=[common], help="PSNR, SSIM, E_warp and EPE as JSON")
    p.add_argument("pred")
    p.add_argument("gt")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("cost-report", parents=[common], help="analytic FLOPs table and curves")
    p.set_defaults(func=cmd_cost_report)

    p = sub.add_parser("selftest", parents=[common], help="run built-in sanity checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _threads(args.threads):
            code = args.func(args)
        return EXIT_OK if code is None else code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except io.FormatError as exc:
        print(f"format error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (InputError, WeightShapeError, ValueError, FileNotFoundError) as exc:
        print(f"bad input: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
