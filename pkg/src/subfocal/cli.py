"""Command-line interface: estimate, evaluate, train, ablate, visualize, synth.

Outputs go to files under ``--out``; progress goes to stderr so stdout stays
machine-readable.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

from . import metrics
from .costvol import CostKind, DisparityGrid, InvalidGrid, save_params
from .distrib import uncertainty_map
from .lf_io import (
    DisparityMap,
    MalformedScene,
    PfmParseError,
    load_scene,
    read_png,
    read_pfm,
    save_scene,
    write_pfm,
    write_png,
)
from .loss import LossKind
from .pipeline import DEFAULT_SHARPNESS, Aggregation, estimate
from .shift import Interpolation
from .synth import SceneKind, SceneSpec, Texture, render, two_plane_suite
from .trainer import TrainConfig, TrainingDiverged, render_dataset, synthetic_dataset, train

EXIT_USAGE = 2
EXIT_DIVERGED = 3

ABLATION_INTERVALS = (1.0, 0.5, 0.25, 0.1)
ABLATION_INTERPS = ("nearest", "bilinear", "phase")
ABLATION_COLUMNS = (
    "scene",
    "interval",
    "interpolation",
    "badpix_0.07",
    "badpix_0.03",
    "badpix_0.01",
    "mse100",
    "seconds",
)


class UsageError(Exception):
    pass


def progress(msg: str) -> None:
    print(f"[subfocal] {msg}", file=sys.stderr, flush=True)


def _grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--range", default="-4:4", metavar="MIN:MAX",
                   help="candidate disparity range in pixels [reference setting]")
    p.add_argument("--interval", type=float, default=0.5,
                   help="disparity sampling interval [reference setting]")
    p.add_argument("--interp", choices=[i.value for i in Interpolation], default="bilinear",
                   help="sub-pixel interpolation [reference setting]")
    p.add_argument("--cost", choices=[c.value for c in CostKind], default="variance",
                   help="photometric matching cost across views")
    p.add_argument("--sharpness", type=float, default=DEFAULT_SHARPNESS,
                   help="median cost after normalization, i.e. softmax inverse temperature")


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", default="subfocal_out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="subfocal",
        description="Sub-pixel cost-volume light-field disparity estimation toolkit.",
        formatter_class=fmt,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate disparity for a scene", formatter_class=fmt)
    p.add_argument("--scene", required=True, help="scene directory (HCI layout)")
    _grid_flags(p)
    p.add_argument("--agg", default="box:1", help="aggregation: none, box:R or learned:PATH")
    _common_flags(p)

    p = sub.add_parser("evaluate", help="score a disparity map against ground truth", formatter_class=fmt)
    p.add_argument("--pred", required=True, help="predicted disparity PFM")
    p.add_argument("--gt", required=True, help="ground-truth PFM or scene directory")
    p.add_argument("--mask", default=None, help="optional evaluation mask PNG (nonzero = evaluate)")
    p.add_argument("--margin", type=int, default=0, help="border pixels excluded on each side")
    _common_flags(p)

    p = sub.add_parser("train", help="two-stage toy aggregator training on synthetic scenes",
                       formatter_class=fmt)
    _grid_flags(p)
    p.add_argument("--stage1-epochs", type=int, default=30, help="L1 warm-up epochs")
    p.add_argument("--stage2-epochs", type=int, default=10, help="finetune epochs")
    p.add_argument("--lr1", type=float, default=3e-3, help="stage-1 step size")
    p.add_argument("--lr2", type=float, default=3e-4, help="stage-2 step size")
    p.add_argument("--loss", choices=[k.value for k in LossKind if k is not LossKind.SUM],
                   default="uafl", help="stage-2 loss [reference setting]")
    p.add_argument("--beta", type=float, default=0.1, help="UAFL exponent [reference setting]")
    p.add_argument("--full-gradient", action="store_true",
                   help="differentiate through the uncertainty weight instead of holding it fixed")
    p.add_argument("--scenes", type=int, default=4, help="number of synthetic training scenes")
    _common_flags(p)

    p = sub.add_parser("ablate", help="interval x interpolation sweep", formatter_class=fmt)
    p.add_argument("--scene", action="append", default=None,
                   help="scene directory with ground truth (repeatable); default: synthetic suite")
    p.add_argument("--suite-seeds", type=int, default=5, help="size of the synthetic two-plane suite")
    p.add_argument("--intervals", default=",".join(f"{i:g}" for i in ABLATION_INTERVALS),
                   help="comma-separated sampling intervals")
    p.add_argument("--interps", default=",".join(ABLATION_INTERPS), help="comma-separated interpolations")
    p.add_argument("--range", default="-4:4", metavar="MIN:MAX", help="disparity range [reference setting]")
    p.add_argument("--cost", choices=[c.value for c in CostKind], default="variance", help="matching cost")
    p.add_argument("--agg", default="box:1", help="aggregation: none, box:R or learned:PATH")
    p.add_argument("--sharpness", type=float, default=DEFAULT_SHARPNESS, help="cost normalization target")
    p.add_argument("--margin", type=int, default=8, help="border pixels excluded from metrics")
    _common_flags(p)

    p = sub.add_parser("visualize", help="uncertainty and error-map images for a scene",
                       formatter_class=fmt)
    p.add_argument("--scene", required=True, help="scene directory with ground truth")
    _grid_flags(p)
    p.add_argument("--agg", default="box:1", help="aggregation: none, box:R or learned:PATH")
    p.add_argument("--epsilon", type=float, default=0.07, help="error-map threshold")
    _common_flags(p)

    p = sub.add_parser("synth", help="write a synthetic scene in HCI layout", formatter_class=fmt)
    p.add_argument("--kind", choices=[k.value for k in SceneKind], default="constant")
    p.add_argument("--disparity", type=float, nargs="+", default=[0.75],
                   help="one value (constant), fg bg (twoplane) or left right (ramp)")
    p.add_argument("--texture", choices=[t.value for t in Texture], default="sinusoid")
    p.add_argument("--angular", type=int, default=5, help="views per angular axis")
    p.add_argument("--size", type=int, default=64, help="spatial size in pixels (square)")
    _common_flags(p)
    return parser


def _grid(args) -> DisparityGrid:
    try:
        return DisparityGrid.parse(args.range, args.interval)
    except InvalidGrid as exc:
        raise UsageError(str(exc)) from exc


def _aggregation(text: str) -> Aggregation:
    try:
        return Aggregation.parse(text)
    except (ValueError, OSError) as exc:
        raise UsageError(str(exc)) from exc


def _load_scene(path: str):
    try:
        return load_scene(path)
    except (MalformedScene, PfmParseError, OSError) as exc:
        raise UsageError(str(exc)) from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_sharpness(args) -> None:
    if not args.sharpness > 0:
        raise UsageError("--sharpness must be positive")


def cmd_estimate(args) -> int:
    grid = _grid(args)
    _check_sharpness(args)
    agg = _aggregation(args.agg)
    lf, gt = _load_scene(args.scene)
    progress(f"estimating {args.scene}: {lf.angular_dims} views, {lf.spatial_dims} px, D={grid.size}")
    est = estimate(lf, grid, args.interp, args.cost, agg, args.sharpness)
    out = _out_dir(args)
    write_pfm(est.disparity, out / "disparity.pfm")
    write_png(out / "disparity.png", metrics.gray_disparity(est.disparity.values, (grid.d_min, grid.d_max)))
    if gt is not None:
        u = uncertainty_map(est.distribution, gt)
        write_png(out / "uncertainty.png", u.values)
        write_pfm(DisparityMap(u.values), out / "uncertainty.pfm")
    progress(f"wrote outputs to {out}")
    return 0


def _format_table(rows) -> str:
    header = f"{'scene':<16} | {'0.07':>8} | {'0.03':>8} | {'0.01':>8} | {'MSE':>8}"
    lines = [header, "-" * len(header)]
    for name, rep in rows:
        lines.append(
            f"{name:<16} | {rep['badpix_0.07']:8.3f} | {rep['badpix_0.03']:8.3f} | "
            f"{rep['badpix_0.01']:8.3f} | {rep['mse100']:8.3f}"
        )
    return "\n".join(lines)


def cmd_evaluate(args) -> int:
    if args.margin < 0:
        raise UsageError("--margin must be nonnegative")
    try:
        pred = DisparityMap(read_pfm(args.pred))
        if Path(args.gt).is_dir():
            _, gt = load_scene(args.gt)
            if gt is None:
                raise UsageError(f"scene {args.gt} has no ground truth")
        else:
            gt = DisparityMap(read_pfm(args.gt))
        mask = read_png(args.mask) > 0 if args.mask else None
    except (MalformedScene, PfmParseError, OSError) as exc:
        raise UsageError(str(exc)) from exc
    if pred.shape != gt.shape:
        raise UsageError(f"shape mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    try:
        config = metrics.MetricConfig(border_margin=args.margin, mask=mask)
        rep = metrics.report(pred, gt, config)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    name = Path(args.pred).stem
    out = _out_dir(args)
    doc = {"scene": name, "pred": str(args.pred), "gt": str(args.gt), "margin": args.margin, "metrics": rep}
    (out / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(_format_table([(name, rep)]))
    return 0


def cmd_train(args) -> int:
    grid = _grid(args)
    _check_sharpness(args)
    if args.stage1_epochs < 0 or args.stage2_epochs < 0 or not (args.lr1 > 0 and args.lr2 > 0):
        raise UsageError("epochs must be >= 0 and step sizes > 0")
    if args.beta < 0 or args.scenes < 1:
        raise UsageError("--beta must be >= 0 and --scenes >= 1")
    config = TrainConfig(
        stage1_epochs=args.stage1_epochs,
        stage2_epochs=args.stage2_epochs,
        lr1=args.lr1,
        lr2=args.lr2,
        beta=args.beta,
        seed=args.seed,
        grid=grid,
        stage2_loss=LossKind(args.loss),
        stop_gradient_through_U=not args.full_gradient,
        interpolation=Interpolation(args.interp),
        cost=CostKind(args.cost),
        sharpness=args.sharpness,
    )
    specs, held_spec = synthetic_dataset(args.seed, n_train=args.scenes)
    progress(f"training on {len(specs)} synthetic scenes, seed {args.seed}")
    out = _out_dir(args)
    try:
        params, trace = train(config, render_dataset(specs), render(held_spec))
    except TrainingDiverged as exc:
        progress(str(exc))
        return EXIT_DIVERGED
    save_params(params, out / "params.bin")
    (out / "trace.jsonl").write_text(trace.jsonl())
    if trace.records:
        last = trace.records[-1]
        progress(f"final loss {last.loss:.5f}, held-out BadPix 0.07 {last.badpix_007:.3f}")
    return 0


def _parse_list(text: str, cast):
    try:
        return [cast(t.strip()) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad list {text!r}") from exc


def cmd_ablate(args) -> int:
    intervals = _parse_list(args.intervals, float)
    interps = _parse_list(args.interps, str)
    for it in interps:
        if it not in ABLATION_INTERPS:
            raise UsageError(f"unknown interpolation {it!r}")
    grids = []
    for interval in intervals:
        try:
            grids.append(DisparityGrid.parse(args.range, interval))
        except InvalidGrid as exc:
            raise UsageError(str(exc)) from exc
    _check_sharpness(args)
    agg = _aggregation(args.agg)

    if args.scene:
        scenes = []
        for path in args.scene:
            lf, gt = _load_scene(path)
            if gt is None:
                raise UsageError(f"scene {path} has no ground truth")
            scenes.append((Path(path).name, lf, gt))
    else:
        scenes = [
            (f"twoplane_{spec.seed}", *render(spec))
            for spec in two_plane_suite(range(args.suite_seeds))
        ]

    out = _out_dir(args)
    config = metrics.MetricConfig(border_margin=args.margin)
    rows = []
    for name, lf, gt in scenes:
        for grid, interval in zip(grids, intervals):
            for interp in interps:
                t0 = time.perf_counter()
                est = estimate(lf, grid, interp, args.cost, agg, args.sharpness)
                seconds = time.perf_counter() - t0
                rep = metrics.report(est.disparity, gt, config)
                rows.append([name, f"{interval:g}", interp, *(rep[c] for c in ABLATION_COLUMNS[3:7]), seconds])
                progress(f"{name} interval={interval:g} {interp}: BadPix0.07={rep['badpix_0.07']:.3f}")
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ABLATION_COLUMNS)
        for row in rows:
            writer.writerow([row[0], row[1], row[2]] + [f"{v:.6f}" for v in row[3:]])
    return 0


def cmd_visualize(args) -> int:
    grid = _grid(args)
    _check_sharpness(args)
    if not args.epsilon > 0:
        raise UsageError("--epsilon must be positive")
    agg = _aggregation(args.agg)
    lf, gt = _load_scene(args.scene)
    if gt is None:
        raise UsageError(f"scene {args.scene} has no ground truth")
    est = estimate(lf, grid, args.interp, args.cost, agg, args.sharpness)
    out = _out_dir(args)
    u = uncertainty_map(est.distribution, gt)
    write_png(out / "uncertainty.png", u.values)
    value_range = (grid.d_min, grid.d_max)
    write_png(out / "disparity.png", metrics.gray_disparity(est.disparity.values, value_range))
    flags = metrics.write_error_map(out / "error_map.png", est.disparity, gt, args.epsilon, value_range)
    progress(f"{int(flags.sum())} pixels above {args.epsilon:g}; mean uncertainty {u.values[u.mask].mean():.4f}")
    return 0


def cmd_synth(args) -> int:
    try:
        spec = SceneSpec(
            SceneKind(args.kind),
            tuple(args.disparity),
            Texture(args.texture),
            args.seed,
            (args.angular, args.angular),
            (args.size, args.size),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    lf, gt = render(spec)
    save_scene(_out_dir(args), lf, gt)
    progress(f"wrote {args.kind} scene to {args.out}")
    return 0


COMMANDS = {
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "visualize": cmd_visualize,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"subfocal {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
