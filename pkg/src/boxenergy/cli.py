"""Command-line interface: segment, stats, gradcheck, compare subcommands."""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from statistics import median

import numpy as np

from . import __version__
from .color import downsample_lab, srgb_to_lab
from .core import (
    BoundingBox,
    EnergyConfig,
    InvalidBoxError,
    MaskField,
    NeighborhoodSpec,
    box_indicator,
)
from .dataset import (
    MaskOutputRecord,
    config_fingerprint,
    load_annotations,
    load_image,
    write_annotations,
    write_mask_png,
    write_overlay_png,
    write_stats_csv,
)
from .graph import TauStats, build_edge_set, edge_label_counts
from .losses import mask_energy
from .metrics import method_comparison
from .optimize import (
    DivergenceError,
    OptimizerConfig,
    binarize,
    minimize,
    upsample_mask,
)
from .oracle import brute_force_minimize, check_gradient

DEFAULT_ENERGY = EnergyConfig()
DEFAULT_OPT = OptimizerConfig()


def _add_energy_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau", type=float, default=DEFAULT_ENERGY.tau, help="color similarity threshold")
    p.add_argument("--theta", type=float, default=DEFAULT_ENERGY.theta, help="similarity temperature")
    p.add_argument("--kernel-size", type=int, default=DEFAULT_ENERGY.neighborhood.size)
    p.add_argument("--dilation", type=int, default=DEFAULT_ENERGY.neighborhood.dilation)
    p.add_argument("--pairwise-weight", type=float, default=DEFAULT_ENERGY.pairwise_weight)
    p.add_argument("--pairwise-norm", choices=["confident", "e_in"], default=DEFAULT_ENERGY.pairwise_norm)
    p.add_argument("--stride", type=int, default=1, help="optimize at 1/stride resolution")


def _add_optimizer_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int, default=DEFAULT_OPT.steps)
    p.add_argument("--lr", type=float, default=DEFAULT_OPT.learning_rate)
    p.add_argument("--init", choices=["zeros", "box_prior"], default=DEFAULT_OPT.init)


def _energy_config(args: argparse.Namespace) -> EnergyConfig:
    return EnergyConfig(
        tau=args.tau,
        theta=args.theta,
        neighborhood=NeighborhoodSpec(size=args.kernel_size, dilation=args.dilation),
        pairwise_weight=args.pairwise_weight,
        pairwise_norm=args.pairwise_norm,
    )


def _optimizer_config(args: argparse.Namespace) -> OptimizerConfig:
    return OptimizerConfig(steps=args.steps, learning_rate=args.lr, init=args.init)


def _resolve_jobs(requested: int) -> int:
    jobs = max(1, requested)
    cap = os.environ.get("BOXENERGY_THREADS")
    if cap:
        jobs = max(1, min(jobs, int(cap)))
    return jobs


def _run_metadata(args: argparse.Namespace, command: str, extra: dict) -> dict:
    meta = {
        "command": command,
        "version": __version__,
        "energy_config": _energy_config(args).to_dict(),
        "stride": args.stride,
    }
    meta.update(extra)
    return meta


def _parallel_map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _downsample_gt(gt: np.ndarray, stride: int) -> np.ndarray:
    if stride == 1:
        return np.asarray(gt, dtype=np.uint8)
    pooled = downsample_lab(gt[:, :, None].astype(np.float64), stride)[:, :, 0]
    return (pooled >= 0.5).astype(np.uint8)


def cmd_segment(args: argparse.Namespace) -> int:
    config = _energy_config(args)
    opt = _optimizer_config(args)
    jobs = _resolve_jobs(args.jobs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fingerprint = config_fingerprint(config, opt)
    records = load_annotations(args.annotations)
    images_dir = Path(args.images)

    items = []
    for rec in records:
        rgb = load_image(images_dir / rec.file_name)
        lab = srgb_to_lab(rgb)
        lab_field = downsample_lab(lab, args.stride) if args.stride > 1 else lab
        for idx, (box, category_id) in enumerate(rec.boxes):
            items.append((rec, rgb, lab_field, idx, box, category_id))

    def work(item):
        rec, rgb, lab_field, idx, box, category_id = item
        try:
            box_run = box.scaled_down(args.stride) if args.stride > 1 else box
            field, trace = minimize(lab_field, box_run, config, opt)
            mask_small = binarize(field, opt.binarize_threshold)
            mask = upsample_mask(mask_small, args.stride, rec.height, rec.width)
            return {
                "record": MaskOutputRecord(
                    image_id=rec.image_id,
                    instance_index=idx,
                    mask=mask,
                    energy={
                        "l_proj": trace.l_proj[-1],
                        "l_pairwise": trace.l_pairwise[-1],
                        "l_mask": trace.l_mask[-1],
                        "iterations": trace.iterations,
                        "converged": trace.converged,
                    },
                    config_fingerprint=fingerprint,
                ),
                "rgb": rgb,
                "box": box,
                "category_id": category_id,
                "file_name": rec.file_name,
                "error": None,
            }
        except (DivergenceError, InvalidBoxError, ValueError) as exc:
            return {
                "record": None,
                "image_id": rec.image_id,
                "instance_index": idx,
                "error": f"{type(exc).__name__}: {exc}",
            }

    results = _parallel_map(work, items, jobs)

    report_path = out_dir / "report.jsonl"
    failures = []
    all_converged = True
    with open(report_path, "w") as report:
        for res in results:
            if res["error"] is not None:
                failures.append(res)
                all_converged = False
                continue
            rec: MaskOutputRecord = res["record"]
            mask_path = write_mask_png(rec, out_dir)
            if args.overlay:
                overlay_path = out_dir / f"{rec.image_id}_{rec.instance_index}_overlay.png"
                write_overlay_png(res["rgb"], rec.mask, overlay_path)
            box = res["box"]
            line = {
                "image_id": rec.image_id,
                "instance_index": rec.instance_index,
                "file_name": res["file_name"],
                "category_id": res["category_id"],
                "box": [box.x0, box.y0, box.x1, box.y1],
                "l_proj": rec.energy["l_proj"],
                "l_pairwise": rec.energy["l_pairwise"],
                "l_mask": rec.energy["l_mask"],
                "iterations": rec.energy["iterations"],
                "converged": rec.energy["converged"],
                "fingerprint": rec.config_fingerprint,
                "mask_png": mask_path.name,
            }
            report.write(json.dumps(line, sort_keys=True) + "\n")
            all_converged = all_converged and rec.energy["converged"]

    meta = _run_metadata(
        args,
        "segment",
        {
            "optimizer_config": opt.to_dict(),
            "fingerprint": fingerprint,
            "images": str(args.images),
            "annotations": str(args.annotations),
            "output": str(args.out),
            "jobs": jobs,
            "overlay": bool(args.overlay),
            "pairwise_weight_non_default": config.pairwise_weight != DEFAULT_ENERGY.pairwise_weight,
        },
    )
    (out_dir / "run_metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    for failure in failures:
        print(
            f"instance {failure['image_id']}_{failure['instance_index']} failed: "
            f"{failure['error']}",
            file=sys.stderr,
        )
    n_ok = len(results) - len(failures)
    print(f"segment: {n_ok}/{len(results)} instances written to {out_dir}")
    return 0 if all_converged and not failures else 1


def _require_gt(records) -> list[str]:
    missing = []
    for rec in records:
        for idx, gt in enumerate(rec.gt_masks):
            if gt is None:
                missing.append(f"{rec.image_id}_{idx}")
    return missing


def cmd_stats(args: argparse.Namespace) -> int:
    taus = [float(t) for t in args.taus.split(",") if t != ""]
    if taus != sorted(taus):
        print("stats: --taus must be sorted ascending", file=sys.stderr)
        return 2
    records = load_annotations(args.annotations)
    missing = _require_gt(records)
    if missing:
        print(
            "stats: ground-truth masks missing for records: " + ", ".join(missing),
            file=sys.stderr,
        )
        return 2
    config = _energy_config(args)
    images_dir = Path(args.images)

    totals = np.zeros((len(taus), 3), dtype=np.int64)
    n_instances = 0
    for rec in records:
        lab = srgb_to_lab(load_image(images_dir / rec.file_name))
        lab_s = downsample_lab(lab, args.stride) if args.stride > 1 else lab
        for (box, _cat), gt in zip(rec.boxes, rec.gt_masks):
            gt_s = _downsample_gt(gt, args.stride)
            if args.edge_universe == "in_box":
                h, w = lab_s.shape[:2]
                box_s = box.scaled_down(args.stride) if args.stride > 1 else box
                bmask = box_indicator(box_s, h, w)
            else:
                bmask = None
            es = build_edge_set(lab_s, bmask, config.neighborhood, config.theta)
            totals += np.asarray(edge_label_counts(es, gt_s, taus), dtype=np.int64)
            n_instances += 1

    rows = []
    for tau, (n_sel, n_pos_sel, n_pos) in zip(taus, totals):
        prop = n_pos_sel / n_sel if n_sel > 0 else None
        recall = n_pos_sel / n_pos if n_pos > 0 else None
        rows.append(TauStats(tau=tau, prop_positive=prop, recall_positive=recall, n_confident=int(n_sel)))
    write_stats_csv(rows, args.out)

    meta = _run_metadata(
        args,
        "stats",
        {
            "images": str(args.images),
            "annotations": str(args.annotations),
            "output": str(args.out),
            "taus": taus,
            "edge_universe": args.edge_universe,
            "n_instances": n_instances,
        },
    )
    Path(str(args.out) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    for r in rows:
        prop = "n/a" if r.prop_positive is None else f"{r.prop_positive:.4f}"
        recall = "n/a" if r.recall_positive is None else f"{r.recall_positive:.4f}"
        print(f"tau={r.tau:.3f} prop_positive={prop} recall_positive={recall} n_confident={r.n_confident}")
    print(f"stats: {n_instances} instances aggregated into {args.out}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    config = _energy_config(args)
    worst_err = 0.0
    worst_label = ""
    all_passed = True
    for k in range(args.count):
        h = int(rng.integers(args.min_size, args.max_size + 1))
        w = int(rng.integers(args.min_size, args.max_size + 1))
        rgb = rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8)
        lab = srgb_to_lab(rgb)
        x0 = int(rng.integers(0, w))
        y0 = int(rng.integers(0, h))
        box = BoundingBox(x0, y0, int(rng.integers(x0 + 1, w + 1)), int(rng.integers(y0 + 1, h + 1)))
        bmask = box_indicator(box, h, w)
        es = build_edge_set(lab, bmask, config.neighborhood, config.theta)
        field = MaskField(rng.normal(0.0, 2.0, size=(h, w)))
        gt = rng.integers(0, 2, size=(h, w)).astype(np.uint8)
        for mode in ("box_only", "supervised"):
            def value_and_grad(f: MaskField, _mode=mode):
                rep = mask_energy(f, bmask, es, config, mode=_mode, gt=gt)
                return rep.l_mask, rep.grad

            report = check_gradient(
                value_and_grad, field, step=args.step, tolerance=args.tolerance
            )
            if report.max_rel_error > worst_err:
                worst_err = report.max_rel_error
                worst_label = f"instance {k} ({h}x{w}, {mode}) pixel {report.worst_pixel}"
            all_passed = all_passed and report.passed

    print(
        f"gradcheck: {args.count} instances x 2 modes, worst-pixel relative error "
        f"{worst_err:.3e} at {worst_label}, tolerance {args.tolerance:g}"
    )
    print("gradcheck: PASS" if all_passed else "gradcheck: FAIL")
    return 0 if all_passed else 1


def cmd_compare(args: argparse.Namespace) -> int:
    records = load_annotations(args.annotations)
    missing = _require_gt(records)
    if missing:
        print(
            "compare: ground-truth masks missing for records: " + ", ".join(missing),
            file=sys.stderr,
        )
        return 2
    config = _energy_config(args)
    opt = _optimizer_config(args)
    jobs = _resolve_jobs(args.jobs)
    images_dir = Path(args.images)

    items = []
    for rec in records:
        lab = srgb_to_lab(load_image(images_dir / rec.file_name))
        lab_s = downsample_lab(lab, args.stride) if args.stride > 1 else lab
        for idx, ((box, _cat), gt) in enumerate(zip(rec.boxes, rec.gt_masks)):
            items.append((rec, lab_s, idx, box, gt))

    def work(item):
        rec, lab_s, idx, box, gt = item
        box_s = box.scaled_down(args.stride) if args.stride > 1 else box
        gt_s = _downsample_gt(gt, args.stride)
        scores = method_comparison(lab_s, box_s, gt_s, config, opt)
        return rec, idx, scores

    results = _parallel_map(work, items, jobs)

    by_method: dict[str, list[float]] = {}
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as f:
        for rec, idx, scores in results:
            for s in scores:
                by_method.setdefault(s.method, []).append(s.iou)
                f.write(
                    json.dumps(
                        {
                            "image_id": rec.image_id,
                            "instance_index": idx,
                            "method": s.method,
                            "iou": s.iou,
                            "dice": s.dice,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )

    meta = _run_metadata(
        args,
        "compare",
        {
            "optimizer_config": opt.to_dict(),
            "images": str(args.images),
            "annotations": str(args.annotations),
            "output": str(args.out),
            "jobs": jobs,
        },
    )
    Path(str(args.out) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    for method in ("box_mask", "proj_only", "proj_pairwise"):
        vals = by_method.get(method, [])
        if vals:
            print(f"{method}: median IoU {median(vals):.4f} over {len(vals)} instances")
    return 0


def cmd_bruteforce(args: argparse.Namespace) -> int:
    # debugging aid: enumerate every binary mask on a tiny uniform-color grid
    h, w = args.height, args.width
    x0, y0, x1, y1 = (int(v) for v in args.box.split(","))
    config = _energy_config(args)
    bmask = box_indicator(BoundingBox(x0, y0, x1, y1), h, w)
    lab = np.zeros((h, w, 3))
    es = build_edge_set(lab, bmask, config.neighborhood, config.theta)
    result = brute_force_minimize(bmask, es, config, mode=args.mode)
    print(f"{result.n_masks} masks enumerated, min energy {result.min_energy:.6g}")
    print(f"{len(result.argmin_masks)} argmin masks:")
    for mask in result.argmin_masks:
        for row in mask:
            print("".join(str(int(v)) for v in row))
        print("-")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boxenergy",
        description="Segment objects from bounding boxes by direct mask-energy minimization.",
    )
    sub = parser.add_subparsers(dest="command", metavar="{segment,stats,gradcheck,compare}")

    p = sub.add_parser("segment", help="optimize one mask per annotated box")
    p.add_argument("--images", required=True, help="directory of input images")
    p.add_argument("--annotations", required=True, help="COCO-instances JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel instances")
    p.add_argument("--overlay", action="store_true", help="also write blended overlays")
    _add_energy_flags(p)
    _add_optimizer_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("stats", help="edge label statistics against ground-truth masks")
    p.add_argument("--images", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--taus", default="0,0.1,0.2", help="comma-separated ascending thresholds")
    p.add_argument("--edge-universe", choices=["in_box", "all"], default="in_box")
    _add_energy_flags(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--min-size", type=int, default=4)
    p.add_argument("--max-size", type=int, default=16)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-4)
    _add_energy_flags(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("compare", help="score box mask vs optimized masks against ground truth")
    p.add_argument("--images", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--jobs", type=int, default=1)
    _add_energy_flags(p)
    _add_optimizer_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bruteforce")  # debug helper, intentionally undocumented
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--box", required=True, help="x0,y0,x1,y1")
    p.add_argument("--mode", choices=["box_only", "supervised"], default="box_only")
    _add_energy_flags(p)
    p.set_defaults(func=cmd_bruteforce)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
