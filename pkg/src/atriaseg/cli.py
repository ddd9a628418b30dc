"""Command line interface.

Subcommands:
  run          full pipeline over a dataset
  preprocess   stages A-B only (emit cropped, equalised ROI volumes)
  postprocess  stage D on existing masks (single file or batch)
  evaluate     metrics on prediction/GT pairs
  report       re-aggregate existing per-case metrics JSON
  clahe        equalise a single volume (utility surface for host scripts)

Exit codes: 0 success, 1 partial/complete case failures, 2 configuration
error. Every config field can be overridden by a flag.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__, nifti
from ._kernels import active_backend
from .clahe import ClaheParams, clahe3d
from .geometry import Dims
from .metrics import CaseMetrics, aggregate
from .morphology import postprocess
from .pipeline import (ConfigError, PipelineConfig, config_from_dict, evaluate_pair,
                       load_config, preprocess_cases, run_dataset)
from .roi import RoiParams

log = logging.getLogger("atriaseg")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file mirroring PipelineConfig")
    p.add_argument("--dataset-root")
    p.add_argument("--output-dir")
    p.add_argument("--image-pattern")
    p.add_argument("--gt-pattern")
    p.add_argument("--workers", type=int)
    p.add_argument("--roi-box", type=int, nargs=3, metavar=("NX", "NY", "NZ"))
    p.add_argument("--roi-factors", type=int, nargs=3, metavar=("FX", "FY", "FZ"))
    p.add_argument("--clahe-tiles", type=int, nargs=3, metavar=("TX", "TY", "TZ"))
    p.add_argument("--clahe-bins", type=int)
    p.add_argument("--clahe-clip", type=float, help="clip limit as a fraction of tile voxels")
    p.add_argument("--no-clahe", action="store_true")
    p.add_argument("--no-postprocess", action="store_true")
    p.add_argument("--no-thickness", action="store_true")
    p.add_argument("--coarse-backend", help="backend spec as inline JSON")
    p.add_argument("--fine-backend", help="backend spec as inline JSON")
    p.add_argument("--labels", help="label encoding as inline JSON, e.g. "
                                    '{"background":0,"wall":1,"ra":2,"la":3}')


def _build_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    updates = {}
    for flag, key in (("dataset_root", "dataset_root"), ("output_dir", "output_dir"),
                      ("image_pattern", "image_pattern"), ("gt_pattern", "gt_pattern"),
                      ("workers", "workers")):
        value = getattr(args, flag, None)
        if value is not None:
            updates[key] = value
    if args.roi_box or args.roi_factors:
        box = Dims(*args.roi_box) if args.roi_box else config.roi.box
        factors = tuple(args.roi_factors) if args.roi_factors else config.roi.factors
        updates["roi"] = RoiParams(box=box, factors=factors)
    if args.clahe_tiles or args.clahe_bins or args.clahe_clip:
        updates["clahe"] = ClaheParams(
            tiles=tuple(args.clahe_tiles) if args.clahe_tiles else config.clahe.tiles,
            bins=args.clahe_bins or config.clahe.bins,
            clip_fraction=args.clahe_clip or config.clahe.clip_fraction,
            max_redistribution_passes=config.clahe.max_redistribution_passes)
    if args.no_clahe:
        updates["enable_clahe"] = False
    if args.no_postprocess:
        updates["enable_postprocess"] = False
    if args.no_thickness:
        updates["compute_thickness"] = False
    for flag in ("coarse_backend", "fine_backend", "labels"):
        raw = getattr(args, flag, None)
        if raw:
            try:
                updates[flag] = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"--{flag.replace('_', '-')} is not valid JSON: {exc}")
    if updates:
        merged = dataclasses.asdict(config)
        # asdict deep-converts nested dataclasses; rebuild through the parser
        merged["roi"] = {"box": list(config.roi.box.as_tuple()), "factors": list(config.roi.factors)}
        merged["clahe"] = {"tiles": list(config.clahe.tiles), "bins": config.clahe.bins,
                           "clip_fraction": config.clahe.clip_fraction,
                           "max_redistribution_passes": config.clahe.max_redistribution_passes}
        merged["coarse_backend"] = dataclasses.asdict(config.coarse_backend)
        merged["fine_backend"] = dataclasses.asdict(config.fine_backend)
        for key, value in updates.items():
            if key in ("roi", "clahe") and not isinstance(value, dict):
                merged[key] = {"box": list(value.box.as_tuple()), "factors": list(value.factors)} \
                    if key == "roi" else {
                        "tiles": list(value.tiles), "bins": value.bins,
                        "clip_fraction": value.clip_fraction,
                        "max_redistribution_passes": value.max_redistribution_passes}
            else:
                merged[key] = value
        config = config_from_dict(merged)
    return config


def _cmd_run(args) -> int:
    config = _build_config(args)
    agg, results = run_dataset(config)
    n_failed = sum(1 for r in results if not r.ok)
    for r in results:
        status = "ok" if r.ok else f"FAILED at {r.failed_stage}"
        print(f"{r.case_id}: {status}")
    if agg:
        for name, metrics_ in agg.per_class.items():
            d, h = metrics_["dice"], metrics_["hd95_mm"]
            hd_txt = f"{h.mean:.3f} +- {h.std:.3f} mm (n={h.n})" if h.n else "undefined"
            print(f"  {name}: DSC {d.mean:.4f} +- {d.std:.4f} (n={d.n}), HD95 {hd_txt}")
    return 1 if n_failed else 0


def _cmd_preprocess(args) -> int:
    config = _build_config(args)
    results = preprocess_cases(config)
    for r in results:
        print(f"{r.case_id}: {'ok' if r.ok else 'FAILED at ' + str(r.failed_stage)}")
    return 1 if any(not r.ok for r in results) else 0


def _cmd_postprocess(args) -> int:
    config = _build_config(args)
    class_ids = tuple(config.class_id(n) for n in config.class_order)
    pairs: list[tuple[Path, Path]] = []
    if args.input:
        if not args.output:
            raise ConfigError("--output is required with --input")
        pairs.append((Path(args.input), Path(args.output)))
    else:
        in_dir = Path(args.input_dir or Path(config.output_dir) / "predictions")
        out_dir = Path(args.postprocessed_dir or Path(config.output_dir) / "postprocessed")
        if not in_dir.is_dir():
            raise ConfigError(f"mask directory not found: {in_dir}")
        out_dir.mkdir(parents=True, exist_ok=True)
        pairs = [(p, out_dir / p.name) for p in sorted(in_dir.iterdir())
                 if p.name.endswith((".nii", ".nii.gz"))]
        if not pairs:
            raise ConfigError(f"no .nii/.nii.gz masks in {in_dir}")
    failures = 0
    for src, dst in pairs:
        try:
            labels = nifti.read_labels(src, allowed=config.allowed_labels)
            nifti.write_volume(postprocess(labels, class_ids), dst)
            print(f"{src.name}: ok")
        except (nifti.NiftiError, OSError, ValueError) as exc:
            failures += 1
            log.error("%s failed: %s", src, exc)
            print(f"{src.name}: FAILED")
    return 1 if failures else 0


def _cmd_evaluate(args) -> int:
    config = _build_config(args)
    if args.pred and args.gt:
        pred = nifti.read_labels(args.pred, allowed=config.allowed_labels)
        gt = nifti.read_labels(args.gt, allowed=config.allowed_labels)
        cm = evaluate_pair(pred, gt, config, case_id=Path(args.pred).name)
        payload = json.dumps(cm.to_dict(), indent=2, sort_keys=True)
        if args.json_out:
            Path(args.json_out).write_text(payload + "\n")
        print(payload)
        return 0
    # batch: predictions in a directory, GT via the dataset patterns
    pred_dir = Path(args.pred_dir or Path(config.output_dir) / "predictions")
    if not pred_dir.is_dir():
        raise ConfigError(f"prediction directory not found: {pred_dir}")
    root = Path(config.dataset_root)
    out_dir = Path(config.output_dir)
    (out_dir / "metrics").mkdir(parents=True, exist_ok=True)
    cases = []
    for path in sorted(pred_dir.iterdir()):
        name = path.name
        if not name.endswith((".nii", ".nii.gz")):
            continue
        case_id = name[:-7] if name.endswith(".nii.gz") else name[:-4]
        gt_path = root / config.gt_pattern.format(case=case_id)
        if not gt_path.is_file():
            log.warning("no GT for %s, skipped", case_id)
            continue
        pred = nifti.read_labels(path, allowed=config.allowed_labels)
        gt = nifti.read_labels(gt_path, allowed=config.allowed_labels)
        cm = evaluate_pair(pred, gt, config, case_id=case_id)
        (out_dir / "metrics" / f"{case_id}.json").write_text(
            json.dumps(cm.to_dict(), indent=2, sort_keys=True) + "\n")
        cases.append(cm)
    if not cases:
        raise ConfigError(f"no evaluable prediction/GT pairs under {pred_dir}")
    agg = aggregate(cases)
    print(json.dumps(agg.to_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_report(args) -> int:
    metrics_dir = Path(args.metrics_dir)
    if not metrics_dir.is_dir():
        raise ConfigError(f"metrics directory not found: {metrics_dir}")
    cases = []
    for path in sorted(metrics_dir.glob("*.json")):
        cases.append(CaseMetrics.from_dict(json.loads(path.read_text())))
    if not cases:
        raise ConfigError(f"no per-case metrics JSON in {metrics_dir}")
    agg = aggregate(cases)
    payload = json.dumps(agg.to_dict(), indent=2, sort_keys=True)
    if args.json_out:
        Path(args.json_out).write_text(payload + "\n")
    print(payload)
    return 0


def _cmd_clahe(args) -> int:
    params = ClaheParams(tiles=tuple(args.tiles), bins=args.bins, clip_fraction=args.clip)
    vol = nifti.read_volume(args.input)
    nifti.write_volume(clahe3d(vol, params), args.output)
    print(f"{args.input} -> {args.output} (tiles={params.tiles}, bins={params.bins}, "
          f"clip={params.clip_fraction}, kernels={active_backend()})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atriaseg",
        description="Two-stage bi-atrial LGE-MRI segmentation pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="full pipeline over a dataset")
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_pre = sub.add_parser("preprocess", help="ROI extraction + CLAHE only")
    _add_config_flags(p_pre)
    p_pre.set_defaults(func=_cmd_preprocess)

    p_post = sub.add_parser("postprocess", help="morphological cleanup of masks")
    _add_config_flags(p_post)
    p_post.add_argument("--input", help="single mask file")
    p_post.add_argument("--output", help="output path for --input")
    p_post.add_argument("--input-dir", help="directory of masks (batch mode)")
    p_post.add_argument("--postprocessed-dir", help="output directory (batch mode)")
    p_post.set_defaults(func=_cmd_postprocess)

    p_eval = sub.add_parser("evaluate", help="DSC/HD95 on prediction/GT pairs")
    _add_config_flags(p_eval)
    p_eval.add_argument("--pred", help="single prediction file")
    p_eval.add_argument("--gt", help="single ground-truth file")
    p_eval.add_argument("--pred-dir", help="directory of predictions (batch mode)")
    p_eval.add_argument("--json-out", help="write the metrics JSON here too")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_rep = sub.add_parser("report", help="re-aggregate per-case metrics JSON")
    p_rep.add_argument("metrics_dir")
    p_rep.add_argument("--json-out")
    p_rep.set_defaults(func=_cmd_report)

    p_clahe = sub.add_parser("clahe", help="equalise one volume")
    p_clahe.add_argument("input")
    p_clahe.add_argument("output")
    p_clahe.add_argument("--tiles", type=int, nargs=3, default=[8, 8, 8])
    p_clahe.add_argument("--bins", type=int, default=256)
    p_clahe.add_argument("--clip", type=float, default=0.01)
    p_clahe.set_defaults(func=_cmd_clahe)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
