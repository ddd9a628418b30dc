"""Batch orchestration of the four pipeline stages.

Per case: downsample -> coarse segmentation -> centroid -> fixed crop ->
CLAHE -> segmentation -> morphological post-processing -> paste back into
the original grid. Stage wall-clock times are recorded under the keys
roi / clahe / segmentation / postprocess; metrics are computed in the
original geometry whenever ground truth is present. A failing stage marks
the case failed and the batch continues.
"""

from __future__ import annotations

import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import nifti
from .backends import BackendError, BackendSpec, coarse_segment, segment
from .clahe import ClaheParams, clahe3d
from .geometry import Dims, LabelMap, require_same_geometry
from .metrics import (AggregateMetrics, CaseMetrics, ClassMetrics, UndefinedMetricError,
                      aggregate, dice, hd95, wall_thickness)
from .morphology import postprocess
from .resample import downsample_linear
from .roi import EmptyMaskError, RoiParams, centroid, crop_box_from_coarse_centroid, \
    crop_with_padding, paste_back

log = logging.getLogger("atriaseg")

STAGE_KEYS = ("roi", "clahe", "segmentation", "postprocess")

DEFAULT_LABELS = {"background": 0, "wall": 1, "ra": 2, "la": 3}
DEFAULT_CLASS_ORDER = ("wall", "ra", "la")


class ConfigError(ValueError):
    """Bad configuration; maps to exit code 2."""


@dataclass(frozen=True)
class PipelineConfig:
    dataset_root: str = "."
    output_dir: str = "out"
    image_pattern: str = "{case}/{case}.nii.gz"
    gt_pattern: str = "{case}/{case}_gt.nii.gz"
    roi: RoiParams = RoiParams()
    clahe: ClaheParams = ClaheParams()
    labels: dict = field(default_factory=lambda: dict(DEFAULT_LABELS))
    class_order: tuple = DEFAULT_CLASS_ORDER
    thickness_class: str = "wall"
    coarse_backend: BackendSpec = BackendSpec(kind="threshold", percentile=90)
    fine_backend: BackendSpec = BackendSpec(kind="threshold", percentile=90)
    workers: int = 1
    enable_clahe: bool = True
    enable_postprocess: bool = True
    compute_thickness: bool = True

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if "background" not in self.labels or self.labels["background"] != 0:
            raise ConfigError("label encoding must map 'background' to 0")
        for name in self.class_order:
            if name not in self.labels:
                raise ConfigError(f"class_order entry {name!r} missing from label encoding")
        values = list(self.labels.values())
        if len(set(values)) != len(values):
            raise ConfigError(f"label encoding values must be unique, got {self.labels}")
        if any(not (0 <= v <= 255) for v in values):
            raise ConfigError("label values must fit in uint8")

    @property
    def allowed_labels(self) -> tuple:
        return tuple(sorted(self.labels.values()))

    def class_id(self, name: str) -> int:
        return self.labels[name]


def config_from_dict(d: dict) -> PipelineConfig:
    d = dict(d)
    try:
        if "roi" in d:
            roi = d["roi"]
            d["roi"] = RoiParams(box=Dims(*roi["box"]), factors=tuple(roi.get("factors", (4, 4, 2))))
        if "clahe" in d:
            c = d["clahe"]
            d["clahe"] = ClaheParams(
                tiles=tuple(c.get("tiles", (8, 8, 8))),
                bins=c.get("bins", 256),
                clip_fraction=c.get("clip_fraction", 0.01),
                max_redistribution_passes=c.get("max_redistribution_passes", 5))
        for key in ("coarse_backend", "fine_backend"):
            if key in d:
                d[key] = BackendSpec.from_dict(d[key])
        if "class_order" in d:
            d["class_order"] = tuple(d["class_order"])
        return PipelineConfig(**d)
    except (TypeError, KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as fh:
            return config_from_dict(json.load(fh))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    image_path: Path
    gt_path: Path | None  # None -> inference-only


def _pattern_regex(pattern: str) -> re.Pattern:
    """Turn a '{case}' filename pattern into a regex over relative paths."""
    parts = pattern.split("{case}")
    if len(parts) < 2:
        raise ConfigError(f"image pattern must contain {{case}}: {pattern!r}")
    out = re.escape(parts[0]) + r"(?P<case>[^/]+)"
    for part in parts[1:-1]:
        out += re.escape(part) + r"(?P=case)"
    out += re.escape(parts[-1])
    return re.compile(out)


def _pattern_variants(pattern: str) -> list[str]:
    """A .nii pattern also matches .nii.gz files and vice versa, so mixed
    compression is discovered (and double-stored cases are flagged)."""
    if pattern.endswith(".nii.gz"):
        return [pattern, pattern[:-3]]
    if pattern.endswith(".nii"):
        return [pattern, pattern + ".gz"]
    return [pattern]


def discover_cases(config: PipelineConfig) -> list[CaseRecord]:
    """Scan the dataset root for images matching the configured pattern;
    deterministic lexicographic order by case id."""
    root = Path(config.dataset_root)
    if not root.is_dir():
        raise ConfigError(f"dataset root is not a directory: {root}")
    regexes = [_pattern_regex(p) for p in _pattern_variants(config.image_pattern)]
    found: dict[str, Path] = {}
    for path in sorted(root.rglob("*")):
        if not path.is_file():
            continue
        rel = path.relative_to(root).as_posix()
        for regex in regexes:
            match = regex.fullmatch(rel)
            if not match:
                continue
            case_id = match.group("case")
            if case_id in found:
                raise ConfigError(f"duplicate case id {case_id!r}: "
                                  f"{found[case_id]} and {path}")
            found[case_id] = path
            break
    if not found:
        raise ConfigError(f"no cases matching {config.image_pattern!r} under {root}")
    records = []
    for case_id in sorted(found):
        gt_path = None
        for gt_pattern in _pattern_variants(config.gt_pattern):
            candidate = root / gt_pattern.format(case=case_id)
            if candidate.is_file():
                gt_path = candidate
                break
        records.append(CaseRecord(case_id, found[case_id], gt_path))
    return records


@dataclass
class CaseResult:
    case_id: str
    ok: bool
    prediction: LabelMap | None = None
    metrics: CaseMetrics | None = None
    timings_s: dict = field(default_factory=dict)
    failed_stage: str | None = None
    error: str | None = None


class _StageClock:
    def __init__(self):
        self.timings = {key: 0.0 for key in STAGE_KEYS}
        self._t0 = time.perf_counter()

    def mark(self, key: str, start: float) -> None:
        self.timings[key] += time.perf_counter() - start

    def total(self) -> float:
        return time.perf_counter() - self._t0


def run_case(case: CaseRecord, config: PipelineConfig) -> CaseResult:
    """Execute the full stage sequence for one case."""
    clock = _StageClock()
    stage = "load"
    try:
        image = nifti.read_volume(case.image_path)

        stage = "roi"
        t = time.perf_counter()
        coarse = downsample_linear(image, *config.roi.factors)
        coarse_mask = coarse_segment(coarse, config.coarse_backend, case.case_id)
        try:
            c = centroid(coarse_mask)
        except EmptyMaskError:
            c = (coarse.dims.nx // 2, coarse.dims.ny // 2, coarse.dims.nz // 2)
            log.warning("case %s: coarse mask empty, falling back to the volume centre",
                        case.case_id)
        box = crop_box_from_coarse_centroid(c, config.roi, image.dims)
        roi_vol = crop_with_padding(image, box)
        clock.mark("roi", t)

        if config.enable_clahe:
            stage = "clahe"
            t = time.perf_counter()
            roi_vol = clahe3d(roi_vol, config.clahe)
            clock.mark("clahe", t)

        stage = "segmentation"
        t = time.perf_counter()
        pred_roi = segment(roi_vol, config.fine_backend, case.case_id,
                           allowed=config.allowed_labels)
        clock.mark("segmentation", t)

        stage = "postprocess"
        t = time.perf_counter()
        if config.enable_postprocess:
            class_ids = tuple(config.class_id(n) for n in config.class_order)
            pred_roi = postprocess(pred_roi, class_ids)
        prediction = paste_back(pred_roi, box, image.dims, image.spacing)
        clock.mark("postprocess", t)
        require_same_geometry(prediction, image, "final prediction")

        stage = "evaluate"
        case_metrics = CaseMetrics(case.case_id)
        if case.gt_path is not None:
            gt = nifti.read_labels(case.gt_path, allowed=config.allowed_labels)
            require_same_geometry(gt, image, "ground truth")
            for name in config.class_order:
                cls = config.class_id(name)
                d = dice(prediction, gt, cls)
                try:
                    h, status = hd95(prediction, gt, cls), "ok"
                except UndefinedMetricError as exc:
                    h, status = None, exc.reason
                case_metrics.classes[name] = ClassMetrics(d, h, status)
        if config.compute_thickness and config.thickness_class in config.labels:
            try:
                case_metrics.wall_thickness = wall_thickness(
                    prediction, config.class_id(config.thickness_class))
            except UndefinedMetricError:
                case_metrics.wall_thickness = None

        timings = dict(clock.timings)
        timings["total"] = clock.total()
        case_metrics.timings_s = timings
        return CaseResult(case.case_id, True, prediction, case_metrics, timings)
    except (nifti.NiftiError, BackendError, ValueError, OSError) as exc:
        log.error("case %s failed at stage %s: %s", case.case_id, stage, exc)
        return CaseResult(case.case_id, False, failed_stage=stage, error=str(exc),
                          timings_s=dict(clock.timings))


def _json_dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csvs(out_dir: Path, results: list[CaseResult], agg: AggregateMetrics | None) -> None:
    lines = ["case_id,class,dice,hd95_mm,hd95_status"]
    for r in results:
        if r.ok and r.metrics:
            for name, cm in r.metrics.classes.items():
                hd = "" if cm.hd95_mm is None else repr(cm.hd95_mm)
                lines.append(f"{r.case_id},{name},{cm.dice!r},{hd},{cm.hd95_status}")
    (out_dir / "per_case_metrics.csv").write_text("\n".join(lines) + "\n")

    lines = ["class,metric,mean,std,n"]
    if agg is not None:
        for name, metrics_ in agg.per_class.items():
            for metric, stat in metrics_.items():
                lines.append(f"{name},{metric},{stat.mean!r},{stat.std!r},{stat.n}")
    (out_dir / "aggregate.csv").write_text("\n".join(lines) + "\n")


def run_dataset(config: PipelineConfig) -> tuple[AggregateMetrics | None, list[CaseResult]]:
    """Run every discovered case, write artifacts, and aggregate.

    Outputs under config.output_dir: predictions/<case>.nii.gz,
    metrics/<case>.json, aggregate.json, aggregate.csv and
    per_case_metrics.csv (per-case per-class rows for box plots). Apart
    from timing fields and the aggregate timestamp, outputs are
    byte-identical across reruns with deterministic backends.
    """
    cases = discover_cases(config)
    out_dir = Path(config.output_dir)
    (out_dir / "predictions").mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics").mkdir(parents=True, exist_ok=True)

    if config.workers == 1:
        results = [run_case(case, config) for case in cases]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(lambda c: run_case(c, config), cases))
    results.sort(key=lambda r: r.case_id)

    for r in results:
        if r.ok and r.prediction is not None:
            nifti.write_volume(r.prediction, out_dir / "predictions" / f"{r.case_id}.nii.gz")
        if r.ok and r.metrics is not None:
            _json_dump(r.metrics.to_dict(), out_dir / "metrics" / f"{r.case_id}.json")

    scored = [r.metrics for r in results if r.ok and r.metrics and r.metrics.classes]
    agg = aggregate(scored) if scored else None
    failures = [{"case_id": r.case_id, "stage": r.failed_stage, "error": r.error}
                for r in results if not r.ok]

    timing_means = {}
    ok_results = [r for r in results if r.ok]
    if ok_results:
        for key in (*STAGE_KEYS, "total"):
            timing_means[key] = sum(r.timings_s.get(key, 0.0) for r in ok_results) / len(ok_results)

    report = {
        "n_cases": len(results),
        "n_ok": len(ok_results),
        "n_failed": len(failures),
        "n_scored": len(scored),
        "connectivity": 6,  # face adjacency used by post-processing and surfaces
        "aggregate": agg.to_dict() if agg else None,
        "failures": failures,
        "timings_s": timing_means,          # volatile
        "generated_at": datetime.now(timezone.utc).isoformat(),  # volatile
    }
    _json_dump(report, out_dir / "aggregate.json")
    _write_csvs(out_dir, results, agg)

    if not any(r.ok for r in results):
        log.error("all %d cases failed", len(results))
    return agg, results


def preprocess_cases(config: PipelineConfig) -> list[CaseResult]:
    """Stages A-B only: write cropped (and equalised) ROI volumes plus a
    sidecar JSON recording the crop box for later paste-back."""
    cases = discover_cases(config)
    out_dir = Path(config.output_dir) / "roi"
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for case in cases:
        stage = "load"
        try:
            image = nifti.read_volume(case.image_path)
            stage = "roi"
            coarse = downsample_linear(image, *config.roi.factors)
            coarse_mask = coarse_segment(coarse, config.coarse_backend, case.case_id)
            try:
                c = centroid(coarse_mask)
            except EmptyMaskError:
                c = (coarse.dims.nx // 2, coarse.dims.ny // 2, coarse.dims.nz // 2)
                log.warning("case %s: coarse mask empty, falling back to the volume centre",
                            case.case_id)
            box = crop_box_from_coarse_centroid(c, config.roi, image.dims)
            roi_vol = crop_with_padding(image, box)
            if config.enable_clahe:
                stage = "clahe"
                roi_vol = clahe3d(roi_vol, config.clahe)
            nifti.write_volume(roi_vol, out_dir / f"{case.case_id}.nii.gz")
            _json_dump({
                "case_id": case.case_id,
                "box_origin": list(box.origin),
                "box_size": list(box.size.as_tuple()),
                "full_dims": list(image.dims.as_tuple()),
                "full_spacing": list(image.spacing.as_tuple()),
            }, out_dir / f"{case.case_id}_box.json")
            results.append(CaseResult(case.case_id, True))
        except (nifti.NiftiError, BackendError, ValueError, OSError) as exc:
            log.error("case %s failed at stage %s: %s", case.case_id, stage, exc)
            results.append(CaseResult(case.case_id, False, failed_stage=stage, error=str(exc)))
    return results


def evaluate_pair(pred: LabelMap, gt: LabelMap, config: PipelineConfig,
                  case_id: str = "") -> CaseMetrics:
    """Metrics for one prediction/GT pair in their shared geometry."""
    require_same_geometry(pred, gt, "evaluate")
    cm = CaseMetrics(case_id)
    for name in config.class_order:
        cls = config.class_id(name)
        d = dice(pred, gt, cls)
        try:
            h, status = hd95(pred, gt, cls), "ok"
        except UndefinedMetricError as exc:
            h, status = None, exc.reason
        cm.classes[name] = ClassMetrics(d, h, status)
    if config.compute_thickness and config.thickness_class in config.labels:
        try:
            cm.wall_thickness = wall_thickness(pred, config.class_id(config.thickness_class))
        except UndefinedMetricError:
            cm.wall_thickness = None
    return cm


__all__ = ["PipelineConfig", "CaseRecord", "CaseResult", "ConfigError", "config_from_dict",
           "load_config", "discover_cases", "run_case", "run_dataset", "preprocess_cases",
           "evaluate_pair", "STAGE_KEYS"]
