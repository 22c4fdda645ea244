"""Config-driven post-processing pipeline over one or more datasets.

Per dataset, the configured stages run in order on a dict of prediction sets
keyed by model id:

``soft-nms``        suppression on every model's predictions (``nms`` config)
``tta-merge``       predictions tagged with a test scale are rescaled to the
                    image size and merged into one set per base model
``semantic-fusion`` semantic defect pixels unioned into the primary model
``ensemble``        all remaining sets fused into one (``ensemble`` config)
``evaluate``        mask mAP / mAR of the primary (or only) set
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from maskfuse.ensemble import EnsembleConfig, PredictionSet, ensemble_fuse, group_by_image, tta_merge
from maskfuse.errors import ConfigError, ValidationError
from maskfuse.evaluation import (
    EvalParams,
    EvalResult,
    GroundTruth,
    MetricsReport,
    aggregate_report,
    evaluate,
    semantic_mean_iou,
)
from maskfuse.io import (
    dump_predictions,
    load_ground_truth,
    load_predictions,
    load_semantic_maps,
    parse_ground_truth,
    parse_predictions,
    parse_semantic_maps,
    read_json,
    write_json,
)
from maskfuse.nms import Detection, NmsConfig, suppress
from maskfuse.semantic import SemanticFusionConfig, fuse_semantic

log = logging.getLogger(__name__)

STAGES = ("soft-nms", "tta-merge", "semantic-fusion", "ensemble", "evaluate")
DEFAULT_STAGES = ("soft-nms", "semantic-fusion", "ensemble", "evaluate")
ENSEMBLE_ID = "ensemble"


@dataclass(frozen=True)
class ScaleTag:
    model: str
    size: tuple[int, int]


@dataclass
class DatasetSpec:
    name: str
    gt_path: Path
    prediction_paths: dict[str, Path]
    semantic_path: Path | None = None
    semantic_gt_path: Path | None = None
    scale_tags: dict[str, ScaleTag] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)
    model_maps: dict[str, float] | None = None
    primary_model: str | None = None

    @property
    def primary(self) -> str:
        if self.primary_model is not None:
            return self.primary_model
        first = next(iter(self.prediction_paths))
        return self.scale_tags[first].model if first in self.scale_tags else first


@dataclass
class PipelineConfig:
    datasets: list[DatasetSpec]
    output_dir: Path
    stages: tuple[str, ...] = DEFAULT_STAGES
    semantic: SemanticFusionConfig = field(default_factory=SemanticFusionConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    nms: NmsConfig = field(default_factory=NmsConfig)
    eval: EvalParams = field(default_factory=EvalParams)

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("stage list is empty")
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stage(s) {unknown}; choose from {list(STAGES)}")
        if not self.datasets:
            raise ConfigError("config lists no datasets")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate dataset names in {names}")
        if "tta-merge" in self.stages and not any(d.scale_tags for d in self.datasets):
            raise ConfigError("stage 'tta-merge' needs scale_tags on at least one dataset")

    def with_stages(self, stages) -> "PipelineConfig":
        return dataclasses.replace(self, stages=tuple(stages))


def _build(cls, obj, name: str, **convert):
    if obj is None:
        return cls()
    if not isinstance(obj, dict):
        raise ConfigError(f"'{name}' must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    extra = set(obj) - known
    if extra:
        raise ConfigError(f"unknown field(s) {sorted(extra)} in '{name}'")
    kwargs = {k: convert[k](v) if k in convert else v for k, v in obj.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{name}': {exc}") from exc


def _dataset_from_json(obj, base: Path) -> DatasetSpec:
    if not isinstance(obj, dict):
        raise ConfigError("each dataset entry must be an object")
    try:
        name = obj["name"]
        gt_path = base / obj["gt_path"]
        preds = obj["prediction_paths"]
    except KeyError as exc:
        raise ConfigError(f"dataset entry missing field {exc}") from exc
    if not isinstance(preds, dict) or not preds:
        raise ConfigError(f"dataset {name!r}: prediction_paths must be a non-empty object")
    tags = {}
    for key, tag in (obj.get("scale_tags") or {}).items():
        if key not in preds:
            raise ConfigError(f"dataset {name!r}: scale tag for unknown prediction {key!r}")
        try:
            tags[key] = ScaleTag(str(tag["model"]), (int(tag["size"][0]), int(tag["size"][1])))
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise ConfigError(f"dataset {name!r}: scale tag {key!r} needs model and size [h, w]") from exc
    known = {
        "name", "gt_path", "prediction_paths", "semantic_path", "semantic_gt_path",
        "scale_tags", "weights", "model_maps", "primary_model",
    }
    extra = set(obj) - known
    if extra:
        raise ConfigError(f"dataset {name!r}: unknown field(s) {sorted(extra)}")
    optional_path = lambda key: base / obj[key] if obj.get(key) else None  # noqa: E731
    return DatasetSpec(
        name=str(name),
        gt_path=gt_path,
        prediction_paths={str(k): base / v for k, v in preds.items()},
        semantic_path=optional_path("semantic_path"),
        semantic_gt_path=optional_path("semantic_gt_path"),
        scale_tags=tags,
        weights={str(k): float(v) for k, v in (obj.get("weights") or {}).items()},
        model_maps=obj.get("model_maps"),
        primary_model=obj.get("primary_model"),
    )


def config_from_json(obj: Any, base_dir: str | Path = ".") -> PipelineConfig:
    """Build a :class:`PipelineConfig`; relative paths resolve against ``base_dir``."""
    base = Path(base_dir)
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    known = {"datasets", "stages", "semantic", "ensemble", "nms", "eval", "output_dir"}
    extra = set(obj) - known
    if extra:
        raise ConfigError(f"unknown top-level field(s) {sorted(extra)}")
    if "datasets" not in obj or "output_dir" not in obj:
        raise ConfigError("config needs 'datasets' and 'output_dir'")
    ensemble = _build(
        EnsembleConfig,
        obj.get("ensemble"),
        "ensemble",
        nms=lambda v: _build(NmsConfig, v, "ensemble.nms"),
    )
    eval_params = _build(
        EvalParams,
        obj.get("eval"),
        "eval",
        iou_thresholds=tuple,
        recall_points=tuple,
    )
    return PipelineConfig(
        datasets=[_dataset_from_json(d, base) for d in obj["datasets"]],
        output_dir=base / obj["output_dir"],
        stages=tuple(obj.get("stages", DEFAULT_STAGES)),
        semantic=_build(SemanticFusionConfig, obj.get("semantic"), "semantic"),
        ensemble=ensemble,
        nms=_build(NmsConfig, obj.get("nms"), "nms"),
        eval=eval_params,
    )


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        obj = read_json(path)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    return config_from_json(obj, path.parent)


@dataclass
class DatasetResult:
    name: str
    detections: list[Detection]
    metrics: EvalResult | None = None
    semantic_miou: float | None = None


def _merge_scales(state: dict[str, list[Detection]], ds: DatasetSpec, gt: GroundTruth, cfg: PipelineConfig):
    groups: dict[str, list[str]] = {}
    for key in state:
        if key in ds.scale_tags:
            groups.setdefault(ds.scale_tags[key].model, []).append(key)
    merged: dict[str, list[Detection]] = {}
    for key, dets in state.items():
        tag = ds.scale_tags.get(key)
        if tag is None:
            merged[key] = dets
            continue
        if tag.model in merged:
            continue
        members = groups[tag.model]
        per_image = {k: group_by_image(state[k]) for k in members}
        fused = []
        for image_id in gt.images:
            height, width = gt.images[image_id]
            scaled = [
                (ds.scale_tags[k].size, PredictionSet(k, per_image[k].get(image_id, [])))
                for k in members
            ]
            fused += tta_merge(scaled, height, width, cfg.ensemble)
        merged[tag.model] = fused
    return merged


def _ensemble(state: dict[str, list[Detection]], ds: DatasetSpec, cfg: PipelineConfig) -> list[Detection]:
    ens = cfg.ensemble
    if ens.weights_mode == "map-normalized" and ds.model_maps:
        ens = dataclasses.replace(ens, model_maps=ds.model_maps)
    sets = [PredictionSet(key, dets, weight=ds.weights.get(key, 1.0)) for key, dets in state.items()]
    return ensemble_fuse(sets, ens)


def run_dataset(ds: DatasetSpec, cfg: PipelineConfig) -> DatasetResult:
    gt = load_ground_truth(ds.gt_path)
    state: dict[str, list[Detection]] = {}
    for key, path in ds.prediction_paths.items():
        tag = ds.scale_tags.get(key)
        state[key] = load_predictions(path, gt, mask_size=tag.size if tag else None)

    result = DatasetResult(ds.name, [])
    for stage in cfg.stages:
        log.info("%s: stage %s", ds.name, stage)
        if stage == "soft-nms":
            state = {key: suppress(dets, cfg.nms) for key, dets in state.items()}
        elif stage == "tta-merge":
            state = _merge_scales(state, ds, gt, cfg)
        elif stage == "semantic-fusion":
            if ds.semantic_path is None:
                continue
            if ds.primary not in state:
                raise ConfigError(f"{ds.name}: primary model {ds.primary!r} not among {list(state)}")
            maps = {m.image_id: m for m in load_semantic_maps(ds.semantic_path)}
            fused = []
            for image_id, dets in group_by_image(state[ds.primary]).items():
                fused += fuse_semantic(dets, maps[image_id], cfg.semantic) if image_id in maps else dets
            state[ds.primary] = fused
        elif stage == "ensemble":
            state = {ENSEMBLE_ID: _ensemble(state, ds, cfg)}
        elif stage == "evaluate":
            result.metrics = evaluate(_final(state, ds), gt, cfg.eval)

    result.detections = _final(state, ds)
    if ds.semantic_path is not None and ds.semantic_gt_path is not None:
        result.semantic_miou = semantic_mean_iou(
            load_semantic_maps(ds.semantic_path), load_semantic_maps(ds.semantic_gt_path)
        )
    return result


def _final(state: dict[str, list[Detection]], ds: DatasetSpec) -> list[Detection]:
    if len(state) == 1:
        return next(iter(state.values()))
    if ds.primary not in state:
        raise ConfigError(f"{ds.name}: primary model {ds.primary!r} not among {list(state)}")
    return state[ds.primary]


def run_pipeline(cfg: PipelineConfig, jobs: int = 1) -> MetricsReport | None:
    """Run every dataset, write fused predictions and, if anything was evaluated, the report.

    Outputs under ``cfg.output_dir``: ``<dataset>/predictions.json``,
    ``report.json`` and ``report.txt``. Datasets run on up to ``jobs``
    threads; results are collected in config order so output never depends
    on scheduling.
    """
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(lambda ds: run_dataset(ds, cfg), cfg.datasets))

    out = Path(cfg.output_dir)
    for res in results:
        write_json(out / res.name / "predictions.json", dump_predictions(res.detections))

    evaluated = {r.name: r.metrics for r in results if r.metrics is not None}
    if not evaluated:
        return None
    mious = {r.name: r.semantic_miou for r in results if r.semantic_miou is not None}
    report = aggregate_report(evaluated, mious or None)
    write_json(out / "report.json", report.to_json())
    (out / "report.txt").write_text(report.render_table() + "\n")
    return report


def validate_inputs(cfg: PipelineConfig) -> list[str]:
    """Scan every input file without running anything; an empty list means runnable."""
    diagnostics: list[str] = []
    for ds in cfg.datasets:
        gt = None
        if not ds.gt_path.exists():
            diagnostics.append(f"{ds.name}: ground truth {ds.gt_path} does not exist")
        else:
            try:
                gt, problems = parse_ground_truth(read_json(ds.gt_path), str(ds.gt_path))
                diagnostics += problems
            except ValidationError as exc:
                diagnostics += exc.diagnostics
        for key, path in ds.prediction_paths.items():
            if not path.exists():
                diagnostics.append(f"{ds.name}: predictions {key!r} at {path} do not exist")
                continue
            tag = ds.scale_tags.get(key)
            try:
                _, problems = parse_predictions(read_json(path), str(path), gt, tag.size if tag else None)
                diagnostics += problems
            except ValidationError as exc:
                diagnostics += exc.diagnostics
        for path in (ds.semantic_path, ds.semantic_gt_path):
            if path is None:
                continue
            if not path.exists():
                diagnostics.append(f"{ds.name}: semantic maps {path} do not exist")
                continue
            try:
                maps, problems = parse_semantic_maps(read_json(path), str(path))
            except ValidationError as exc:
                diagnostics += exc.diagnostics
                continue
            diagnostics += problems
            if gt is not None:
                for i, smap in enumerate(maps):
                    if smap.image_id not in gt.images:
                        diagnostics.append(f"{path}: map {i}: image_id {smap.image_id!r} not in ground truth")
                    elif smap.mask.shape != gt.images[smap.image_id]:
                        diagnostics.append(
                            f"{path}: map {i}: size {list(smap.mask.shape)} != image size "
                            f"{list(gt.images[smap.image_id])}"
                        )
        if "semantic-fusion" in cfg.stages and ds.semantic_path is not None:
            models = {ds.scale_tags[k].model if k in ds.scale_tags else k for k in ds.prediction_paths}
            if ds.primary not in models:
                diagnostics.append(f"{ds.name}: primary model {ds.primary!r} not among {sorted(models)}")
    return diagnostics
