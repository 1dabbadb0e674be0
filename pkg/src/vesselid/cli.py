"""Command-line orchestrator for the two-step identification pipeline.

Subcommands: ingest, synth, split, augment, detect, classify, fit-classifier,
evaluate, report, loop, serve. Every command is deterministic given
(inputs, config, seed) and writes a run manifest next to its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from . import __version__
from .core import Annotation, BBox, GenusCatalog, ProbabilityVector, Review, SlideMeta, Source, argmax_class
from .dataset import (
    DatasetIndex,
    ReviewDecision,
    SplitAssignment,
    SplitError,
    merge_review,
    split as split_index,
    stats as dataset_stats,
)
from .metrics import (
    ConfusionMatrix,
    MatchConfig,
    average_precision_11pt,
    detection_report_text,
    f_beta,
    macro_f1,
    match,
    merge_classes,
    per_genus_detection_report,
    save_detection_report,
)
from .preprocess import NormalizeConfig, extract_crop, grayscale, normalize_crop, plan_tiles, stitch
from .scorers import (
    CentroidClassifier,
    Detection,
    DetectorParams,
    PresenceRule,
    ScorerBinding,
    detect_baseline,
    filter_by_confidence,
    fuse,
    read_classification_file,
    read_detection_file,
    slide_report,
    write_classification_file,
    write_detection_file,
)
from .slide_store import SlideContainer, ingest as ingest_slide
from .synth import default_profiles, generate as synth_generate, load_synth_config


@dataclass(frozen=True)
class RunConfig:
    """Defaults are the best-performing reference configuration: 5184 px
    detection side, 800 px crops, grayscale on, per-plane scoring fused by
    averaging."""

    dataset_root: Path
    out_dir: Path
    detection_long_side: int = 5184
    detection_tile_size: int = 2560
    detection_tile_overlap: int = 256
    detection_plane: Optional[int] = None  # None = middle plane
    crop_target: int = 800
    grayscale: bool = True
    plane_mode: str = "per_plane"
    fusion: str = "average"
    confidence_threshold: float = 0.25
    iou_threshold: float = 0.5
    presence_min_count: int = 3
    presence_min_fraction: float = 0.05
    detector: ScorerBinding = ScorerBinding("baseline_detector")
    classifier: ScorerBinding = ScorerBinding("baseline_classifier")
    classifier_file: Optional[Path] = None
    seed: int = 0

    def normalize_config(self) -> NormalizeConfig:
        return NormalizeConfig(target=self.crop_target, grayscale=self.grayscale)

    def match_config(self) -> MatchConfig:
        return MatchConfig(self.iou_threshold, self.confidence_threshold)

    def presence_rule(self) -> PresenceRule:
        return PresenceRule(self.presence_min_count, self.presence_min_fraction)


def load_run_config(
    dataset_root, out_dir, config_path=None, seed: Optional[int] = None, **overrides
) -> RunConfig:
    doc = {}
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            doc = json.load(fh).get("pipeline", {})
    bindings = {}
    for role, default_kind in (("detector", "baseline_detector"), ("classifier", "baseline_classifier")):
        entry = doc.pop(role, None)
        if entry:
            bindings[role] = ScorerBinding(entry["kind"], entry.get("params", {}))
        else:
            bindings[role] = ScorerBinding(default_kind)
    known = {f for f in RunConfig.__dataclass_fields__}
    unknown = [k for k in doc if k not in known]
    if unknown:
        raise ValueError(f"unknown pipeline config keys: {unknown}")
    merged = {**doc, **{k: v for k, v in overrides.items() if v is not None}}
    if seed is not None:
        merged["seed"] = seed
    if "classifier_file" in merged and merged["classifier_file"] is not None:
        merged["classifier_file"] = Path(merged["classifier_file"])
    return RunConfig(dataset_root=Path(dataset_root), out_dir=Path(out_dir), **bindings, **merged)


def _config_digest(cfg: RunConfig) -> str:
    doc = asdict(cfg)
    doc = {k: str(v) if isinstance(v, Path) else v for k, v in doc.items()}
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()


def write_manifest(cfg: RunConfig, command: str, extra: Optional[dict] = None) -> Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "config_sha256": _config_digest(cfg),
        "versions": {
            "vesselid": __version__,
            "numpy": np.__version__,
            "pillow": Image.__version__ if hasattr(Image, "__version__") else "unknown",
            "python": sys.version.split()[0],
        },
    }
    if extra:
        manifest.update(extra)
    path = cfg.out_dir / "run_manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# shared pipeline pieces
# ---------------------------------------------------------------------------


def _open_container(cfg: RunConfig, slide_id: str) -> SlideContainer:
    return SlideContainer.open(cfg.dataset_root / "slides" / slide_id)


def _slide_ids(cfg: RunConfig, only: Optional[Sequence[str]] = None) -> List[str]:
    slides_dir = cfg.dataset_root / "slides"
    ids = sorted(p.parent.name for p in slides_dir.glob("*/meta.json"))
    if only:
        missing = [s for s in only if s not in ids]
        if missing:
            raise FileNotFoundError(f"no such slides in dataset: {missing}")
        ids = [s for s in ids if s in only]
    return ids


def detect_slide(cfg: RunConfig, container: SlideContainer) -> List[Detection]:
    """downscale -> tile -> score -> stitch -> level-0 coordinates."""
    meta = container.meta
    plane = cfg.detection_plane if cfg.detection_plane is not None else meta.plane_count // 2
    if cfg.detector.kind == "external_file":
        path = cfg.detector.external_path(meta.slide_id)
        return read_detection_file(path, meta.slide_id, meta.long_side_px)

    working_long = min(cfg.detection_long_side, meta.long_side_px)
    view = container.downscaled_view(plane, working_long)
    gray = grayscale(view) if view.ndim == 3 else view
    params = DetectorParams(**cfg.detector.params) if cfg.detector.params else DetectorParams()
    h, w = gray.shape
    if max(w, h) <= cfg.detection_tile_size:
        plan = plan_tiles(w, h, max(w, h), 0)  # whole working image is one tile
    else:
        plan = plan_tiles(w, h, cfg.detection_tile_size, cfg.detection_tile_overlap)
    per_tile = []
    for i, rect in enumerate(plan.rects):
        tile = gray[rect.y0 : rect.y1, rect.x0 : rect.x1]
        dets = detect_baseline(tile, params)
        per_tile.append((i, [(d.bbox, d.confidence) for d in dets]))
    merged = stitch(per_tile, plan, iou_threshold=0.5)
    factor = meta.long_side_px / working_long
    out = [Detection(box.scale(factor), conf) for box, conf in merged]
    out.sort(key=lambda d: (d.bbox.y_min, d.bbox.x_min))
    return out


def cmd_detect(cfg: RunConfig, slides: Optional[Sequence[str]] = None) -> Dict[str, Path]:
    det_dir = cfg.out_dir / "detections"
    det_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for slide_id in _slide_ids(cfg, slides):
        container = _open_container(cfg, slide_id)
        detections = detect_slide(cfg, container)
        path = det_dir / f"{slide_id}.txt"
        write_detection_file(path, slide_id, container.meta.long_side_px, detections)
        written[slide_id] = path
    write_manifest(cfg, "detect", {"slides": sorted(written)})
    return written


def _load_classifier(cfg: RunConfig) -> CentroidClassifier:
    if cfg.classifier_file is None:
        raise FileNotFoundError(
            "no classifier file configured; run fit-classifier first or set classifier_file"
        )
    return CentroidClassifier.load(cfg.classifier_file)


def classify_detections(
    cfg: RunConfig,
    container: SlideContainer,
    detections: Sequence[Detection],
    classifier: Optional[CentroidClassifier],
) -> Dict[str, ProbabilityVector]:
    """extract -> normalize -> (grayscale) -> per-plane score -> fuse."""
    meta = container.meta
    rows: Dict[str, ProbabilityVector] = {}
    norm_cfg = cfg.normalize_config()
    for i, det in enumerate(detections):
        ann_id = f"{meta.slide_id}-d{i:04d}"
        vectors = []
        planes = _planes_for_mode(cfg.plane_mode, meta.plane_count)
        for plane in planes:
            crop = extract_crop(container, det.bbox, plane)
            crop = normalize_crop(crop, norm_cfg)
            if cfg.grayscale and crop.ndim == 3:
                crop = grayscale(crop)
            vectors.append(classifier.predict(crop))
        rows[ann_id] = fuse(vectors, cfg.fusion) if len(vectors) > 1 else vectors[0]
    return rows


def _planes_for_mode(mode: str, plane_count: int) -> List[int]:
    """0-based container planes scored for a given plane mode (modes carry
    1-based plane labels)."""
    if mode == "per_plane":
        return list(range(plane_count))
    kind, _, arg = mode.partition(":")
    if kind == "single":
        k = int(arg)
    else:
        raise ValueError(f"unsupported plane mode for the baseline classifier: {mode!r}")
    if not (1 <= k <= plane_count):
        raise IndexError(f"plane {k} missing; slide has {plane_count} planes")
    return [k - 1]


def cmd_classify(
    cfg: RunConfig, slides: Optional[Sequence[str]] = None, catalog: Optional[GenusCatalog] = None
) -> Dict[str, Path]:
    catalog = catalog or GenusCatalog()
    cls_dir = cfg.out_dir / "classifications"
    rep_dir = cfg.out_dir / "reports"
    cls_dir.mkdir(parents=True, exist_ok=True)
    rep_dir.mkdir(parents=True, exist_ok=True)
    classifier = None
    if cfg.classifier.kind == "baseline_classifier":
        classifier = _load_classifier(cfg)
        catalog = classifier.catalog
    written = {}
    for slide_id in _slide_ids(cfg, slides):
        container = _open_container(cfg, slide_id)
        det_path = cfg.out_dir / "detections" / f"{slide_id}.txt"
        if not det_path.exists():
            raise FileNotFoundError(f"no detections for slide {slide_id}; run detect first")
        detections = read_detection_file(det_path, slide_id, container.meta.long_side_px)
        detections = filter_by_confidence(detections, cfg.confidence_threshold)
        if cfg.classifier.kind == "external_file":
            rows = read_classification_file(cfg.classifier.external_path(slide_id), catalog, slide_id)
        else:
            rows = classify_detections(cfg, container, detections, classifier)
        path = cls_dir / f"{slide_id}.txt"
        write_classification_file(path, slide_id, catalog, rows)
        labels = [argmax_class(catalog, p) for p in rows.values()]
        presence = [
            {"genus": r.genus, "count": r.count, "fraction": r.fraction}
            for r in slide_report(labels, cfg.presence_rule())
        ]
        with open(rep_dir / f"{slide_id}_presence.json", "w", encoding="utf-8") as fh:
            json.dump({"slide_id": slide_id, "present": presence}, fh, indent=2)
            fh.write("\n")
        written[slide_id] = path
    write_manifest(cfg, "classify", {"slides": sorted(written)})
    return written


def fit_classifier(
    cfg: RunConfig,
    slides: Sequence[str],
    out_file,
    catalog: Optional[GenusCatalog] = None,
) -> CentroidClassifier:
    """Fit per-genus centroids on accepted annotations of the given slides."""
    catalog = catalog or GenusCatalog()
    index = DatasetIndex.load(cfg.dataset_root)
    crops_by_genus: Dict[str, List[np.ndarray]] = {}
    norm_cfg = cfg.normalize_config()
    for slide_id in slides:
        container = _open_container(cfg, slide_id)
        meta = container.meta
        for a in index.accepted_annotations(slide_id):
            genus = a.genus or meta.genus
            if genus is None:
                continue
            for plane in _planes_for_mode(cfg.plane_mode, meta.plane_count):
                crop = extract_crop(container, a.bbox, plane)
                crop = normalize_crop(crop, norm_cfg)
                if cfg.grayscale and crop.ndim == 3:
                    crop = grayscale(crop)
                crops_by_genus.setdefault(genus, []).append(crop)
    clf = CentroidClassifier(catalog).fit(crops_by_genus)
    if out_file is not None:
        Path(out_file).parent.mkdir(parents=True, exist_ok=True)
        clf.save(out_file)
    return clf


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(
    cfg: RunConfig,
    split_file=None,
    partition: str = "test",
    merge_mapping: Optional[Dict[str, str]] = None,
    catalog: Optional[GenusCatalog] = None,
    slides: Optional[Sequence[str]] = None,
) -> dict:
    """Detection mAP (pooled and per-slide mean, both labeled), Table-1 style
    per-genus report, confusion matrix and macro F1. Refuses leaked splits."""
    catalog = catalog or GenusCatalog()
    index = DatasetIndex.load(cfg.dataset_root)
    slide_ids = sorted(index.slides)
    if slides is not None:
        slide_ids = [s for s in slide_ids if s in set(slides)]
    if split_file is not None:
        assignment = SplitAssignment.load(split_file)  # load() re-checks disjointness
        by_slide = assignment.slide_partition(index)
        slide_ids = [s for s in slide_ids if by_slide.get(s) == partition]

    mcfg = cfg.match_config()
    pooled_preds: List[Tuple[BBox, float]] = []
    pooled_gts: List[BBox] = []
    per_slide_ap: List[float] = []
    all_results: List = []
    results_by_genus: Dict[str, List] = {}
    cm = ConfusionMatrix.empty(catalog.genera)
    x_base = 0.0  # pooled AP places each slide in its own coordinate island

    for slide_id in slide_ids:
        container_meta = index.slides[slide_id]
        det_path = cfg.out_dir / "detections" / f"{slide_id}.txt"
        if not det_path.exists():
            raise FileNotFoundError(f"no detections for slide {slide_id}; run detect first")
        detections = read_detection_file(det_path, slide_id, container_meta.long_side_px)
        gt = index.accepted_annotations(slide_id)
        gt_boxes = [a.bbox for a in gt]
        preds = [(d.bbox, d.confidence) for d in detections]
        per_slide_ap.append(average_precision_11pt(preds, gt_boxes, mcfg.iou_threshold))
        pooled_preds.extend((b.translate(x_base, 0), c) for b, c in preds)
        pooled_gts.extend(g.translate(x_base, 0) for g in gt_boxes)
        x_base += container_meta.width_px + 10_000

        result = match(preds, gt_boxes, mcfg)
        all_results.append(result)
        slide_genus = container_meta.genus
        if slide_genus is not None:
            # Table-1 style rows need mono-fraction slides (slide genus known)
            results_by_genus.setdefault(slide_genus, []).append(result)

        cls_path = cfg.out_dir / "classifications" / f"{slide_id}.txt"
        if cls_path.exists() and gt:
            rows = read_classification_file(cls_path, catalog, slide_id)
            kept = filter_by_confidence(detections, mcfg.confidence_threshold)
            ids = [f"{slide_id}-d{i:04d}" for i in range(len(kept))]
            for pred_idx, gt_idx in result.tp:
                ann_id = ids[pred_idx] if pred_idx < len(ids) else None
                if ann_id is None or ann_id not in rows:
                    continue
                true_genus = gt[gt_idx].genus or slide_genus
                if true_genus is None:
                    continue
                cm.add(true_genus, argmax_class(catalog, rows[ann_id]))

    # restrict the matrix to genera that occur in this evaluation, so a
    # dataset covering a catalog subset is not penalized for absent classes
    present = [
        i for i in range(len(cm.labels))
        if cm.counts[i].sum() or cm.counts[:, i].sum()
    ]
    if present:
        cm = ConfusionMatrix(
            tuple(cm.labels[i] for i in present),
            cm.counts[np.ix_(present, present)],
        )

    report = {
        "partition": partition if split_file else "all",
        "slides": slide_ids,
        "ap_pooled_11pt": average_precision_11pt(pooled_preds, pooled_gts, mcfg.iou_threshold),
        "ap_mean_per_slide_11pt": float(np.mean(per_slide_ap)) if per_slide_ap else 0.0,
        "macro_f1": macro_f1(cm),
        "confusion_total": int(cm.counts.sum()),
    }
    rows = per_genus_detection_report(results_by_genus)
    report["per_genus"] = [
        {"genus": r.genus, "precision": r.precision, "recall": r.recall, "f2": r.f2}
        for r in rows
    ]
    tp = sum(len(r.tp) for r in all_results)
    fp = sum(len(r.fp) for r in all_results)
    fn = sum(len(r.fn) for r in all_results)
    report["precision"] = tp / (tp + fp) if tp + fp else 0.0
    report["recall"] = tp / (tp + fn) if tp + fn else 0.0

    rep_dir = cfg.out_dir / "reports"
    rep_dir.mkdir(parents=True, exist_ok=True)
    cm.save(rep_dir / "confusion_matrix.txt")
    save_detection_report(rows, rep_dir / "per_genus_detection.json")
    (rep_dir / "per_genus_detection.txt").write_text(detection_report_text(rows) + "\n", encoding="utf-8")
    if merge_mapping:
        merged = merge_classes(cm, merge_mapping)
        merged.save(rep_dir / "confusion_matrix_merged.txt")
        report["macro_f1_merged"] = macro_f1(merged)
        report["merged_classes"] = list(merged.labels)
    with open(rep_dir / "evaluation.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    write_manifest(cfg, "evaluate", {"partition": report["partition"]})
    return report


# ---------------------------------------------------------------------------
# iterative annotation loop
# ---------------------------------------------------------------------------


def run_loop(
    cfg: RunConfig,
    decisions_file=None,
    accept_all: bool = False,
    slides: Optional[Sequence[str]] = None,
    catalog: Optional[GenusCatalog] = None,
) -> dict:
    """One database-building iteration: predict, publish for review, merge the
    reviewer's decisions, re-fit the baseline classifier, log the deltas."""
    catalog = catalog or GenusCatalog()
    index = DatasetIndex.load(cfg.dataset_root)
    slide_ids = _slide_ids(cfg, slides)
    before = {g: v for g, _, v in dataset_stats(index)}

    pending = [
        a for sid in slide_ids for a in index.slide_annotations(sid)
        if a.source == Source.PREDICTED and a.review == Review.PENDING
    ]
    published: List[Annotation] = []
    if not pending:
        from .metrics import iou as box_iou

        for slide_id in slide_ids:
            container = _open_container(cfg, slide_id)
            detections = filter_by_confidence(detect_slide(cfg, container), cfg.confidence_threshold)
            # assisted annotation adds what's missing: predictions duplicating
            # an already-accepted box would only clutter the review queue
            accepted_boxes = [a.bbox for a in index.accepted_annotations(slide_id)]
            detections = [
                d for d in detections
                if all(box_iou(d.bbox, b) <= cfg.iou_threshold for b in accepted_boxes)
            ]
            existing = len(index.slide_annotations(slide_id))
            for i, det in enumerate(detections):
                published.append(
                    Annotation(
                        annotation_id=f"{slide_id}-p{existing + i:05d}",
                        slide_id=slide_id,
                        bbox=det.bbox.round(),
                        confidence=det.confidence,
                        source=Source.PREDICTED,
                        review=Review.PENDING,
                    )
                )
        pending = published

    decisions: Dict[str, ReviewDecision] = {}
    if accept_all:
        decisions = {a.annotation_id: ReviewDecision("accept") for a in pending}
    elif decisions_file is not None:
        with open(decisions_file, encoding="utf-8") as fh:
            doc = json.load(fh)
        for entry in doc["decisions"] if isinstance(doc, dict) else doc:
            bbox = BBox(*entry["bbox"]) if "bbox" in entry else None
            decisions[entry["annotation_id"]] = ReviewDecision(
                entry["action"], bbox=bbox, genus=entry.get("genus")
            )

    if not pending and not decisions:
        return {"status": "no-op", "reason": "no pending predictions"}

    merge_review(index, published, decisions)
    index.root = cfg.dataset_root
    index.save_annotations()

    clf_path = cfg.out_dir / "classifier.json"
    trainable = [
        sid for sid in slide_ids
        if any(
            (a.genus or index.slides[sid].genus) is not None
            for a in index.accepted_annotations(sid)
        )
    ]
    refit = False
    if trainable:
        fit_classifier(cfg, trainable, clf_path, catalog)
        refit = True

    after = {g: v for g, _, v in dataset_stats(index)}
    summary = {
        "status": "ok",
        "published": len(published),
        "decided": len(decisions),
        "vessel_counts_before": before,
        "vessel_counts_after": after,
        "classifier_refit": refit,
        "classifier_file": str(clf_path) if refit else None,
    }
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    with open(cfg.out_dir / "loop_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    write_manifest(cfg, "loop", {"published": len(published)})
    return summary


# ---------------------------------------------------------------------------
# argparse front end
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True, help="dataset root directory")
    p.add_argument("--out", default=None, help="output directory (default: <dataset>/runs)")
    p.add_argument("--config", default=None, help="pipeline config file (JSON)")
    p.add_argument("--seed", type=int, default=None, help="run seed")


def _cfg_from_args(args, **overrides) -> RunConfig:
    out = args.out or (Path(args.dataset) / "runs")
    return load_run_config(args.dataset, out, args.config, args.seed, **overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vesselid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest plane rasters into a tiled slide container")
    _add_common(p)
    p.add_argument("--meta", required=True, help="SlideMeta JSON file")
    p.add_argument("--planes", required=True, nargs="+", help="plane raster images, plane order")

    p = sub.add_parser("synth", help="generate a synthetic slide with ground truth")
    _add_common(p)
    p.add_argument("--synth-config", required=True, help="SynthSpec + profiles JSON")
    p.add_argument("--slide-id", default="synth-0001")
    p.add_argument("--maceration-id", default="synthmac-0001")

    p = sub.add_parser("split", help="leakage-safe stratified maceration split")
    _add_common(p)
    p.add_argument("--ratios", default="0.6,0.2,0.2")
    p.add_argument("--split-file", default=None, help="output path (default <dataset>/splits/default.json)")

    p = sub.add_parser("augment", help="write mosaic-augmented samples from accepted annotations")
    _add_common(p)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--augment-config", default=None)

    p = sub.add_parser("detect", help="detect vessel elements on every slide")
    _add_common(p)
    p.add_argument("--slides", default=None, help="comma-separated slide ids (default: all)")

    p = sub.add_parser("classify", help="classify detected vessel elements")
    _add_common(p)
    p.add_argument("--slides", default=None)
    p.add_argument("--classifier-file", default=None)

    p = sub.add_parser("fit-classifier", help="fit the baseline classifier on accepted annotations")
    _add_common(p)
    p.add_argument("--split-file", default=None)
    p.add_argument("--partition", default="train")
    p.add_argument("--classifier-file", default=None, help="output path (default <out>/classifier.json)")

    p = sub.add_parser("evaluate", help="detection + classification metrics")
    _add_common(p)
    p.add_argument("--slides", default=None)
    p.add_argument("--split-file", default=None)
    p.add_argument("--partition", default="test")
    p.add_argument("--merge", default=None, help="e.g. 'Liquidambar,Schima,Fagus=LSF;Populus,Salix=PS'")

    p = sub.add_parser("report", help="dataset statistics by genus")
    _add_common(p)

    p = sub.add_parser("loop", help="one predict/review/merge/refit iteration")
    _add_common(p)
    p.add_argument("--slides", default=None)
    p.add_argument("--decisions", default=None, help="decisions JSON file")
    p.add_argument("--accept-all", action="store_true")

    p = sub.add_parser("serve", help="run the annotation review service")
    _add_common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)

    return parser


def _parse_merge(spec: Optional[str]) -> Optional[Dict[str, str]]:
    if not spec:
        return None
    mapping: Dict[str, str] = {}
    for group in spec.split(";"):
        members, _, merged = group.partition("=")
        for genus in members.split(","):
            mapping[genus.strip()] = merged.strip() or genus.strip()
    for genus in GenusCatalog().genera:
        mapping.setdefault(genus, genus)
    return mapping


def run_command(args) -> int:
    if args.command == "ingest":
        cfg = _cfg_from_args(args)
        with open(args.meta, encoding="utf-8") as fh:
            doc = json.load(fh)
        meta = SlideMeta(
            slide_id=doc["slide_id"],
            maceration_id=doc["maceration_id"],
            genus=doc.get("genus"),
            pixel_scale_um=doc.get("pixel_scale_um", 0.69),
            plane_step_um=doc.get("plane_step_um", 16.33),
            plane_count=doc.get("plane_count", len(args.planes)),
            width_px=doc["width_px"],
            height_px=doc["height_px"],
        )
        planes = (np.asarray(Image.open(p)) for p in args.planes)
        ingest_slide(planes, meta, cfg.dataset_root / "slides")
        write_manifest(cfg, "ingest", {"slide_id": meta.slide_id})
        print(f"ingested {meta.slide_id}")
        return 0

    if args.command == "synth":
        cfg = _cfg_from_args(args)
        spec, profiles = load_synth_config(args.synth_config)
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        container, anns = synth_generate(
            spec, profiles, cfg.dataset_root / "slides", args.slide_id, args.maceration_id
        )
        index = DatasetIndex(cfg.dataset_root)
        index.add_slide(container.meta)
        index.add_annotations(anns)
        index.save_annotations(args.slide_id)
        write_manifest(cfg, "synth", {"slide_id": args.slide_id, "annotations": len(anns)})
        print(f"generated {args.slide_id} with {len(anns)} ground-truth boxes")
        return 0

    if args.command == "split":
        cfg = _cfg_from_args(args)
        ratios = tuple(float(v) for v in args.ratios.split(","))
        if len(ratios) != 3:
            raise SplitError(f"expected three ratios, got {args.ratios!r}")
        index = DatasetIndex.load(cfg.dataset_root)
        assignment = split_index(index, ratios, cfg.seed)
        out = Path(args.split_file) if args.split_file else cfg.dataset_root / "splits" / "default.json"
        assignment.save(out)
        write_manifest(cfg, "split", {"split_file": str(out)})
        print(f"wrote {out}")
        return 0

    if args.command == "augment":
        cfg = _cfg_from_args(args)
        n = run_augment(cfg, args.count, args.augment_config)
        write_manifest(cfg, "augment", {"samples": n})
        print(f"wrote {n} augmented samples to {cfg.out_dir / 'augmented'}")
        return 0

    if args.command == "detect":
        cfg = _cfg_from_args(args)
        slides = args.slides.split(",") if args.slides else None
        written = cmd_detect(cfg, slides)
        print(f"detections for {len(written)} slides in {cfg.out_dir / 'detections'}")
        return 0

    if args.command == "classify":
        cfg = _cfg_from_args(args, classifier_file=args.classifier_file)
        slides = args.slides.split(",") if args.slides else None
        written = cmd_classify(cfg, slides)
        print(f"classifications for {len(written)} slides in {cfg.out_dir / 'classifications'}")
        return 0

    if args.command == "fit-classifier":
        cfg = _cfg_from_args(args)
        index = DatasetIndex.load(cfg.dataset_root)
        slide_ids = sorted(index.slides)
        if args.split_file:
            assignment = SplitAssignment.load(args.split_file)
            by_slide = assignment.slide_partition(index)
            slide_ids = [s for s in slide_ids if by_slide.get(s) == args.partition]
        out_file = args.classifier_file or (cfg.out_dir / "classifier.json")
        fit_classifier(cfg, slide_ids, out_file)
        write_manifest(cfg, "fit-classifier", {"classifier_file": str(out_file)})
        print(f"fitted classifier on {len(slide_ids)} slides -> {out_file}")
        return 0

    if args.command == "evaluate":
        cfg = _cfg_from_args(args)
        slides = args.slides.split(",") if args.slides else None
        report = evaluate(cfg, args.split_file, args.partition, _parse_merge(args.merge), slides=slides)
        print(json.dumps({k: report[k] for k in ("ap_pooled_11pt", "ap_mean_per_slide_11pt", "macro_f1")}))
        return 0

    if args.command == "report":
        cfg = _cfg_from_args(args)
        index = DatasetIndex.load(cfg.dataset_root)
        rows = dataset_stats(index)
        print(f"{'Genus':<14}{'Images':>8}{'Vessels':>9}")
        for genus, images, vessels in rows:
            print(f"{genus:<14}{images:>8}{vessels:>9}")
        write_manifest(cfg, "report", {"genera": len(rows)})
        return 0

    if args.command == "loop":
        cfg = _cfg_from_args(args)
        slides = args.slides.split(",") if args.slides else None
        summary = run_loop(cfg, args.decisions, args.accept_all, slides)
        print(json.dumps(summary if summary["status"] == "no-op" else {
            "status": summary["status"],
            "published": summary["published"],
            "decided": summary["decided"],
        }))
        return 0

    if args.command == "serve":
        cfg = _cfg_from_args(args)
        import uvicorn

        from .service import create_app

        app = create_app(cfg.dataset_root)
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
        return 0

    raise ValueError(f"unknown command {args.command!r}")


def run_augment(cfg: RunConfig, count: int, augment_config=None) -> int:
    """Write mosaic samples built from accepted annotations (detection-side
    augmentation surface)."""
    from .augment import MosaicConfig, PhotometricConfig, load_augment_config, mosaic, photometric

    if augment_config:
        cfgs = load_augment_config(augment_config)
        mosaic_cfg, photo_cfg = cfgs["mosaic"], cfgs["detection"]
    else:
        mosaic_cfg, photo_cfg = MosaicConfig(), PhotometricConfig()
    index = DatasetIndex.load(cfg.dataset_root)
    usable = [s for s in sorted(index.slides) if index.accepted_annotations(s)]
    if len(usable) == 0:
        raise ValueError("no slides with accepted annotations to augment")
    rng = np.random.default_rng(cfg.seed)
    out_dir = cfg.out_dir / "augmented"
    out_dir.mkdir(parents=True, exist_ok=True)
    working = cfg.detection_long_side
    for k in range(count):
        samples = []
        for _ in range(4):
            slide_id = usable[int(rng.integers(0, len(usable)))]
            container = _open_container(cfg, slide_id)
            meta = container.meta
            long_side = min(working, meta.long_side_px)
            view = container.downscaled_view(meta.plane_count // 2, long_side)
            factor = long_side / meta.long_side_px
            boxes = [a.bbox.scale(factor) for a in index.accepted_annotations(slide_id)]
            samples.append((view, boxes))
        canvas, boxes = mosaic(samples, MosaicConfig(mosaic_cfg.canvas, mosaic_cfg.center_jitter, seed=cfg.seed + k))
        canvas = photometric(canvas, photo_cfg, seed=cfg.seed + k)
        Image.fromarray(canvas).save(out_dir / f"mosaic_{k:03d}.png")
        with open(out_dir / f"mosaic_{k:03d}.txt", "w", encoding="utf-8") as fh:
            for b in boxes:
                fh.write(f"{b.x_min:.1f} {b.y_min:.1f} {b.x_max:.1f} {b.y_max:.1f}\n")
    return count


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run_command(args)
    except Exception as exc:  # noqa: BLE001 - single CLI error surface
        line = json.dumps({"error": type(exc).__name__, "message": str(exc)})
        print(f"error: {line}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
