"""Pluggable detector/classifier surfaces.

The classical baselines stand in for trained networks: a threshold +
connected-component detector and a nearest-centroid feature classifier.
Both are deterministic, so pipeline tests have exact expectations. External
predictions from any real model are ingested through per-slide text files
with explicit coordinate-space headers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from skimage import measure
from skimage.filters import threshold_otsu

from .core import BBox, GenusCatalog, ProbabilityVector


class Detection(NamedTuple):
    bbox: BBox
    confidence: float


class ExternalFileError(ValueError):
    pass


# ---------------------------------------------------------------------------
# baseline detector
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DetectorParams:
    threshold: object = "otsu"  # "otsu" or a fixed uint8 threshold on the inverted image
    min_area_px: int = 64
    max_area_px: int = 10_000_000

    def __post_init__(self):
        if self.min_area_px > self.max_area_px:
            raise ValueError("min_area_px must be <= max_area_px")
        if self.threshold != "otsu" and not isinstance(self.threshold, (int, float)):
            raise ValueError(f"threshold must be 'otsu' or a number, got {self.threshold!r}")


def detect_baseline(gray: np.ndarray, params: DetectorParams = DetectorParams()) -> List[Detection]:
    """Dark-object detector: binarize the inverted image, 8-connected
    component labeling, tight per-component boxes, area filter. Confidence is
    the component solidity (area over convex-hull area)."""
    if gray.ndim != 2:
        raise ValueError(f"detector expects a single-channel image, got shape {gray.shape}")
    inverted = 255 - gray.astype(np.int16)
    if params.threshold == "otsu":
        if int(inverted.min()) == int(inverted.max()):
            return []
        thr = threshold_otsu(inverted)
    else:
        thr = float(params.threshold)
    binary = inverted > thr
    labels = measure.label(binary, connectivity=2)
    detections: List[Detection] = []
    for prop in measure.regionprops(labels):
        if not (params.min_area_px <= prop.area <= params.max_area_px):
            continue
        min_row, min_col, max_row, max_col = prop.bbox
        conf = float(min(1.0, max(0.0, prop.solidity)))
        detections.append(Detection(BBox(min_col, min_row, max_col, max_row), conf))
    detections.sort(key=lambda d: (d.bbox.y_min, d.bbox.x_min))
    return detections


def filter_by_confidence(detections: Sequence[Detection], threshold: float) -> List[Detection]:
    return [d for d in detections if d.confidence >= threshold]


# ---------------------------------------------------------------------------
# baseline classifier
# ---------------------------------------------------------------------------

FEATURE_NAMES = ("long_side_px", "aspect_ratio", "mean_intensity", "texture_energy")


def crop_features(crop: np.ndarray) -> np.ndarray:
    """(foreground long side, aspect ratio, mean interior intensity, dot-texture
    energy) of one normalized, zero-padded grayscale crop.

    Foreground = pixels darker than the Otsu threshold of the non-padding
    content; exact zeros are padding, never foreground. Long side and aspect
    come from the second moments of the foreground pixels, so they measure
    the element itself, independent of its rotation."""
    if crop.ndim != 2:
        raise ValueError("crop features need a single-channel crop")
    content = crop[crop > 0]
    if content.size == 0 or int(content.min()) == int(content.max()):
        return np.zeros(4)
    thr = threshold_otsu(content)
    fg = (crop > 0) & (crop <= thr)
    if not fg.any():
        return np.zeros(4)
    ys, xs = np.nonzero(fg)
    cov = np.cov(np.stack([xs, ys]).astype(np.float64)) if len(xs) > 1 else np.zeros((2, 2))
    eigvals = np.sort(np.linalg.eigvalsh(np.atleast_2d(cov)))[::-1]
    eigvals = np.maximum(eigvals, 0.25)  # single-pixel floor
    # for a uniformly filled ellipse the semi-axis is 2 sigma
    major = 4.0 * math.sqrt(eigvals[0])
    minor = 4.0 * math.sqrt(eigvals[1])
    mean_intensity = float(crop[fg].mean())
    interior = ndimage.binary_erosion(fg, iterations=2)
    if interior.any():
        lap = ndimage.laplace(crop.astype(np.float64))
        texture = float(np.sqrt(np.mean(lap[interior] ** 2)))
    else:
        texture = 0.0
    return np.array([major, major / minor, mean_intensity, texture])


class UntrainedClassifierError(RuntimeError):
    pass


class CentroidClassifier:
    """Per-genus centroids over standardized crop features; probabilities are
    a softmax over negative distances to the centroids."""

    def __init__(self, catalog: GenusCatalog):
        self.catalog = catalog
        self.feature_mean: Optional[np.ndarray] = None
        self.feature_scale: Optional[np.ndarray] = None
        self.centroids: Optional[np.ndarray] = None  # (n_genera, n_features)
        self.trained: Optional[np.ndarray] = None  # bool per genus; untrained genera score 0

    @property
    def fitted(self) -> bool:
        return self.centroids is not None

    def fit(self, crops_by_genus: Dict[str, Sequence[np.ndarray]]) -> "CentroidClassifier":
        missing = [g for g in crops_by_genus if g not in self.catalog]
        if missing:
            raise ValueError(f"training genera not in catalog: {missing}")
        feats = {g: np.array([crop_features(c) for c in crops]) for g, crops in crops_by_genus.items()}
        all_feats = np.concatenate(list(feats.values()))
        if len(all_feats) == 0:
            raise ValueError("no training crops")
        self.feature_mean = all_feats.mean(axis=0)
        self.feature_scale = np.maximum(all_feats.std(axis=0), 1e-6)
        centroids = np.zeros((len(self.catalog), all_feats.shape[1]))
        trained = np.zeros(len(self.catalog), dtype=bool)
        for g, f in feats.items():
            idx = self.catalog.index(g)
            centroids[idx] = ((f - self.feature_mean) / self.feature_scale).mean(axis=0)
            trained[idx] = True
        self.centroids = centroids
        self.trained = trained
        return self

    def predict(self, crop: np.ndarray) -> ProbabilityVector:
        return self.predict_features(crop_features(crop))

    def predict_features(self, features: np.ndarray) -> ProbabilityVector:
        if not self.fitted:
            raise UntrainedClassifierError("classifier has no fitted centroids")
        z = (features - self.feature_mean) / self.feature_scale
        dists = np.linalg.norm(self.centroids - z, axis=1)
        logits = np.where(self.trained, -dists, -np.inf)
        logits -= logits.max()
        expd = np.exp(logits)
        probs = expd / expd.sum()
        return ProbabilityVector(tuple(float(p) for p in probs))

    def save(self, path) -> None:
        if not self.fitted:
            raise UntrainedClassifierError("nothing to save")
        doc = {
            "genera": list(self.catalog.genera),
            "feature_names": list(FEATURE_NAMES),
            "feature_mean": self.feature_mean.tolist(),
            "feature_scale": self.feature_scale.tolist(),
            "centroids": self.centroids.tolist(),
            "trained": self.trained.tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CentroidClassifier":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        clf = cls(GenusCatalog(tuple(doc["genera"])))
        clf.feature_mean = np.array(doc["feature_mean"])
        clf.feature_scale = np.array(doc["feature_scale"])
        clf.centroids = np.array(doc["centroids"])
        clf.trained = np.array(doc["trained"], dtype=bool)
        return clf


# ---------------------------------------------------------------------------
# external prediction files
# ---------------------------------------------------------------------------


def write_detection_file(path, slide_id: str, long_side: int, detections: Sequence[Detection]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# slide={slide_id} long_side={long_side}\n")
        for d in detections:
            b = d.bbox
            fh.write(f"{b.x_min:.1f} {b.y_min:.1f} {b.x_max:.1f} {b.y_max:.1f} {d.confidence:.6f}\n")


def read_detection_file(path, slide_id: str, level0_long_side: int) -> List[Detection]:
    """Parse a detection file and rescale its coordinates from the declared
    working resolution to level 0."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        fields = dict(
            part.split("=", 1) for part in header.lstrip("#").split() if "=" in part
        )
        if "slide" not in fields or "long_side" not in fields:
            raise ExternalFileError(f"{path}: header must declare slide= and long_side=")
        if fields["slide"] != slide_id:
            raise ExternalFileError(f"{path}: file is for slide {fields['slide']!r}, expected {slide_id!r}")
        declared = int(fields["long_side"])
        if declared <= 0:
            raise ExternalFileError(f"{path}: bad long_side {declared}")
        factor = level0_long_side / declared
        detections = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            vals = line.split()
            if len(vals) != 5:
                raise ExternalFileError(f"{path}:{lineno}: expected 5 fields, got {len(vals)}")
            x0, y0, x1, y1, conf = (float(v) for v in vals)
            if not (0.0 <= conf <= 1.0):
                raise ExternalFileError(f"{path}:{lineno}: confidence {conf} outside [0, 1]")
            detections.append(Detection(BBox(x0, y0, x1, y1).scale(factor), conf))
    return detections


def write_classification_file(
    path, slide_id: str, catalog: GenusCatalog, rows: Dict[str, ProbabilityVector]
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# slide={slide_id} genera={','.join(catalog.genera)}\n")
        for ann_id in sorted(rows):
            probs = " ".join(f"{p:.6f}" for p in rows[ann_id].scores)
            fh.write(f"{ann_id} {probs}\n")


def read_classification_file(
    path, catalog: GenusCatalog, slide_id: Optional[str] = None
) -> Dict[str, ProbabilityVector]:
    """Parse per-annotation probability rows; columns are remapped to catalog
    order by genus name. Rows whose sum strays from 1 by at most 1e-3 are
    renormalized, anything further off is rejected with its row number."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        fields = dict(
            part.split("=", 1) for part in header.lstrip("#").split() if "=" in part
        )
        if "genera" not in fields:
            raise ExternalFileError(f"{path}: header must declare genera=")
        if slide_id is not None and fields.get("slide") not in (None, slide_id):
            raise ExternalFileError(f"{path}: file is for slide {fields.get('slide')!r}, expected {slide_id!r}")
        file_genera = fields["genera"].split(",")
        unknown = [g for g in file_genera if g not in catalog]
        if unknown:
            raise ExternalFileError(f"{path}: unknown genus columns {unknown}")
        if sorted(file_genera) != sorted(catalog.genera):
            raise ExternalFileError(f"{path}: genus columns {file_genera} do not cover the catalog")
        col_for = [file_genera.index(g) for g in catalog.genera]
        out: Dict[str, ProbabilityVector] = {}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            vals = line.split()
            if len(vals) != 1 + len(catalog):
                raise ExternalFileError(f"{path}:{lineno}: expected {1 + len(catalog)} fields, got {len(vals)}")
            ann_id = vals[0]
            probs = np.array([float(v) for v in vals[1:]])
            total = probs.sum()
            if abs(total - 1.0) > 1e-3:
                raise ExternalFileError(
                    f"{path}:{lineno}: probabilities sum to {total:.6f}, outside the 1e-3 tolerance"
                )
            probs = probs / total
            out[ann_id] = ProbabilityVector(tuple(float(probs[c]) for c in col_for))
    return out


# ---------------------------------------------------------------------------
# fusion and slide report
# ---------------------------------------------------------------------------


def fuse(vectors: Sequence[ProbabilityVector], mode: str = "average") -> ProbabilityVector:
    """Combine per-plane probability vectors.

    average: arithmetic mean per class, still a distribution. maximum:
    element-wise max, deliberately not renormalized; downstream only takes
    the argmax, and renormalizing would be an invisible extra transform."""
    if not vectors:
        raise ValueError("fuse needs at least one vector")
    n = len(vectors[0])
    if any(len(v) != n for v in vectors):
        raise ValueError("fuse needs equal-length vectors")
    columns = list(zip(*(v.scores for v in vectors)))
    if mode == "average":
        return ProbabilityVector(tuple(sum(c) / len(vectors) for c in columns))
    if mode == "maximum":
        return ProbabilityVector(tuple(max(c) for c in columns))
    raise ValueError(f"unknown fusion mode {mode!r}")


@dataclass(frozen=True)
class PresenceRule:
    min_count: int = 3
    min_fraction: float = 0.05


@dataclass(frozen=True)
class PresenceRow:
    genus: str
    count: int
    fraction: float


def slide_report(classified_genera: Sequence[str], rule: PresenceRule = PresenceRule()) -> List[PresenceRow]:
    """Genus-presence summary over one slide's classified detections: a genus
    is reported iff its count and share both clear the rule."""
    counts: Dict[str, int] = {}
    for g in classified_genera:
        counts[g] = counts.get(g, 0) + 1
    total = sum(counts.values())
    rows = [
        PresenceRow(g, c, c / total)
        for g, c in counts.items()
        if c >= rule.min_count and c / total >= rule.min_fraction
    ]
    rows.sort(key=lambda r: (-r.fraction, r.genus))
    return rows


# ---------------------------------------------------------------------------
# scorer bindings
# ---------------------------------------------------------------------------

BINDING_KINDS = ("baseline_detector", "baseline_classifier", "external_file")


@dataclass(frozen=True)
class ScorerBinding:
    kind: str
    params: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BINDING_KINDS:
            raise ValueError(f"unknown scorer kind {self.kind!r}")
        if self.kind == "external_file":
            pattern = self.params.get("path_pattern")
            if not pattern:
                raise ValueError("external_file binding needs a path_pattern param")

    def external_path(self, slide_id: str) -> Path:
        path = Path(str(self.params["path_pattern"]).format(slide_id=slide_id))
        if not path.exists():
            raise FileNotFoundError(f"external prediction file {path} does not exist")
        return path
