"""Detection-side tiling/stitching and classification-side crop preparation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .core import Annotation, BBox
from .slide_store import RegionRequest, SlideContainer

# gains beyond this working resolution were found to be minor
DEFAULT_DETECTION_LONG_SIDE = 5184
DEFAULT_CROP_TARGET = 800


def resize_raster(arr: np.ndarray, size: Tuple[int, int], prefer_area: bool = True) -> np.ndarray:
    """Deterministic resize to (width, height): box filter when shrinking,
    bilinear when any axis grows."""
    w, h = size
    if (arr.shape[1], arr.shape[0]) == (w, h):
        return arr
    shrinking = w <= arr.shape[1] and h <= arr.shape[0]
    filt = Image.Resampling.BOX if (prefer_area and shrinking) else Image.Resampling.BILINEAR
    return np.asarray(Image.fromarray(arr).resize((w, h), filt))


@dataclass(frozen=True)
class TileRect:
    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


@dataclass(frozen=True)
class TilingPlan:
    width: int
    height: int
    tile_size: int
    overlap: int
    rects: Tuple[TileRect, ...]

    def interior_edges(self, index: int) -> Tuple[bool, bool, bool, bool]:
        """(left, top, right, bottom): which tile edges cut through the image
        interior rather than lying on the image border."""
        r = self.rects[index]
        return (r.x0 > 0, r.y0 > 0, r.x1 < self.width, r.y1 < self.height)


def plan_tiles(width: int, height: int, tile_size: int, overlap: int) -> TilingPlan:
    """Grid of tiles with the given overlap; edge tiles are clipped to the
    image, so interior neighbors overlap by exactly `overlap`."""
    if not (0 <= overlap < tile_size):
        raise ValueError(f"overlap must satisfy 0 <= overlap < tile_size, got {overlap}/{tile_size}")
    stride = tile_size - overlap

    def axis_count(dim: int) -> int:
        return max(1, math.ceil((dim - overlap) / stride))

    rects = []
    for iy in range(axis_count(height)):
        for ix in range(axis_count(width)):
            x0, y0 = ix * stride, iy * stride
            rects.append(TileRect(x0, y0, min(x0 + tile_size, width), min(y0 + tile_size, height)))
    return TilingPlan(width, height, tile_size, overlap, tuple(rects))


def stitch(
    per_tile: Sequence[Tuple[int, Sequence[Tuple[BBox, float]]]],
    plan: TilingPlan,
    iou_threshold: float = 0.5,
    drop_interior_border: bool = True,
) -> List[Tuple[BBox, float]]:
    """Merge per-tile detections into global coordinates.

    Detections touching an interior tile edge are clipped fragments of an
    object that a neighboring tile sees whole, so they are dropped (an object
    smaller than the overlap is always fully contained in some tile). The
    survivors are de-duplicated by greedy IOU suppression: highest confidence
    kept, overlaps above the threshold suppressed.
    """
    from .metrics import iou as box_iou

    translated: List[Tuple[BBox, float]] = []
    for tile_index, detections in per_tile:
        rect = plan.rects[tile_index]
        left, top, right, bottom = plan.interior_edges(tile_index)
        for box, conf in detections:
            if drop_interior_border and (
                (left and box.x_min <= 0)
                or (top and box.y_min <= 0)
                or (right and box.x_max >= rect.width)
                or (bottom and box.y_max >= rect.height)
            ):
                continue
            translated.append((box.translate(rect.x0, rect.y0), conf))

    order = sorted(range(len(translated)), key=lambda i: -translated[i][1])
    kept: List[Tuple[BBox, float]] = []
    for i in order:
        box, conf = translated[i]
        if any(box_iou(box, k) > iou_threshold for k, _ in kept):
            continue
        kept.append((box, conf))
    return kept


def extract_crop(
    container: SlideContainer,
    bbox: BBox,
    plane: int,
    margin_frac: float = 0.0,
    budget: int = 64,
) -> np.ndarray:
    """Level-0 crop of bbox expanded by margin_frac per side, clipped to the
    slide; no padding is added here."""
    w, h = container.meta.width_px, container.meta.height_px
    if bbox.clip(w, h) is None:
        raise ValueError(f"bbox {bbox} lies outside slide {container.meta.slide_id}")
    dx, dy = bbox.width * margin_frac, bbox.height * margin_frac
    expanded = BBox(bbox.x_min - dx, bbox.y_min - dy, bbox.x_max + dx, bbox.y_max + dy)
    return container.read_region(RegionRequest(plane, 0, expanded.clip(w, h)), budget=budget)


@dataclass(frozen=True)
class NormalizeConfig:
    target: int = DEFAULT_CROP_TARGET
    mode: str = "pad"  # or "distort-resize"
    grayscale: bool = True

    def __post_init__(self):
        if self.target <= 0:
            raise ValueError("target must be positive")
        if self.mode not in ("pad", "distort-resize"):
            raise ValueError(f"unknown normalize mode {self.mode!r}")


def normalize_crop(crop: np.ndarray, cfg: NormalizeConfig = NormalizeConfig()) -> np.ndarray:
    """Square SxS raster.

    pad mode: crops larger than S are shrunk by r = S/max(W, H) on both sides
    (aspect preserved, long side lands exactly on S), then zero-padded to
    SxS centered, odd remainders going right/bottom. Crops already within
    SxS are only padded, interior bit-exact.
    """
    s = cfg.target
    h, w = crop.shape[:2]
    if cfg.mode == "distort-resize":
        return resize_raster(crop, (s, s), prefer_area=True)
    if max(w, h) > s:
        r = s / max(w, h)
        nw = s if w >= h else max(1, round(w * r))
        nh = s if h > w else max(1, round(h * r))
        crop = resize_raster(crop, (nw, nh))
        h, w = crop.shape[:2]
    out_shape = (s, s) + crop.shape[2:]
    out = np.zeros(out_shape, dtype=crop.dtype)
    ox, oy = (s - w) // 2, (s - h) // 2
    out[oy : oy + h, ox : ox + w] = crop
    return out


def grayscale(rgb: np.ndarray) -> np.ndarray:
    """Rec. 601 luma, round-half-up, computed in exact integer arithmetic."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected HxWx3 input, got shape {rgb.shape}")
    r = rgb[:, :, 0].astype(np.uint32)
    g = rgb[:, :, 1].astype(np.uint32)
    b = rgb[:, :, 2].astype(np.uint32)
    return ((299 * r + 587 * g + 114 * b + 500) // 1000).astype(np.uint8)


def cache_normalized_crops(
    container: SlideContainer,
    annotations: Sequence[Annotation],
    cfg: NormalizeConfig,
    dest_dir,
    margin_frac: float = 0.0,
) -> Path:
    """Write normalized crops as lossless PNGs named
    <slide>_<annotation>_p<plane>.png, plus a manifest recording the
    provenance bbox of every file. Returns the manifest path."""
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    slide_id = container.meta.slide_id
    entries = []
    for a in annotations:
        for plane in range(container.meta.plane_count):
            crop = extract_crop(container, a.bbox, plane, margin_frac)
            out = normalize_crop(crop, cfg)
            if cfg.grayscale and out.ndim == 3:
                out = grayscale(out)
            name = f"{slide_id}_{a.annotation_id}_p{plane}.png"
            Image.fromarray(out).save(dest / name, compress_level=1)
            entries.append(
                {
                    "file": name,
                    "annotation_id": a.annotation_id,
                    "plane": plane,
                    "bbox": [a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max],
                    "genus": a.genus,
                }
            )
    manifest = dest / f"{slide_id}_crops.json"
    with open(manifest, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "slide_id": slide_id,
                "target": cfg.target,
                "mode": cfg.mode,
                "grayscale": cfg.grayscale,
                "margin_frac": margin_frac,
                "crops": entries,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    return manifest


def assemble_planes(crops: Sequence[np.ndarray], mode: str) -> List[np.ndarray]:
    """Arrange per-plane crops into model inputs.

    mode: "single:<k>" (one 1-channel input from plane k), "stack3:<i>,<j>,<k>"
    (one 3-channel input, channels in the listed order), or "per_plane"
    (one 1-channel input per plane). Plane numbers are 1-based, matching the
    microscope's plane labels.
    """
    def take(k: int) -> np.ndarray:
        if not (1 <= k <= len(crops)):
            raise IndexError(f"plane {k} missing; crop stack has {len(crops)} planes")
        return crops[k - 1]

    if mode == "per_plane":
        return list(crops)
    kind, _, arg = mode.partition(":")
    if kind == "single":
        return [take(int(arg))]
    if kind == "stack3":
        ks = [int(v) for v in arg.split(",")]
        if len(ks) != 3:
            raise ValueError(f"stack3 needs exactly three plane numbers, got {mode!r}")
        return [np.stack([take(k) for k in ks], axis=-1)]
    raise ValueError(f"unknown plane mode {mode!r}")
