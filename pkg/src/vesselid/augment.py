"""Training-data augmentation.

Detection side: 4-image mosaic, HSV color jitter, shift/scale/left-right
flip. Classification side: class-preserving photometric jitter plus vertical
flips. Horizontal flips and Gaussian noise are implemented but disabled in
the checked-in defaults, since enabling them measurably hurt macro F1 on the
reference data; the flags allow re-testing.

Every operation is a pure function of (inputs, seed) and never touches class
labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from skimage import color as skcolor

from .core import BBox
from .preprocess import resize_raster


def _round_u8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# mosaic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MosaicConfig:
    canvas: int = 1280
    center_jitter: int = 0  # max offset of the 4-image junction from center
    seed: int = 0
    drop_area_frac: float = 0.1  # clipped boxes below this share of their mapped area are dropped

    def __post_init__(self):
        if self.canvas <= 0:
            raise ValueError("canvas must be positive")
        if not (0 <= self.center_jitter < self.canvas / 2):
            raise ValueError("center_jitter must satisfy 0 <= jitter < canvas/2")


def mosaic(
    samples: Sequence[Tuple[np.ndarray, Sequence[BBox]]],
    cfg: MosaicConfig,
) -> Tuple[np.ndarray, List[BBox]]:
    """Combine four (image, boxes) samples into one canvas.

    The junction point is the canvas center plus a seeded jitter; each source
    is scaled to fill its quadrant (top-left, top-right, bottom-left,
    bottom-right in input order), boxes follow the same affine map, get
    clipped to the canvas, and are dropped when clipping leaves them with
    less than `drop_area_frac` of their mapped area.
    """
    if len(samples) != 4:
        raise ValueError(f"mosaic needs exactly 4 samples, got {len(samples)}")
    rng = np.random.default_rng(cfg.seed)
    s = cfg.canvas
    jx = s // 2 + int(rng.integers(-cfg.center_jitter, cfg.center_jitter + 1))
    jy = s // 2 + int(rng.integers(-cfg.center_jitter, cfg.center_jitter + 1))

    quadrants = (
        (0, 0, jx, jy),
        (jx, 0, s, jy),
        (0, jy, jx, s),
        (jx, jy, s, s),
    )
    first = np.asarray(samples[0][0])
    out = np.zeros((s, s) + first.shape[2:], dtype=first.dtype)
    out_boxes: List[BBox] = []
    for (image, boxes), (qx0, qy0, qx1, qy1) in zip(samples, quadrants):
        image = np.asarray(image)
        if image.shape[0] < 1 or image.shape[1] < 1:
            raise ValueError("mosaic sources must be at least 1x1")
        qw, qh = qx1 - qx0, qy1 - qy0
        sx, sy = qw / image.shape[1], qh / image.shape[0]
        out[qy0:qy1, qx0:qx1] = resize_raster(image, (qw, qh))
        for box in boxes:
            mapped = BBox(
                box.x_min * sx + qx0,
                box.y_min * sy + qy0,
                box.x_max * sx + qx0,
                box.y_max * sy + qy0,
            )
            clipped = mapped.clip(s, s)
            if clipped is None or clipped.area < cfg.drop_area_frac * mapped.area:
                continue
            out_boxes.append(clipped)
    return out, out_boxes


# ---------------------------------------------------------------------------
# photometric
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhotometricConfig:
    """Sampling ranges; every default is the identity, so an untouched config
    is a bit-exact no-op."""

    hue_delta_deg: Tuple[float, float] = (0.0, 0.0)
    saturation_scale: Tuple[float, float] = (1.0, 1.0)
    value_scale: Tuple[float, float] = (1.0, 1.0)
    brightness_scale: Tuple[float, float] = (1.0, 1.0)
    contrast_scale: Tuple[float, float] = (1.0, 1.0)
    vertical_flip_prob: float = 0.0
    horizontal_flip_prob: float = 0.0  # off by default: two flip kinds hurt macro F1
    gaussian_noise_sd: float = 0.0  # off by default, same reason


def photometric(image: np.ndarray, cfg: PhotometricConfig, seed: int = 0) -> np.ndarray:
    """Seeded color jitter; output dtype, shape and value range match the input."""
    rng = np.random.default_rng(seed)
    hue = float(rng.uniform(*cfg.hue_delta_deg))
    sat = float(rng.uniform(*cfg.saturation_scale))
    val = float(rng.uniform(*cfg.value_scale))
    bright = float(rng.uniform(*cfg.brightness_scale))
    contrast = float(rng.uniform(*cfg.contrast_scale))
    do_vflip = rng.random() < cfg.vertical_flip_prob
    do_hflip = rng.random() < cfg.horizontal_flip_prob

    out = np.asarray(image)
    color_pass = hue != 0.0 or sat != 1.0 or val != 1.0
    if color_pass:
        if out.ndim == 3:
            hsv = skcolor.rgb2hsv(out)
            hsv[..., 0] = np.mod(hsv[..., 0] + hue / 360.0, 1.0)
            hsv[..., 1] = np.clip(hsv[..., 1] * sat, 0.0, 1.0)
            hsv[..., 2] = np.clip(hsv[..., 2] * val, 0.0, 1.0)
            out = _round_u8(skcolor.hsv2rgb(hsv) * 255.0)
        elif val != 1.0:
            out = _round_u8(out.astype(np.float64) * val)
    if bright != 1.0:
        out = _round_u8(out.astype(np.float64) * bright)
    if contrast != 1.0:
        out = _round_u8((out.astype(np.float64) - 128.0) * contrast + 128.0)
    if cfg.gaussian_noise_sd > 0.0:
        out = _round_u8(out.astype(np.float64) + rng.normal(0.0, cfg.gaussian_noise_sd, out.shape))
    if do_vflip:
        out = out[::-1].copy()
    if do_hflip:
        out = out[:, ::-1].copy()
    return out


# ---------------------------------------------------------------------------
# geometric (detection: pixels and boxes move under the same affine map)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GeometricConfig:
    shift_px: Tuple[float, float] = (0.0, 0.0)  # sampled independently per axis
    scale: Tuple[float, float] = (1.0, 1.0)  # about the image center
    flip_lr_prob: float = 0.0
    fill: int = 0

    def __post_init__(self):
        if self.scale[0] <= 0 or self.scale[1] <= 0:
            raise ValueError("scale must be positive")


def geometric(
    image: np.ndarray,
    boxes: Sequence[BBox],
    cfg: GeometricConfig,
    seed: int = 0,
) -> Tuple[np.ndarray, List[BBox]]:
    """Scale about the center, shift, then optionally flip left-right; canvas
    size is unchanged and boxes are clipped to it. A left-right flip maps
    x to width - x."""
    rng = np.random.default_rng(seed)
    s = float(rng.uniform(*cfg.scale))
    dx = float(rng.uniform(*cfg.shift_px))
    dy = float(rng.uniform(*cfg.shift_px))
    flip = rng.random() < cfg.flip_lr_prob

    image = np.asarray(image)
    h, w = image.shape[:2]
    cx, cy = w / 2.0, h / 2.0

    if s == 1.0 and dx == 0.0 and dy == 0.0:
        out = image
    else:
        # inverse nearest-neighbor mapping keeps pixels and boxes consistent
        xs = np.floor((np.arange(w) + 0.5 - cx - dx) / s + cx).astype(np.int64)
        ys = np.floor((np.arange(h) + 0.5 - cy - dy) / s + cy).astype(np.int64)
        valid_x = (xs >= 0) & (xs < w)
        valid_y = (ys >= 0) & (ys < h)
        out = np.full_like(image, cfg.fill)
        grid = image[np.clip(ys, 0, h - 1)[:, None], np.clip(xs, 0, w - 1)[None, :]]
        mask = valid_y[:, None] & valid_x[None, :]
        out[mask] = grid[mask]
    if flip:
        out = out[:, ::-1].copy()

    out_boxes: List[BBox] = []
    for box in boxes:
        mapped = BBox(
            s * (box.x_min - cx) + cx + dx,
            s * (box.y_min - cy) + cy + dy,
            s * (box.x_max - cx) + cx + dx,
            s * (box.y_max - cy) + cy + dy,
        )
        if flip:
            mapped = BBox(w - mapped.x_max, mapped.y_min, w - mapped.x_min, mapped.y_max)
        clipped = mapped.clip(w, h)
        if clipped is not None:
            out_boxes.append(clipped)
    return out, out_boxes


# ---------------------------------------------------------------------------
# config file section
# ---------------------------------------------------------------------------


def load_augment_config(path) -> Dict[str, object]:
    """Parse the augmentation section of a config file into config objects.

    Returns {"mosaic": MosaicConfig, "detection": PhotometricConfig,
    "geometric": GeometricConfig, "classification": PhotometricConfig};
    disabled entries collapse to identity settings.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)

    det = doc.get("detection_augment", {})
    cls = doc.get("classification_augment", {})

    def ranged(section, key, default, value_key="range"):
        entry = section.get(key, {})
        if not entry.get("enabled", False):
            return default
        return tuple(entry[value_key])

    mos = det.get("mosaic", {})
    mosaic_cfg = MosaicConfig(
        canvas=mos.get("canvas", 1280),
        center_jitter=mos.get("center_jitter", 0) if mos.get("enabled", False) else 0,
    )
    detection_cfg = PhotometricConfig(
        hue_delta_deg=ranged(det, "hsv_jitter", (0.0, 0.0), "hue_delta"),
        saturation_scale=ranged(det, "hsv_jitter", (1.0, 1.0), "saturation_scale"),
        value_scale=ranged(det, "hsv_jitter", (1.0, 1.0), "value_scale"),
    )
    geo = det.get("geometric", {})
    geometric_cfg = GeometricConfig(
        shift_px=tuple(geo.get("shift_px", (0.0, 0.0))) if geo.get("enabled", False) else (0.0, 0.0),
        scale=tuple(geo.get("scale", (1.0, 1.0))) if geo.get("enabled", False) else (1.0, 1.0),
        flip_lr_prob=geo.get("flip_lr_prob", 0.0) if geo.get("enabled", False) else 0.0,
    )
    classification_cfg = PhotometricConfig(
        brightness_scale=ranged(cls, "brightness", (1.0, 1.0), "scale"),
        contrast_scale=ranged(cls, "contrast", (1.0, 1.0), "scale"),
        saturation_scale=ranged(cls, "saturation", (1.0, 1.0), "scale"),
        hue_delta_deg=ranged(cls, "hue", (0.0, 0.0), "delta_deg"),
        vertical_flip_prob=cls.get("vertical_flip", {}).get("prob", 0.0)
        if cls.get("vertical_flip", {}).get("enabled", False)
        else 0.0,
        horizontal_flip_prob=cls.get("horizontal_flip", {}).get("prob", 0.0)
        if cls.get("horizontal_flip", {}).get("enabled", False)
        else 0.0,
        gaussian_noise_sd=cls.get("gaussian_noise", {}).get("sd", 0.0)
        if cls.get("gaussian_noise", {}).get("enabled", False)
        else 0.0,
    )
    return {
        "mosaic": mosaic_cfg,
        "detection": detection_cfg,
        "geometric": geometric_cfg,
        "classification": classification_cfg,
    }
