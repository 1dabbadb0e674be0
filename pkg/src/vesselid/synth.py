"""Deterministic synthetic macerate-slide generator.

Provides ground truth for desk-scale verification of the whole pipeline.
Vessel elements are drawn as rotated super-ellipses with a periodic
interior dot pattern standing in for pits; fibers are thin unannotated
distractor strips. This is an oracle, not a biological simulation: only
separability and geometry matter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .core import Annotation, BBox, Review, SlideMeta, Source
from .slide_store import SlideContainer, ingest

BACKGROUND_RGB = (240, 238, 233)  # unstained bright field


@dataclass(frozen=True)
class SynthGenusProfile:
    genus: str
    length_px: Tuple[float, float]  # mean, sd of the box long side
    aspect: Tuple[float, float]  # mean, sd of long/short ratio
    pit_texture_freq: float  # interior dot lattice frequency, dots per pixel
    base_tint: Tuple[int, int, int]

    def __post_init__(self):
        if self.length_px[0] <= 0 or self.aspect[0] <= 0:
            raise ValueError("profile means must be positive")
        if self.length_px[1] < 0 or self.aspect[1] < 0:
            raise ValueError("profile sds must be non-negative")
        if self.pit_texture_freq <= 0:
            raise ValueError("pit_texture_freq must be positive")

    def scaled(self, factor: float) -> "SynthGenusProfile":
        return replace(self, length_px=(self.length_px[0] * factor, self.length_px[1] * factor))


# Hevea's ~1400 px long side is the one size anchored by real measurements;
# the other means are free parameters chosen for pairwise separability.
def default_profiles(scale: float = 1.0) -> Dict[str, SynthGenusProfile]:
    raw = [
        ("Acacia", (420, 35), (2.8, 0.25), 0.030, (150, 120, 180)),
        ("Betula", (700, 55), (3.6, 0.30), 0.060, (120, 140, 170)),
        ("Eucalyptus", (560, 45), (2.2, 0.20), 0.045, (170, 120, 140)),
        ("Fagus", (850, 65), (2.0, 0.18), 0.085, (140, 150, 120)),
        ("Hevea", (1400, 100), (3.0, 0.28), 0.022, (180, 140, 120)),
        ("Liquidambar", (300, 25), (1.6, 0.14), 0.100, (130, 120, 160)),
        ("Populus", (980, 75), (2.5, 0.22), 0.012, (110, 150, 150)),
        ("Salix", (620, 50), (1.3, 0.08), 0.075, (160, 160, 110)),
        ("Schima", (1150, 85), (1.8, 0.16), 0.050, (140, 110, 110)),
    ]
    profiles = {
        name: SynthGenusProfile(name, length, aspect, freq, tint).scaled(scale)
        for name, length, aspect, freq, tint in raw
    }
    pairs = {(p.length_px[0], p.pit_texture_freq) for p in profiles.values()}
    assert len(pairs) == len(profiles), "profiles must have distinct (length, freq) pairs"
    return profiles


@dataclass(frozen=True)
class SynthSpec:
    width: int
    height: int
    planes: int
    genus_mix: Dict[str, float]
    element_count: int
    fiber_count: int = 0
    brightness: float = 1.0
    stain_jitter: float = 0.1
    blur_per_plane: Tuple[float, ...] = ()
    seed: int = 0
    max_pair_iou: float = 0.3  # 1.0 = "clustered" mode, reproduces touching elements

    def __post_init__(self):
        if self.element_count < 0 or self.fiber_count < 0:
            raise ValueError("counts must be >= 0")
        if self.element_count and abs(sum(self.genus_mix.values()) - 1.0) > 1e-9:
            raise ValueError(f"genus_mix fractions sum to {sum(self.genus_mix.values())}, expected 1")
        if not (0.0 <= self.brightness <= 1.0):
            raise ValueError("brightness outside [0, 1]")
        if not (0.0 <= self.stain_jitter <= 1.0):
            raise ValueError("stain_jitter outside [0, 1]")
        blur = tuple(self.blur_per_plane) if self.blur_per_plane else (0.0,) * self.planes
        object.__setattr__(self, "blur_per_plane", blur)
        if len(self.blur_per_plane) != self.planes:
            raise ValueError("blur_per_plane length must equal plane count")
        object.__setattr__(self, "genus_mix", dict(self.genus_mix))


def genus_counts(mix: Dict[str, float], total: int) -> Dict[str, int]:
    """Largest-remainder rounding: counts sum to `total` exactly."""
    if total == 0:
        return {g: 0 for g in mix}
    raw = {g: frac * total for g, frac in mix.items()}
    counts = {g: int(math.floor(v)) for g, v in raw.items()}
    leftover = total - sum(counts.values())
    by_remainder = sorted(mix, key=lambda g: raw[g] - counts[g], reverse=True)
    for g in by_remainder[:leftover]:
        counts[g] += 1
    return counts


def _round_u8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8)


def _blur(base: np.ndarray, radius: float) -> np.ndarray:
    if radius < 0:
        raise ValueError(f"blur radius must be >= 0, got {radius}")
    if radius == 0:
        return base
    sigma = (radius, radius, 0) if base.ndim == 3 else (radius, radius)
    return _round_u8(ndimage.gaussian_filter(base.astype(np.float64), sigma=sigma))


def plane_degrade(base: np.ndarray, blur_radii: Sequence[float]) -> List[np.ndarray]:
    """Focal-plane stack: plane k is the base blurred with radius r_k.

    Radius 0 returns the base bit-exact (the in-focus plane)."""
    return [_blur(base, r) for r in blur_radii]


@dataclass
class _Element:
    genus: str
    bbox: BBox


def _paint_superellipse(canvas, cx, cy, a, b, theta, exponent, tint, pit_pitch, dot_r):
    """Paint one rotated super-ellipse with an interior dot lattice; returns
    the tight bbox of the painted pixels."""
    h, w = canvas.shape[:2]
    r = math.hypot(a, b) + 2
    x0, x1 = max(0, int(cx - r)), min(w, int(cx + r) + 1)
    y0, y1 = max(0, int(cy - r)), min(h, int(cy + r) + 1)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx, dy = xs - cx, ys - cy
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    inside = (np.abs(u / a) ** exponent + np.abs(v / b) ** exponent) <= 1.0
    if not inside.any():
        return None
    # periodic pit dots in element-local coordinates
    pu = np.mod(u, pit_pitch) - pit_pitch / 2
    pv = np.mod(v, pit_pitch) - pit_pitch / 2
    dots = inside & (pu * pu + pv * pv <= dot_r * dot_r)
    # thin dark wall at the rim
    rim = inside & ((np.abs(u / a) ** exponent + np.abs(v / b) ** exponent) >= 0.82)

    patch = canvas[y0:y1, x0:x1]
    patch[inside] = tint
    patch[rim] = _round_u8(np.asarray(tint, dtype=np.float64) * 0.72)
    patch[dots] = _round_u8(np.asarray(tint, dtype=np.float64) * 0.45)

    cols = np.flatnonzero(inside.any(axis=0))
    rows = np.flatnonzero(inside.any(axis=1))
    return BBox(x0 + cols[0], y0 + rows[0], x0 + cols[-1] + 1, y0 + rows[-1] + 1)


def _paint_fiber(canvas, cx, cy, length, width, theta, tint):
    h, w = canvas.shape[:2]
    r = length / 2 + 2
    x0, x1 = max(0, int(cx - r)), min(w, int(cx + r) + 1)
    y0, y1 = max(0, int(cy - r)), min(h, int(cy + r) + 1)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx, dy = xs - cx, ys - cy
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    inside = (np.abs(u) <= length / 2) & (np.abs(v) <= width / 2)
    canvas[y0:y1, x0:x1][inside] = tint
    if not inside.any():
        return None
    cols = np.flatnonzero(inside.any(axis=0))
    rows = np.flatnonzero(inside.any(axis=1))
    return BBox(x0 + cols[0], y0 + rows[0], x0 + cols[-1] + 1, y0 + rows[-1] + 1)


def _pair_iou(a: BBox, b: BBox) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def compose_scene(
    spec: SynthSpec, profiles: Dict[str, SynthGenusProfile], slide_id: str
) -> Tuple[np.ndarray, List[Annotation]]:
    """Paint the level-0 scene; returns (RGB canvas, ground-truth annotations)."""
    missing = [g for g in spec.genus_mix if g not in profiles]
    if missing:
        raise ValueError(f"genus_mix names without a profile: {missing}")
    rng = np.random.default_rng(spec.seed)
    canvas = np.empty((spec.height, spec.width, 3), dtype=np.uint8)
    canvas[:] = BACKGROUND_RGB

    counts = genus_counts(spec.genus_mix, spec.element_count)
    order: List[str] = []
    for g, n in counts.items():
        order.extend([g] * n)
    # interleave genera so clipping/placement failures never skew the mix
    rng.shuffle(order)

    annotations: List[Annotation] = []
    boxes: List[BBox] = []
    for idx, genus in enumerate(order):
        p = profiles[genus]
        placed = None
        for _attempt in range(400):
            length = max(10.0, rng.normal(p.length_px[0], p.length_px[1]))
            aspect = max(1.0, rng.normal(p.aspect[0], p.aspect[1]))
            a, b = length / 2, length / (2 * aspect)
            theta = rng.uniform(0, math.pi)
            exponent = rng.uniform(2.0, 3.2)
            margin = math.hypot(a, b) + 3
            if 2 * margin >= min(spec.width, spec.height):
                continue
            cx = rng.uniform(margin, spec.width - margin)
            cy = rng.uniform(margin, spec.height - margin)
            # conservative candidate box for the overlap cap
            cand = BBox(cx - margin, cy - margin, cx + margin, cy + margin)
            if any(_pair_iou(cand, bb) > spec.max_pair_iou for bb in boxes):
                continue
            placed = (cx, cy, a, b, theta, exponent)
            break
        if placed is None:
            raise ValueError(
                f"could not place element {idx} ({genus}); scene too crowded for max_pair_iou={spec.max_pair_iou}"
            )
        cx, cy, a, b, theta, exponent = placed
        jitter = 1.0 + spec.stain_jitter * rng.uniform(-0.5, 0.5)
        tint = _round_u8(np.asarray(p.base_tint, dtype=np.float64) * jitter)
        pitch = max(3.0, 1.0 / p.pit_texture_freq)
        dot_r = max(1.0, pitch / 5.0)
        bbox = _paint_superellipse(canvas, cx, cy, a, b, theta, exponent, tint, pitch, dot_r)
        boxes.append(bbox)
        annotations.append(
            Annotation(
                annotation_id=f"{slide_id}-gt{idx:04d}",
                slide_id=slide_id,
                bbox=bbox,
                genus=genus,
                source=Source.HUMAN,
                review=Review.ACCEPTED,
            )
        )

    for _f in range(spec.fiber_count):
        for _attempt in range(400):
            length = rng.uniform(40, 140)
            width = rng.uniform(2.0, 4.0)
            theta = rng.uniform(0, math.pi)
            margin = length / 2 + 3
            if 2 * margin >= min(spec.width, spec.height):
                continue
            cx = rng.uniform(margin, spec.width - margin)
            cy = rng.uniform(margin, spec.height - margin)
            cand = BBox(cx - margin, cy - margin, cx + margin, cy + margin)
            # fibers stay clear of annotated elements so ground truth stays tight
            if any(_pair_iou(cand, bb) > 0.0 for bb in boxes):
                continue
            tint = _round_u8(np.asarray((150, 140, 135), dtype=np.float64) * rng.uniform(0.9, 1.1))
            _paint_fiber(canvas, cx, cy, length, width, theta, tint)
            break

    if spec.brightness != 1.0:
        canvas = _round_u8(canvas.astype(np.float64) * spec.brightness)
    return canvas, annotations


def generate(
    spec: SynthSpec,
    profiles: Dict[str, SynthGenusProfile],
    dest_dir,
    slide_id: str = "synth-0001",
    maceration_id: str = "synthmac-0001",
) -> Tuple[SlideContainer, List[Annotation]]:
    """Deterministically render, degrade per focal plane, and ingest one slide.

    Identical (spec, profiles) yield bit-identical containers and ground truth.
    """
    canvas, annotations = compose_scene(spec, profiles, slide_id)
    mix_genera = [g for g, frac in spec.genus_mix.items() if frac > 0]
    meta = SlideMeta(
        slide_id=slide_id,
        maceration_id=maceration_id,
        genus=mix_genera[0] if len(mix_genera) == 1 else None,
        width_px=spec.width,
        height_px=spec.height,
        plane_count=spec.planes,
    )
    planes = (_blur(canvas, r) for r in spec.blur_per_plane)
    container = ingest(planes, meta, dest_dir)
    return container, annotations


def load_synth_config(path) -> Tuple[SynthSpec, Dict[str, SynthGenusProfile]]:
    """Read a declarative config: SynthSpec fields plus optional `profiles`
    (list of profile objects) and `profile_scale` applied to the defaults."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    profiles_doc = doc.pop("profiles", None)
    scale = doc.pop("profile_scale", 1.0)
    if profiles_doc is None:
        profiles = default_profiles(scale)
    else:
        profiles = {
            p["genus"]: SynthGenusProfile(
                genus=p["genus"],
                length_px=tuple(p["length_px"]),
                aspect=tuple(p["aspect"]),
                pit_texture_freq=p["pit_texture_freq"],
                base_tint=tuple(p["base_tint"]),
            )
            for p in profiles_doc
        }
    spec = SynthSpec(
        width=doc["width"],
        height=doc["height"],
        planes=doc["planes"],
        genus_mix=doc["genus_mix"],
        element_count=doc["element_count"],
        fiber_count=doc.get("fiber_count", 0),
        brightness=doc.get("brightness", 1.0),
        stain_jitter=doc.get("stain_jitter", 0.1),
        blur_per_plane=tuple(doc.get("blur_per_plane", ())),
        seed=doc.get("seed", 0),
        max_pair_iou=doc.get("max_pair_iou", 0.3),
    )
    return spec, profiles
