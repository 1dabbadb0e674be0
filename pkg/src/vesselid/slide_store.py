"""Tiled, pyramidal, multi-plane storage for gigapixel slides.

Layout on disk:
    <slide_id>/meta.json
    <slide_id>/p<plane>/l<level>/t<x>_<y>.png

Tiles are lossless 8-bit PNG. Level L holds the 2^L-downscale of level 0;
pixel (x, y) at level L is the rounded mean of the level-0 block
[x*2^L, (x+1)*2^L) x [y*2^L, (y+1)*2^L), clipped at the image border. The
mean is computed from exact integer block sums, so every level carries a
single rounding step (never accumulated ones).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Tuple

import numpy as np
from PIL import Image

from .core import BBox, SlideMeta

DEFAULT_TILE_SIZE = 512
MIN_MAX_FACTOR = 64  # pyramid always reaches at least this downscale
# block sums are uint32; 255 * 4^12 is the largest level-12 block sum that fits
_MAX_SUM_LEVEL = 12

PNG_COMPRESS_LEVEL = 1  # lossless either way; low level keeps ingest fast


class TileBudgetError(ValueError):
    pass


def pyramid_levels(width: int, height: int, tile_size: int = DEFAULT_TILE_SIZE) -> List[int]:
    """Downscale factors 1, 2, 4, ... until the long side fits one tile,
    and always down to at least MIN_MAX_FACTOR."""
    levels = [1]
    long_side = max(width, height)
    while levels[-1] < MIN_MAX_FACTOR or _ceil_div(long_side, levels[-1]) > tile_size:
        levels.append(levels[-1] * 2)
        if levels[-1] > 2**_MAX_SUM_LEVEL:
            raise ValueError(f"slide of long side {long_side} exceeds the supported pyramid depth")
    return levels


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def level_dims(width: int, height: int, factor: int) -> Tuple[int, int]:
    return max(1, _ceil_div(width, factor)), max(1, _ceil_div(height, factor))


def _block_sums(prev: np.ndarray) -> np.ndarray:
    """Exact 2x2 block sums of `prev` (odd edges padded with zeros)."""
    h, w = prev.shape[:2]
    ph, pw = h + (h & 1), w + (w & 1)
    if (ph, pw) != (h, w):
        pad = [(0, ph - h), (0, pw - w)] + [(0, 0)] * (prev.ndim - 2)
        prev = np.pad(prev, pad)
    out = prev[0::2, 0::2].astype(np.uint32)
    out += prev[1::2, 0::2]
    out += prev[0::2, 1::2]
    out += prev[1::2, 1::2]
    return out


def _block_counts(dim0: int, factor: int, n: int) -> np.ndarray:
    """Level-0 pixels covered along one axis by each of the n level pixels."""
    starts = np.arange(n, dtype=np.int64) * factor
    return np.minimum(starts + factor, dim0) - starts


def _round_div(numerators: np.ndarray, counts) -> np.ndarray:
    """Round-half-up of numerators / counts on non-negative integers."""
    t = numerators.astype(np.int64)
    t *= 2
    t += counts
    t //= 2 * counts
    return t


def _rounded_mean(sums: np.ndarray, width0: int, height0: int, factor: int) -> np.ndarray:
    """Round-half-up of sums / block size, block size clipped at the border.

    Interior blocks all cover factor^2 pixels, so their division uses a
    scalar; only the (possibly clipped) last row/column gets true counts.
    """
    h, w = sums.shape[:2]
    out = _round_div(sums, factor * factor).astype(np.uint8)
    cx = _block_counts(width0, factor, w)
    cy = _block_counts(height0, factor, h)
    if cx[-1] != factor:
        counts = cy * cx[-1]
        if sums.ndim == 3:
            counts = counts[:, None]
        out[:, -1] = _round_div(sums[:, -1], counts).astype(np.uint8)
    if cy[-1] != factor:
        counts = cx * cy[-1]
        if sums.ndim == 3:
            counts = counts[:, None]
        out[-1, :] = _round_div(sums[-1, :], counts).astype(np.uint8)
    return out


class _BufferCounter:
    """Container-wide count of simultaneously decoded tile buffers."""

    def __init__(self):
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0

    def acquire(self, n: int = 1) -> None:
        with self._lock:
            self.current += n
            self.peak = max(self.peak, self.current)

    def release(self, n: int = 1) -> None:
        with self._lock:
            self.current -= n


@dataclass(frozen=True)
class RegionRequest:
    plane: int
    level: int
    rect: BBox  # in level coordinates


class SlideContainer:
    """Read handle over one ingested slide directory."""

    def __init__(self, root: Path, meta: SlideMeta, levels: List[int], tile_size: int):
        self.root = Path(root)
        self.meta = meta
        self.levels = list(levels)
        self.tile_size = tile_size
        self.buffer_counter = _BufferCounter()

    # -- layout ------------------------------------------------------------

    def tile_path(self, plane: int, level: int, tx: int, ty: int) -> Path:
        return self.root / f"p{plane}" / f"l{level}" / f"t{tx}_{ty}.png"

    def level_dims(self, level: int) -> Tuple[int, int]:
        return level_dims(self.meta.width_px, self.meta.height_px, self.levels[level])

    @property
    def meta_path(self) -> Path:
        return self.root / "meta.json"

    @classmethod
    def open(cls, root) -> "SlideContainer":
        root = Path(root)
        with open(root / "meta.json", encoding="utf-8") as fh:
            doc = json.load(fh)
        meta = SlideMeta(
            slide_id=doc["slide_id"],
            maceration_id=doc["maceration_id"],
            genus=doc.get("genus"),
            pixel_scale_um=doc["pixel_scale_um"],
            plane_step_um=doc["plane_step_um"],
            plane_count=doc["plane_count"],
            width_px=doc["width_px"],
            height_px=doc["height_px"],
        )
        return cls(root, meta, doc["levels"], doc["tile_size"])

    def _write_meta(self) -> None:
        doc = {
            "slide_id": self.meta.slide_id,
            "maceration_id": self.meta.maceration_id,
            "genus": self.meta.genus,
            "pixel_scale_um": self.meta.pixel_scale_um,
            "plane_step_um": self.meta.plane_step_um,
            "plane_count": self.meta.plane_count,
            "width_px": self.meta.width_px,
            "height_px": self.meta.height_px,
            "tile_size": self.tile_size,
            "levels": self.levels,
        }
        self.meta_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.meta_path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    # -- reads ---------------------------------------------------------------

    def _load_tile(self, plane: int, level: int, tx: int, ty: int) -> np.ndarray:
        path = self.tile_path(plane, level, tx, ty)
        if not path.exists():
            raise FileNotFoundError(f"missing tile {path}")
        with Image.open(path) as im:
            return np.asarray(im)

    def read_region(self, req: RegionRequest, budget: int = 64) -> np.ndarray:
        """Crop of the stored level, assembled tile by tile.

        At most `budget` decoded tile buffers are held at once; the
        container-wide counter records the true peak for verification.
        """
        if budget < 4:
            raise TileBudgetError(f"budget must be >= 4 tiles, got {budget}")
        if not (0 <= req.plane < self.meta.plane_count):
            raise IndexError(f"plane {req.plane} out of range 0..{self.meta.plane_count - 1}")
        if not (0 <= req.level < len(self.levels)):
            raise IndexError(f"level {req.level} out of range 0..{len(self.levels) - 1}")
        lw, lh = self.level_dims(req.level)
        rect = req.rect.clip(lw, lh)
        if rect is None:
            raise ValueError(f"region {req.rect} lies outside level {req.level} bounds {lw}x{lh}")
        x0, y0 = int(np.floor(rect.x_min)), int(np.floor(rect.y_min))
        x1, y1 = int(np.ceil(rect.x_max)), int(np.ceil(rect.y_max))

        ts = self.tile_size
        out: Optional[np.ndarray] = None
        cache: "dict[Tuple[int, int], np.ndarray]" = {}  # insertion-ordered LRU
        try:
            for ty in range(y0 // ts, (y1 - 1) // ts + 1):
                for tx in range(x0 // ts, (x1 - 1) // ts + 1):
                    key = (tx, ty)
                    if key in cache:
                        tile = cache.pop(key)
                        cache[key] = tile
                    else:
                        if len(cache) >= budget:
                            cache.pop(next(iter(cache)))
                            self.buffer_counter.release()
                        tile = self._load_tile(req.plane, req.level, tx, ty)
                        self.buffer_counter.acquire()
                        cache[key] = tile
                    if out is None:
                        shape = (y1 - y0, x1 - x0) + tile.shape[2:]
                        out = np.empty(shape, dtype=tile.dtype)
                    ox, oy = tx * ts, ty * ts
                    sx0, sy0 = max(x0 - ox, 0), max(y0 - oy, 0)
                    sx1 = min(x1 - ox, tile.shape[1])
                    sy1 = min(y1 - oy, tile.shape[0])
                    out[oy + sy0 - y0 : oy + sy1 - y0, ox + sx0 - x0 : ox + sx1 - x0] = tile[sy0:sy1, sx0:sx1]
        finally:
            self.buffer_counter.release(len(cache))
        return out

    def read_full_level(self, plane: int, level: int, budget: int = 64) -> np.ndarray:
        lw, lh = self.level_dims(level)
        return self.read_region(RegionRequest(plane, level, BBox(0, 0, lw, lh)), budget=budget)

    def choose_level(self, target_long_side: int) -> int:
        """Most-downscaled pyramid level whose long side is still >= target."""
        long0 = self.meta.long_side_px
        if target_long_side > long0:
            raise ValueError(f"target {target_long_side} exceeds level-0 long side {long0}")
        best = 0
        for i, factor in enumerate(self.levels):
            if _ceil_div(long0, factor) >= target_long_side:
                best = i
        return best

    def downscaled_view(self, plane: int, target_long_side: int, budget: int = 64) -> np.ndarray:
        """Read the nearest pyramid level >= target, then area-resample so the
        long side equals target exactly; aspect preserved."""
        level = self.choose_level(target_long_side)
        raster = self.read_full_level(plane, level, budget=budget)
        h, w = raster.shape[:2]
        long_side = max(w, h)
        if long_side == target_long_side:
            return raster
        scale = target_long_side / long_side
        nw = target_long_side if w >= h else max(1, round(w * scale))
        nh = target_long_side if h > w else max(1, round(h * scale))
        im = Image.fromarray(raster).resize((nw, nh), Image.Resampling.BOX)
        return np.asarray(im)


def ingest(
    planes: Iterable[np.ndarray],
    meta: SlideMeta,
    dest_dir,
    tile_size: int = DEFAULT_TILE_SIZE,
) -> SlideContainer:
    """Build a tiled pyramid container at <dest_dir>/<slide_id>.

    `planes` may be a lazy iterator; each plane is processed and written
    before the next is pulled, so peak memory stays near one plane.
    """
    dest_dir = Path(dest_dir)
    levels = pyramid_levels(meta.width_px, meta.height_px, tile_size)
    container = SlideContainer(dest_dir / meta.slide_id, meta, levels, tile_size)
    container._write_meta()

    n_planes = 0
    for plane_idx, raster in enumerate(planes):
        raster = np.asarray(raster)
        if raster.dtype != np.uint8:
            raise ValueError(f"plane {plane_idx}: expected uint8 raster, got {raster.dtype}")
        if raster.ndim not in (2, 3) or (raster.ndim == 3 and raster.shape[2] != 3):
            raise ValueError(f"plane {plane_idx}: expected HxW or HxWx3 raster, got shape {raster.shape}")
        h, w = raster.shape[:2]
        if (w, h) != (meta.width_px, meta.height_px):
            raise ValueError(
                f"plane {plane_idx} is {w}x{h}, meta declares {meta.width_px}x{meta.height_px}"
            )
        _write_level_tiles(container, plane_idx, 0, raster)
        sums = None
        for level in range(1, len(levels)):
            sums = _block_sums(raster if sums is None else sums)
            raster_l = _rounded_mean(sums, meta.width_px, meta.height_px, levels[level])
            _write_level_tiles(container, plane_idx, level, raster_l)
        n_planes += 1
    if n_planes != meta.plane_count:
        raise ValueError(f"got {n_planes} planes, meta declares {meta.plane_count}")
    return container


def _write_level_tiles(container: SlideContainer, plane: int, level: int, raster: np.ndarray) -> None:
    ts = container.tile_size
    h, w = raster.shape[:2]
    level_dir = container.root / f"p{plane}" / f"l{level}"
    level_dir.mkdir(parents=True, exist_ok=True)
    for ty in range(_ceil_div(h, ts)):
        for tx in range(_ceil_div(w, ts)):
            tile = raster[ty * ts : (ty + 1) * ts, tx * ts : (tx + 1) * ts]
            Image.fromarray(tile).save(
                level_dir / f"t{tx}_{ty}.png", compress_level=PNG_COMPRESS_LEVEL
            )
