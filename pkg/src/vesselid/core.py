"""Shared domain types: genus catalog, slide metadata, boxes, annotations."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Tuple

# The nine hardwood genera covered by the reference database, in catalog
# order. Order is significant: it defines the class-index mapping used by
# every probability vector, confusion matrix and external prediction file.
DEFAULT_GENERA: Tuple[str, ...] = (
    "Acacia",
    "Betula",
    "Eucalyptus",
    "Fagus",
    "Hevea",
    "Liquidambar",
    "Populus",
    "Salix",
    "Schima",
)


class UnknownGenusError(KeyError):
    """Raised when a genus name is not part of the catalog."""


@dataclass(frozen=True)
class GenusCatalog:
    """Ordered, duplicate-free list of genus names."""

    genera: Tuple[str, ...] = DEFAULT_GENERA

    def __post_init__(self):
        object.__setattr__(self, "genera", tuple(self.genera))
        if not self.genera:
            raise ValueError("catalog must contain at least one genus")
        if any(not g for g in self.genera):
            raise ValueError("genus names must be non-empty")
        if len(set(self.genera)) != len(self.genera):
            raise ValueError("genus names must be unique")

    def __len__(self) -> int:
        return len(self.genera)

    def __iter__(self):
        return iter(self.genera)

    def __contains__(self, name: str) -> bool:
        return name in self.genera

    def index(self, name: str) -> int:
        return class_index(self, name)

    def name(self, index: int) -> str:
        return self.genera[index]

    @classmethod
    def from_file(cls, path) -> "GenusCatalog":
        """Load a catalog file: one genus per line, UTF-8, order significant."""
        with open(path, encoding="utf-8") as fh:
            names = [line.strip() for line in fh if line.strip()]
        return cls(tuple(names))

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.genera) + "\n")


def class_index(catalog: GenusCatalog, name: str) -> int:
    """Stable index of `name` in catalog order."""
    try:
        return catalog.genera.index(name)
    except ValueError:
        raise UnknownGenusError(f"unknown genus {name!r}, not in catalog {list(catalog.genera)}") from None


@dataclass(frozen=True)
class SlideMeta:
    """Metadata of one multi-plane gigapixel slide.

    Coordinates elsewhere in the pipeline are always level-0 pixels of this
    slide; `pixel_scale_um` converts them to micrometers.
    """

    slide_id: str
    maceration_id: str
    width_px: int
    height_px: int
    genus: Optional[str] = None  # mono-fraction slides carry exactly one
    pixel_scale_um: float = 0.69
    plane_step_um: float = 16.33
    plane_count: int = 5

    def __post_init__(self):
        if self.plane_count < 1:
            raise ValueError(f"plane_count must be >= 1, got {self.plane_count}")
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError(f"slide dimensions must be positive, got {self.width_px}x{self.height_px}")
        if self.pixel_scale_um <= 0:
            raise ValueError("pixel_scale_um must be positive")

    @property
    def long_side_px(self) -> int:
        return max(self.width_px, self.height_px)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in level-0 pixel coordinates, half-open [min, max)."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate bbox ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def scale(self, factor: float) -> "BBox":
        return BBox(self.x_min * factor, self.y_min * factor, self.x_max * factor, self.y_max * factor)

    def clip(self, width: float, height: float) -> Optional["BBox"]:
        """Clip to [0, width) x [0, height); None if nothing remains."""
        x0, y0 = max(self.x_min, 0.0), max(self.y_min, 0.0)
        x1, y1 = min(self.x_max, width), min(self.y_max, height)
        if x0 >= x1 or y0 >= y1:
            return None
        return BBox(x0, y0, x1, y1)

    def round(self) -> "BBox":
        return BBox(round(self.x_min), round(self.y_min), round(self.x_max), round(self.y_max))


class Source(str, Enum):
    HUMAN = "human"
    PREDICTED = "predicted"
    CORRECTED = "corrected"


class Review(str, Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    REJECTED = "rejected"


@dataclass(frozen=True)
class Annotation:
    """One vessel-element box with its review state and audit version."""

    annotation_id: str
    slide_id: str
    bbox: BBox
    genus: Optional[str] = None
    confidence: Optional[float] = None
    source: Source = Source.HUMAN
    review: Review = Review.ACCEPTED
    version: int = 1

    def __post_init__(self):
        if self.version < 1:
            raise ValueError("version must be >= 1")
        if self.source in (Source.HUMAN, Source.CORRECTED) and self.review != Review.ACCEPTED:
            raise ValueError(f"{self.source.value} annotations must be review=accepted")
        if (self.confidence is not None) != (self.source == Source.PREDICTED):
            raise ValueError("confidence must be present iff source=predicted")
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def evolve(self, **changes) -> "Annotation":
        return replace(self, **changes)


@dataclass(frozen=True)
class ProbabilityVector:
    """Per-genus class scores for one crop/plane, catalog order."""

    scores: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if not self.scores:
            raise ValueError("probability vector must not be empty")
        for s in self.scores:
            if s != s or s in (float("inf"), float("-inf")):
                raise ValueError("scores must be finite")
            if not (0.0 <= s <= 1.0):
                raise ValueError(f"score {s} outside [0, 1]")

    def __len__(self) -> int:
        return len(self.scores)

    def __iter__(self):
        return iter(self.scores)

    def sum(self) -> float:
        return sum(self.scores)


def argmax_class(catalog: GenusCatalog, p: ProbabilityVector) -> str:
    """Genus with the maximal score; ties break toward the lowest catalog index."""
    if len(p) != len(catalog):
        raise ValueError(f"vector length {len(p)} != catalog size {len(catalog)}")
    best = 0
    for i, s in enumerate(p.scores):
        if s > p.scores[best]:
            best = i
    return catalog.genera[best]
