"""Annotation persistence, leakage-safe splitting, review merging, statistics.

The split unit is always the maceration (one preparation batch): slides from
one macerate share preparation artifacts, so letting a maceration straddle
train/val/test would leak preparation features instead of genus features.

Dataset root layout:
    <root>/slides/<slide_id>/...     slide containers (see slide_store)
    <root>/annotations/<slide_id>.txt  one record per line
    <root>/splits/<name>.json        exported SplitAssignment
"""

from __future__ import annotations

import itertools
import json
import math
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import Annotation, BBox, Review, SlideMeta, Source
from .slide_store import SlideContainer

PARTITIONS = ("train", "val", "test")


class SplitError(ValueError):
    pass


class UnknownAnnotationError(KeyError):
    pass


# ---------------------------------------------------------------------------
# annotation record format
# ---------------------------------------------------------------------------


def format_annotation_line(a: Annotation) -> str:
    b = a.bbox.round()
    bbox = f"{int(b.x_min)} {int(b.y_min)} {int(b.x_max)} {int(b.y_max)}"
    genus = a.genus if a.genus is not None else "-"
    conf = f"{a.confidence:.6f}" if a.confidence is not None else "-"
    return f"{a.annotation_id}, {bbox}, {genus}, {conf}, {a.source.value}, {a.review.value}, {a.version}"


def parse_annotation_line(line: str, slide_id: str) -> Annotation:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) != 7:
        raise ValueError(f"malformed annotation record: {line!r}")
    ann_id, bbox_s, genus, conf, source, review, version = parts
    coords = [int(v) for v in bbox_s.split()]
    if len(coords) != 4:
        raise ValueError(f"malformed bbox in record: {line!r}")
    return Annotation(
        annotation_id=ann_id,
        slide_id=slide_id,
        bbox=BBox(*coords),
        genus=None if genus == "-" else genus,
        confidence=None if conf == "-" else float(conf),
        source=Source(source),
        review=Review(review),
        version=int(version),
    )


# ---------------------------------------------------------------------------
# index
# ---------------------------------------------------------------------------


class DatasetIndex:
    """Slides, their annotations, and the maceration grouping.

    Mutations go through a single lock (single-writer commit point); reads of
    the returned lists are snapshots.
    """

    def __init__(self, root: Optional[Path] = None):
        self.root = Path(root) if root is not None else None
        self.slides: Dict[str, SlideMeta] = {}
        self.annotations: Dict[str, Dict[str, Annotation]] = {}
        self._lock = threading.Lock()

    # -- construction --------------------------------------------------------

    def add_slide(self, meta: SlideMeta) -> None:
        with self._lock:
            self.slides[meta.slide_id] = meta
            self.annotations.setdefault(meta.slide_id, {})

    def add_annotations(self, anns: Iterable[Annotation]) -> None:
        with self._lock:
            for a in anns:
                if a.slide_id not in self.slides:
                    raise KeyError(f"annotation {a.annotation_id} references unknown slide {a.slide_id}")
                self.annotations[a.slide_id][a.annotation_id] = a

    @classmethod
    def load(cls, root) -> "DatasetIndex":
        root = Path(root)
        index = cls(root)
        slides_dir = root / "slides"
        if slides_dir.is_dir():
            for meta_path in sorted(slides_dir.glob("*/meta.json")):
                index.add_slide(SlideContainer.open(meta_path.parent).meta)
        ann_dir = root / "annotations"
        if ann_dir.is_dir():
            for path in sorted(ann_dir.glob("*.txt")):
                slide_id = path.stem
                if slide_id not in index.slides:
                    raise KeyError(f"{path} has no matching slide container")
                with open(path, encoding="utf-8") as fh:
                    index.add_annotations(
                        parse_annotation_line(line, slide_id) for line in fh if line.strip()
                    )
        return index

    def save_annotations(self, slide_id: Optional[str] = None) -> None:
        if self.root is None:
            raise ValueError("index has no root directory to save into")
        ann_dir = self.root / "annotations"
        ann_dir.mkdir(parents=True, exist_ok=True)
        targets = [slide_id] if slide_id else sorted(self.annotations)
        for sid in targets:
            lines = [
                format_annotation_line(a)
                for a in sorted(self.annotations[sid].values(), key=lambda a: a.annotation_id)
            ]
            (ann_dir / f"{sid}.txt").write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    # -- views ----------------------------------------------------------------

    def macerations(self) -> Dict[str, List[str]]:
        out: Dict[str, List[str]] = {}
        for meta in self.slides.values():
            out.setdefault(meta.maceration_id, []).append(meta.slide_id)
        return {m: sorted(ids) for m, ids in sorted(out.items())}

    def slide_annotations(self, slide_id: str) -> List[Annotation]:
        return sorted(self.annotations.get(slide_id, {}).values(), key=lambda a: a.annotation_id)

    def accepted_annotations(self, slide_id: str) -> List[Annotation]:
        """What training exports see: accepted records only."""
        return [a for a in self.slide_annotations(slide_id) if a.review == Review.ACCEPTED]

    def get(self, slide_id: str, annotation_id: str) -> Annotation:
        try:
            return self.annotations[slide_id][annotation_id]
        except KeyError:
            raise UnknownAnnotationError(f"unknown annotation {annotation_id} on slide {slide_id}") from None


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitAssignment:
    partition: Dict[str, str]  # maceration_id -> train|val|test
    seed: int
    ratios: Tuple[float, float, float]

    def members(self, name: str) -> List[str]:
        return sorted(m for m, p in self.partition.items() if p == name)

    def slide_partition(self, index: DatasetIndex) -> Dict[str, str]:
        return {
            sid: self.partition[meta.maceration_id]
            for sid, meta in index.slides.items()
            if meta.maceration_id in self.partition
        }

    def save(self, path) -> None:
        doc = {
            "seed": self.seed,
            "ratios": list(self.ratios),
            "partitions": {name: self.members(name) for name in PARTITIONS},
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SplitAssignment":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        partitions = doc["partitions"]
        check_disjoint(partitions)
        mapping = {m: name for name in PARTITIONS for m in partitions.get(name, [])}
        return cls(mapping, doc.get("seed", 0), tuple(doc.get("ratios", (0.0, 0.0, 0.0))))


def check_disjoint(partitions: Dict[str, Sequence[str]]) -> None:
    """Hard leakage gate: no maceration id may appear in two partitions."""
    seen: Dict[str, str] = {}
    for name, members in partitions.items():
        for m in members:
            if m in seen and seen[m] != name:
                raise SplitError(f"maceration {m!r} appears in both {seen[m]!r} and {name!r}")
            seen[m] = name


def _partition_counts(k: int, ratios: Sequence[float]) -> List[int]:
    """Largest-remainder counts over k macerations, floor 1 per partition."""
    raw = [r * k for r in ratios]
    counts = [math.floor(v) for v in raw]
    leftover = k - sum(counts)
    order = sorted(range(3), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:leftover]:
        counts[i] += 1
    for i in range(3):
        if counts[i] == 0:
            donor = max(range(3), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[i] += 1
    return counts


def _assignment_deviation(weights: Sequence[int], groups: Sequence[Sequence[int]], ratios) -> float:
    total = sum(weights) or 1
    dev = 0.0
    for members, target in zip(groups, ratios):
        frac = sum(weights[i] for i in members) / total
        dev = max(dev, abs(frac - target))
    return dev


def _best_assignment(weights: List[int], counts: List[int], ratios, rng) -> List[List[int]]:
    """Pick which macerations land in which partition so that annotation-count
    fractions track the requested ratios; exhaustive for small groups, seeded
    greedy + swap refinement otherwise."""
    k = len(weights)
    idx = list(range(k))
    n_tr, n_val, n_te = counts
    n_combos = math.comb(k, n_tr) * math.comb(k - n_tr, n_val)
    if n_combos <= 20000:
        best, best_dev = None, None
        for train in itertools.combinations(idx, n_tr):
            rest = [i for i in idx if i not in train]
            for val in itertools.combinations(rest, n_val):
                test = [i for i in rest if i not in val]
                dev = _assignment_deviation(weights, (train, val, test), ratios)
                if best_dev is None or dev < best_dev - 1e-12:
                    best, best_dev = (list(train), list(val), list(test)), dev
        return list(best)
    # large group: greedy fill of the most-lagging partition, then 1-1 swaps
    order = sorted(idx, key=lambda i: -weights[i])
    groups: List[List[int]] = [[], [], []]
    quota = list(counts)
    for i in order:
        total = sum(weights) or 1
        lags = []
        for g in range(3):
            frac = sum(weights[j] for j in groups[g]) / total
            lags.append((ratios[g] - frac) if quota[g] > len(groups[g]) else -math.inf)
        g = max(range(3), key=lambda j: lags[j])
        groups[g].append(i)
    improved = True
    while improved:
        improved = False
        base = _assignment_deviation(weights, groups, ratios)
        for ga, gb in itertools.combinations(range(3), 2):
            for pa in range(len(groups[ga])):
                for pb in range(len(groups[gb])):
                    groups[ga][pa], groups[gb][pb] = groups[gb][pb], groups[ga][pa]
                    dev = _assignment_deviation(weights, groups, ratios)
                    if dev < base - 1e-12:
                        base = dev
                        improved = True
                    else:
                        groups[ga][pa], groups[gb][pb] = groups[gb][pb], groups[ga][pa]
    return groups


def split(index: DatasetIndex, ratios: Tuple[float, float, float], seed: int) -> SplitAssignment:
    """Stratified maceration-level split.

    Per genus, macerations are portioned train/val/test by largest-remainder
    counts (at least one each), and the concrete assignment minimizes the
    worst deviation of each partition's annotation fraction from its ratio.
    Deterministic given seed; candidate order is seed-shuffled, which breaks
    ties between equal-deviation assignments.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios sum to {sum(ratios)}, expected 1")
    by_genus: Dict[str, Dict[str, int]] = {}
    for meta in index.slides.values():
        if meta.genus is None:
            raise SplitError(f"slide {meta.slide_id} has no genus; split needs mono-fraction slides")
        counts = by_genus.setdefault(meta.genus, {})
        n_acc = len(index.accepted_annotations(meta.slide_id))
        counts[meta.maceration_id] = counts.get(meta.maceration_id, 0) + n_acc

    mac_genus: Dict[str, str] = {}
    for genus, macs in by_genus.items():
        for m in macs:
            if m in mac_genus and mac_genus[m] != genus:
                raise SplitError(f"maceration {m} holds slides of both {mac_genus[m]} and {genus}")
            mac_genus[m] = genus

    partition: Dict[str, str] = {}
    for genus in sorted(by_genus):
        macs = sorted(by_genus[genus])
        if len(macs) < 3:
            raise SplitError(f"genus {genus} has only {len(macs)} macerations, need at least 3")
        rng = np.random.default_rng([seed, zlib.crc32(genus.encode())])
        rng.shuffle(macs)
        weights = [by_genus[genus][m] for m in macs]
        counts = _partition_counts(len(macs), ratios)
        groups = _best_assignment(weights, counts, ratios, rng)
        for name, members in zip(PARTITIONS, groups):
            for i in members:
                partition[macs[i]] = name
    return SplitAssignment(partition, seed, tuple(ratios))


# ---------------------------------------------------------------------------
# review merging
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReviewDecision:
    action: str  # accept | adjust | reject
    bbox: Optional[BBox] = None
    genus: Optional[str] = None

    def __post_init__(self):
        if self.action not in ("accept", "adjust", "reject"):
            raise ValueError(f"unknown review action {self.action!r}")
        if self.action == "adjust" and self.bbox is None and self.genus is None:
            raise ValueError("adjust decision needs a bbox and/or genus")


def merge_review(
    index: DatasetIndex,
    predictions: Sequence[Annotation],
    decisions: Dict[str, ReviewDecision],
) -> DatasetIndex:
    """Publish predictions and fold reviewer decisions into the index.

    accept: the prediction becomes a corrected, accepted annotation.
    adjust: geometry/genus replaced, likewise corrected and accepted.
    reject: kept as a rejected record (a hard negative), never deleted.
    Untouched predictions stay pending. Every change increments the version.
    """
    for p in predictions:
        if p.source != Source.PREDICTED:
            raise ValueError(f"prediction {p.annotation_id} has source {p.source.value}")
    index.add_annotations(predictions)

    known = {a.annotation_id: a.slide_id for anns in index.annotations.values() for a in anns.values()}
    for ann_id in decisions:
        if ann_id not in known:
            raise UnknownAnnotationError(f"decision references unknown annotation {ann_id}")

    for ann_id, decision in decisions.items():
        current = index.get(known[ann_id], ann_id)
        if decision.action == "accept":
            updated = current.evolve(
                source=Source.CORRECTED,
                review=Review.ACCEPTED,
                confidence=None,
                version=current.version + 1,
            )
        elif decision.action == "adjust":
            updated = current.evolve(
                bbox=decision.bbox if decision.bbox is not None else current.bbox,
                genus=decision.genus if decision.genus is not None else current.genus,
                source=Source.CORRECTED,
                review=Review.ACCEPTED,
                confidence=None,
                version=current.version + 1,
            )
        else:
            updated = current.evolve(review=Review.REJECTED, version=current.version + 1)
        index.add_annotations([updated])
    return index


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------


def stats(index: DatasetIndex) -> List[Tuple[str, int, int]]:
    """Per-genus (image count, vessel count) over accepted annotations,
    sorted descending by vessel count."""
    images: Dict[str, set] = {}
    vessels: Dict[str, int] = {}
    for sid, meta in index.slides.items():
        for a in index.accepted_annotations(sid):
            genus = a.genus or meta.genus
            if genus is None:
                continue
            images.setdefault(genus, set()).add(sid)
            vessels[genus] = vessels.get(genus, 0) + 1
    rows = [(g, len(images[g]), vessels[g]) for g in vessels]
    rows.sort(key=lambda r: (-r[2], r[0]))
    return rows
