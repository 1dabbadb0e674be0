"""Acceptance suite: one test per criterion, one pass/fail line each.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines
(or `-rA` for captured output of passing tests).
"""

import itertools
import json
import math
import time

import numpy as np
import pytest

from test_metrics import as_bboxes, oracle_ap_11pt, random_instance

from vesselid.augment import MosaicConfig, mosaic
from vesselid.cli import RunConfig, cmd_classify, cmd_detect, evaluate, fit_classifier
from vesselid.core import Annotation, BBox, GenusCatalog, SlideMeta, argmax_class
from vesselid.dataset import DatasetIndex, check_disjoint, split
from vesselid.metrics import (
    ConfusionMatrix,
    MatchConfig,
    average_precision_11pt,
    f_beta,
    macro_f1,
    match,
)
from vesselid.preprocess import (
    NormalizeConfig,
    extract_crop,
    grayscale,
    normalize_crop,
    plan_tiles,
    resize_raster,
    stitch,
)
from vesselid.scorers import CentroidClassifier, DetectorParams, ScorerBinding, detect_baseline, fuse
from vesselid.slide_store import RegionRequest, SlideContainer, ingest
from vesselid.synth import SynthGenusProfile, SynthSpec, compose_scene, default_profiles, generate


def report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {name}: {status}" + (f" ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# 1. Published per-genus F2 consistency
# ---------------------------------------------------------------------------

PER_GENUS_PRF2 = [
    ("Liquidambar", 0.8885, 0.6145, 0.6549),
    ("Salix", 0.9109, 0.6317, 0.6730),
    ("Fagus", 0.9357, 0.6799, 0.7192),
    ("Populus", 0.9578, 0.6855, 0.7268),
    ("Eucalyptus", 0.8125, 0.7629, 0.7723),
    ("Hevea", 0.5060, 0.9037, 0.7809),
    ("Schima", 0.8736, 0.8537, 0.8576),
    ("Betula", 0.8961, 0.8581, 0.8654),
    ("Acacia", 0.8753, 0.8950, 0.8910),
]


def test_per_genus_f2_reproduction():
    start = time.perf_counter()
    worst = 0.0
    for genus, p, r, expected_f2 in PER_GENUS_PRF2:
        got = f_beta(p, r, 2.0)
        worst = max(worst, abs(got - expected_f2))
    elapsed = time.perf_counter() - start
    report(
        "per-genus-f2",
        worst <= 5e-4 and elapsed < 1.0,
        f"all nine genera, worst |dF2| = {worst:.5f}, {elapsed * 1000:.1f} ms",
    )


# ---------------------------------------------------------------------------
# 2. AP oracle equivalence
# ---------------------------------------------------------------------------


def test_ap_oracle_equivalence_200_instances():
    rng = np.random.default_rng(20240817)
    mismatches = 0
    for _ in range(200):
        preds, gts = random_instance(rng, max_gts=8, max_preds=12)
        p, g = as_bboxes(preds, gts)
        if average_precision_11pt(p, g, 0.5) != pytest.approx(oracle_ap_11pt(preds, gts, 0.5), abs=0):
            mismatches += 1
    report("ap-oracle", mismatches == 0, f"200 seeded instances, {mismatches} mismatches")


# ---------------------------------------------------------------------------
# 3. Matching properties
# ---------------------------------------------------------------------------


def test_matching_properties_1000_instances():
    rng = np.random.default_rng(77)
    violations = []
    for i in range(1000):
        preds, gts = random_instance(rng, max_gts=8, max_preds=12)
        p, g = as_bboxes(preds, gts)
        prev_fp = None
        for thr in (0.0, 0.25, 0.5, 0.75, 1.0):
            res = match(p, g, MatchConfig(iou_threshold=0.5, confidence_threshold=thr))
            claimed = [gt for _, gt in res.tp]
            if len(claimed) != len(set(claimed)):
                violations.append((i, thr, "gt claimed twice"))
            if len(res.tp) + len(res.fn) != len(g):
                violations.append((i, thr, "tp+fn != |gt|"))
            if len(res.tp) + len(res.fp) != res.n_pred:
                violations.append((i, thr, "tp+fp != |kept preds|"))
            if not (0.0 <= res.precision <= 1.0 and 0.0 <= res.recall <= 1.0):
                violations.append((i, thr, "p/r out of range"))
            if prev_fp is not None and len(res.fp) > prev_fp:
                violations.append((i, thr, "FP grew with threshold"))
            prev_fp = len(res.fp)
        ap = average_precision_11pt(p, g, 0.5)
        if not (0.0 <= ap <= 1.0):
            violations.append((i, None, "AP out of range"))
    report("matching-properties", not violations, f"1000 seeded instances, {len(violations)} violations")


# ---------------------------------------------------------------------------
# 4. Split safety
# ---------------------------------------------------------------------------


def _split_index():
    catalog = GenusCatalog()
    rng = np.random.default_rng(2024)
    index = DatasetIndex()
    mac_counts = {}
    for i, genus in enumerate(catalog):
        for m in range(3 + (i % 8)):  # 3..10 macerations per genus
            mac = f"{genus.lower()}-mac{m}"
            sid = f"{genus.lower()}-s{m}"
            index.add_slide(
                SlideMeta(slide_id=sid, maceration_id=mac, genus=genus, width_px=4000, height_px=4000)
            )
            n = int(rng.integers(30, 61))
            mac_counts[mac] = n
            index.add_annotations(
                Annotation(f"{sid}-a{j}", sid, BBox(3 * j, 3, 3 * j + 2, 6), genus=genus)
                for j in range(n)
            )
    return index, mac_counts


def test_split_safety_100_seeds():
    index, mac_counts = _split_index()
    genus_macs = {}
    for meta in index.slides.values():
        genus_macs.setdefault(meta.genus, []).append(meta.maceration_id)
    worst_dev = 0.0
    for seed in range(100):
        a = split(index, (0.6, 0.2, 0.2), seed)
        check_disjoint({n: a.members(n) for n in ("train", "val", "test")})
        assert len(a.partition) == len(mac_counts), "every maceration assigned exactly once"
        part_totals = {"train": 0, "val": 0, "test": 0}
        genus_part = {}
        for mac, part in a.partition.items():
            genus = mac.split("-mac")[0]
            genus_part.setdefault(genus, {}).setdefault(part, 0)
            genus_part[genus][part] += mac_counts[mac]
            part_totals[part] += mac_counts[mac]
        total = sum(part_totals.values())
        for genus, macs in genus_macs.items():
            if len(macs) == 3:
                assert sorted(a.partition[m] for m in macs) == ["test", "train", "val"]
            else:
                key = genus.lower()
                global_share = sum(genus_part[key].values()) / total
                for part in ("train", "val"):
                    share = genus_part[key].get(part, 0) / part_totals[part]
                    worst_dev = max(worst_dev, abs(share - global_share))
    report(
        "split-safety",
        worst_dev <= 0.05,
        f"100 seeds, zero leaks, worst train/val share deviation {worst_dev * 100:.2f} pp",
    )


# ---------------------------------------------------------------------------
# 5. Mosaic provenance
# ---------------------------------------------------------------------------


def test_mosaic_provenance():
    rng = np.random.default_rng(4242)
    # zero-jitter: quadrants bit-exact to the scaled sources
    samples = []
    for _ in range(4):
        size = int(rng.integers(300, 900))
        samples.append((rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8), []))
    canvas, _ = mosaic(samples, MosaicConfig(canvas=1280, center_jitter=0, seed=0))
    quadrants = [(0, 0), (640, 0), (0, 640), (640, 640)]
    exact = all(
        (canvas[qy : qy + 640, qx : qx + 640] == resize_raster(img, (640, 640))).all()
        for (img, _), (qx, qy) in zip(samples, quadrants)
    )

    boxes_ok = True
    markers_ok = 0
    for case in range(100):
        seed = 31337 + case
        case_samples = []
        for _ in range(4):
            size = int(rng.integers(64, 257))
            img = np.full((size, size, 3), 30, dtype=np.uint8)
            x0 = int(rng.integers(5, size // 2))
            y0 = int(rng.integers(5, size // 2))
            box = BBox(x0, y0, x0 + size // 3, y0 + size // 3)
            img[y0 + 3 : int(box.y_max) - 3, x0 + 3 : int(box.x_max) - 3] = 255
            case_samples.append((img, [box]))
        out, boxes = mosaic(case_samples, MosaicConfig(canvas=512, center_jitter=100, seed=seed))
        if any(b.x_min < 0 or b.y_min < 0 or b.x_max > 512 or b.y_max > 512 for b in boxes):
            boxes_ok = False
        ys, xs = np.nonzero(out[..., 0] > 128)
        inside = all(
            any(b.x_min <= x < b.x_max and b.y_min <= y < b.y_max for b in boxes)
            for x, y in zip(xs, ys)
        )
        markers_ok += inside
    report(
        "mosaic-provenance",
        exact and boxes_ok and markers_ok == 100,
        f"zero-jitter bit-exact={exact}, boxes in canvas={boxes_ok}, marker cases {markers_ok}/100",
    )


# ---------------------------------------------------------------------------
# 6. Tiling equivalence
# ---------------------------------------------------------------------------


def test_tiling_equivalence_6400():
    profiles = {
        "Fagus": SynthGenusProfile("Fagus", (150, 10), (2.0, 0.2), 0.08, (140, 150, 120)),
        "Salix": SynthGenusProfile("Salix", (110, 8), (1.4, 0.1), 0.06, (160, 160, 110)),
    }
    spec = SynthSpec(
        width=6400, height=6400, planes=1, genus_mix={"Fagus": 0.5, "Salix": 0.5},
        element_count=60, fiber_count=0, seed=77, max_pair_iou=0.0,
    )
    canvas, anns = compose_scene(spec, profiles, "tiling")
    max_diameter = max(math.hypot(a.bbox.width, a.bbox.height) for a in anns)
    assert max_diameter < 256, "scene must keep objects smaller than the overlap"
    gray = grayscale(canvas)
    params = DetectorParams(threshold=60, min_area_px=200)

    direct = detect_baseline(gray, params)
    plan = plan_tiles(6400, 6400, 2560, 256)
    per_tile = []
    for i, r in enumerate(plan.rects):
        dets = detect_baseline(gray[r.y0 : r.y1, r.x0 : r.x1], params)
        per_tile.append((i, [(d.bbox, d.confidence) for d in dets]))
    merged = stitch(per_tile, plan, iou_threshold=0.5)

    direct_set = sorted((d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max) for d in direct)
    tiled_set = sorted((b.x_min, b.y_min, b.x_max, b.y_max) for b, _ in merged)
    report(
        "tiling-equivalence",
        direct_set == tiled_set and len(direct_set) == 60,
        f"{len(direct_set)} boxes untiled vs {len(tiled_set)} tiled, identical={direct_set == tiled_set}",
    )


# ---------------------------------------------------------------------------
# 7. End-to-end synthetic reproduction (fixed seed, 20 slides, 9 genera)
# ---------------------------------------------------------------------------

E2E_BLUR = (1.2, 0.6, 0.0, 0.6, 1.2)


@pytest.fixture(scope="module")
def e2e_run(tmp_path_factory):
    started = time.perf_counter()
    root = tmp_path_factory.mktemp("e2e_ds")
    out = tmp_path_factory.mktemp("e2e_out")
    catalog = GenusCatalog()
    profiles = default_profiles(scale=0.2)
    index = DatasetIndex(root)

    train_ids = []
    seed = 500
    for genus in catalog:
        sid = f"train-{genus.lower()}"
        spec = SynthSpec(
            width=1280, height=1280, planes=5, genus_mix={genus: 1.0},
            element_count=8, fiber_count=4, blur_per_plane=E2E_BLUR, seed=seed, max_pair_iou=0.05,
        )
        seed += 1
        c, anns = generate(spec, profiles, root / "slides", sid, f"mac-{genus.lower()}-0")
        index.add_slide(c.meta)
        index.add_annotations(anns)
        train_ids.append(sid)

    pairs = list(itertools.combinations(catalog.genera, 2))
    eval_ids, expected_mix = [], {}
    for k in range(20):
        g1, g2 = pairs[(k * 7) % len(pairs)]
        sid = f"eval-{k:02d}"
        spec = SynthSpec(
            width=1280, height=1280, planes=5, genus_mix={g1: 0.5, g2: 0.5},
            element_count=14, fiber_count=8, blur_per_plane=E2E_BLUR, seed=1000 + k, max_pair_iou=0.05,
        )
        c, anns = generate(spec, profiles, root / "slides", sid, f"mac-eval-{k}")
        index.add_slide(c.meta)
        index.add_annotations(anns)
        eval_ids.append(sid)
        expected_mix[sid] = {g1, g2}
    index.save_annotations()

    cfg = RunConfig(
        dataset_root=root,
        out_dir=out,
        detector=ScorerBinding("baseline_detector", {"min_area_px": 800, "max_area_px": 60000}),
        classifier_file=out / "classifier.json",
        seed=0,
    )
    fit_classifier(cfg, train_ids, out / "classifier.json", catalog)
    cmd_detect(cfg, eval_ids)
    cmd_classify(cfg, eval_ids)
    result = evaluate(cfg, slides=eval_ids)
    elapsed = time.perf_counter() - started
    return {
        "out": out,
        "eval_ids": eval_ids,
        "expected_mix": expected_mix,
        "report": result,
        "elapsed": elapsed,
    }


def test_e2e_detector_recall(e2e_run):
    recall = e2e_run["report"]["recall"]
    report("e2e-detector-recall", recall >= 0.90, f"recall {recall:.4f} @ IOU 0.5 over 20 slides")


def test_e2e_classifier_macro_f1(e2e_run):
    f1 = e2e_run["report"]["macro_f1"]
    report("e2e-classifier-macro-f1", f1 >= 0.90, f"macro F1 {f1:.4f} over nine genera")


def test_e2e_presence_reports_exact(e2e_run):
    mismatches = []
    for sid in e2e_run["eval_ids"]:
        doc = json.loads((e2e_run["out"] / "reports" / f"{sid}_presence.json").read_text())
        got = {row["genus"] for row in doc["present"]}
        if got != e2e_run["expected_mix"][sid]:
            mismatches.append(sid)
    report(
        "e2e-genus-presence",
        not mismatches,
        f"rule (3, 0.05): {20 - len(mismatches)}/20 slides exact",
    )


def test_e2e_runtime(e2e_run):
    elapsed = e2e_run["elapsed"]
    report("e2e-runtime", elapsed < 300.0, f"{elapsed:.1f} s for generate+fit+detect+classify+evaluate")


# ---------------------------------------------------------------------------
# 8. Fusion ordering across focal-plane strategies
# ---------------------------------------------------------------------------


def test_fusion_ordering(tmp_path_factory):
    root = tmp_path_factory.mktemp("fusion")
    profiles = {
        "Acacia": SynthGenusProfile("Acacia", (90, 8), (2.0, 0.2), 0.050, (140, 130, 150)),
        "Betula": SynthGenusProfile("Betula", (110, 8), (2.2, 0.2), 0.065, (135, 135, 140)),
        "Eucalyptus": SynthGenusProfile("Eucalyptus", (130, 8), (2.4, 0.2), 0.080, (145, 132, 138)),
    }
    blur = (2.0, 1.0, 0.0, 1.0, 2.0)
    catalog = GenusCatalog()
    norm = NormalizeConfig(target=400)

    def crops_of(tag, n_slides, seed0):
        rows = []
        seed = seed0
        for genus in profiles:
            for k in range(n_slides):
                sid = f"{tag}-{genus.lower()}-{k}"
                spec = SynthSpec(
                    width=700, height=700, planes=5, genus_mix={genus: 1.0},
                    element_count=6, blur_per_plane=blur, seed=seed, max_pair_iou=0.05,
                )
                seed += 1
                c, anns = generate(spec, profiles, root / "slides", sid, f"mac-{sid}")
                for a in anns:
                    planes = [
                        normalize_crop(grayscale(extract_crop(c, a.bbox, p)), norm) for p in range(5)
                    ]
                    rows.append((genus, planes))
        return rows

    train = crops_of("train", 2, 100)
    evalc = crops_of("eval", 4, 900)
    crops_by_genus = {}
    for genus, planes in train:
        crops_by_genus.setdefault(genus, []).extend(planes)
    clf = CentroidClassifier(catalog).fit(crops_by_genus)

    def f1_of(mode):
        cm = ConfusionMatrix.empty(tuple(profiles))
        for genus, planes in evalc:
            vecs = [clf.predict(c) for c in planes]
            v = fuse(vecs, mode) if mode in ("average", "maximum") else vecs[2]
            cm.add(genus, argmax_class(catalog, v))
        return macro_f1(cm)

    avg, mx, mid = f1_of("average"), f1_of("maximum"), f1_of("middle")
    report(
        "fusion-ordering",
        avg >= mid - 0.01 and abs(avg - mx) <= 0.02,
        f"average {avg:.4f}, maximum {mx:.4f}, middle-plane {mid:.4f}",
    )


# ---------------------------------------------------------------------------
# 9. Memory contract (16384^2, 5 planes, 64-tile budget)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def big_slide(tmp_path_factory):
    dest = tmp_path_factory.mktemp("bigslide")
    n = 16384
    meta = SlideMeta(slide_id="mem", maceration_id="memmac", width_px=n, height_px=n, plane_count=5)

    def planes():
        ramp = (np.arange(n) % 251).astype(np.uint8)
        for k in range(5):
            # uint8 wrap-around diagonal gradient; deterministic, plane-dependent
            yield ramp[None, :] + ramp[:, None] + np.uint8(37 * k)

    return ingest(planes(), meta, dest), dest


def test_memory_contract(big_slide):
    container, dest = big_slide
    requests = [
        RegionRequest(2, 0, BBox(5000, 7000, 8000, 10000)),  # 3000^2, 49 tiles
        RegionRequest(0, 0, BBox(1024, 9000, 7024, 13000)),  # 6000x4000, 96 tiles > budget
        RegionRequest(4, 1, BBox(0, 0, 8192, 8192)),  # full level 1, 256 tiles
    ]
    budgeted = [container.read_region(r, budget=64) for r in requests]
    peak = container.buffer_counter.peak
    reference_handle = SlideContainer.open(dest / "mem")
    exact = all(
        (b == reference_handle.read_region(r, budget=10**6)).all()
        for b, r in zip(budgeted, requests)
    )
    report(
        "memory-contract",
        peak <= 64 and exact,
        f"peak resident tile buffers {peak} <= 64, bit-exact vs unbudgeted reads: {exact}",
    )


# ---------------------------------------------------------------------------
# 10. Normalize contract
# ---------------------------------------------------------------------------


def test_normalize_contract():
    rng = np.random.default_rng(55)
    cfg = NormalizeConfig(target=800)
    ok_shape = ok_interior = 0
    cases = 200
    for _ in range(cases):
        w = int(rng.integers(1, 2001))
        h = int(rng.integers(1, 2001))
        crop = rng.integers(1, 256, size=(h, w), dtype=np.uint8)
        out = normalize_crop(crop, cfg)
        if out.shape == (800, 800):
            ok_shape += 1
        if w <= 800 and h <= 800:
            ox, oy = (800 - w) // 2, (800 - h) // 2
            if (out[oy : oy + h, ox : ox + w] == crop).all():
                ok_interior += 1
        else:
            ok_interior += 1
    reference_case = normalize_crop(np.full((766, 1241), 200, dtype=np.uint8), cfg)
    cols = np.flatnonzero((reference_case != 0).any(axis=0))
    long_side_exact = cols[-1] - cols[0] + 1 == 800
    report(
        "normalize-contract",
        ok_shape == cases and ok_interior == cases and long_side_exact,
        f"{cases} random sizes SxS={ok_shape == cases}, interiors bit-exact={ok_interior == cases}, "
        f"1241x766 long side -> 800: {long_side_exact}",
    )
