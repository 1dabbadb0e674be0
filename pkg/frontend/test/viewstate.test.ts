import { describe, expect, it } from "vitest";

import {
  applyEdgeDrag,
  clampLevel,
  clampPlane,
  dragDeltaToLevel0,
  initialView,
  level0ToScreen,
  pan,
  screenToLevel0,
  switchPlane,
  visibleTiles,
  zoom,
} from "../src/viewstate.js";

const VP = { width: 800, height: 600 };

describe("coordinate mapping", () => {
  it("round-trips screen <-> level-0", () => {
    const view = { ...initialView("s", 10000, 8000, 6), level: 3, centerX: 5000, centerY: 4000 };
    const [x, y] = screenToLevel0(view, VP, 100, 200);
    const [sx, sy] = level0ToScreen(view, VP, x, y);
    expect(sx).toBeCloseTo(100, 9);
    expect(sy).toBeCloseTo(200, 9);
  });

  it("screen center maps to view center", () => {
    const view = { ...initialView("s", 10000, 8000, 6), centerX: 1234, centerY: 567 };
    const [x, y] = screenToLevel0(view, VP, VP.width / 2, VP.height / 2);
    expect(x).toBe(1234);
    expect(y).toBe(567);
  });

  it("one screen pixel covers 2^level level-0 pixels", () => {
    expect(dragDeltaToLevel0(1, 0)).toBe(1);
    expect(dragDeltaToLevel0(1, 3)).toBe(8);
    expect(dragDeltaToLevel0(-2, 4)).toBe(-32);
  });
});

describe("edge drags", () => {
  it("right edge +10 level-0 px at level 0", () => {
    const out = applyEdgeDrag([100, 100, 200, 220], "right", 10, 0);
    expect(out).toEqual([100, 100, 210, 220]);
  });

  it("1 screen px at level 3 moves the edge 8 level-0 px", () => {
    const out = applyEdgeDrag([100, 100, 200, 220], "right", 1, 3);
    expect(out).toEqual([100, 100, 208, 220]);
  });

  it("blocks degenerate boxes client-side", () => {
    expect(applyEdgeDrag([100, 100, 110, 120], "right", -10, 1)).toBeNull();
    expect(applyEdgeDrag([100, 100, 110, 120], "left", 20, 0)).toBeNull();
  });

  it("rounds at level 0, not in screen space", () => {
    // 1.4 screen px at level 2 = 5.6 level-0 px -> rounds to 6 exactly once
    const out = applyEdgeDrag([0, 0, 10, 10], "bottom", 1.4, 2);
    expect(out).toEqual([0, 0, 10, 16]);
  });
});

describe("view navigation", () => {
  it("pan moves the center opposite to the drag, scaled by level", () => {
    const view = { ...initialView("s", 4000, 4000, 5), level: 2, centerX: 2000, centerY: 2000 };
    const moved = pan(view, 10, -5);
    expect(moved.centerX).toBe(2000 - 40);
    expect(moved.centerY).toBe(2000 + 20);
  });

  it("zoom and plane stay within bounds", () => {
    expect(clampLevel(99, 6)).toBe(5);
    expect(clampLevel(-1, 6)).toBe(0);
    expect(clampPlane(7, 5)).toBe(4);
    const view = initialView("s", 4000, 4000, 5);
    expect(zoom(view, -99, 5).level).toBe(0);
    expect(zoom(view, 99, 5).level).toBe(4);
  });

  it("plane switching changes imagery selection only, never geometry", () => {
    const view = { ...initialView("s", 4000, 4000, 5), centerX: 111, centerY: 222, level: 1 };
    const switched = switchPlane(view, 3, 5);
    expect(switched.plane).toBe(3);
    expect(switched.centerX).toBe(view.centerX);
    expect(switched.centerY).toBe(view.centerY);
    expect(switched.level).toBe(view.level);
  });
});

describe("visible tiles", () => {
  it("covers the viewport at level 0", () => {
    const view = { ...initialView("s", 2048, 2048, 4), level: 0, centerX: 1024, centerY: 1024 };
    const tiles = visibleTiles(view, { width: 1024, height: 1024 }, 512, 2048, 2048);
    expect(tiles.length).toBe(4);
  });

  it("never requests tiles outside the level grid", () => {
    const view = { ...initialView("s", 1000, 800, 4), level: 1, centerX: 0, centerY: 0 };
    const tiles = visibleTiles(view, VP, 512, 1000, 800);
    for (const t of tiles) {
      expect(t.tx).toBeGreaterThanOrEqual(0);
      expect(t.ty).toBeGreaterThanOrEqual(0);
    }
  });
});
