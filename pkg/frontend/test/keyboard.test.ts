import { describe, expect, it } from "vitest";

import { keyToAction } from "../src/keyboard.js";

describe("keyboard mapping", () => {
  it("digits 1-9 map to catalog indices 0-8", () => {
    for (let d = 1; d <= 9; d++) {
      const action = keyToAction(String(d));
      expect(action).toEqual({ type: "assign_genus", index: d - 1 });
    }
  });

  it("review keys", () => {
    expect(keyToAction("a")).toEqual({ type: "accept" });
    expect(keyToAction("x")).toEqual({ type: "reject" });
    expect(keyToAction("j")).toEqual({ type: "next" });
    expect(keyToAction("ArrowLeft")).toEqual({ type: "previous" });
    expect(keyToAction("[")).toEqual({ type: "plane_down" });
    expect(keyToAction("]")).toEqual({ type: "plane_up" });
    expect(keyToAction("Enter")).toEqual({ type: "confirm_conflict" });
  });

  it("unmapped keys do nothing", () => {
    expect(keyToAction("q")).toBeNull();
    expect(keyToAction("0")).toBeNull();
    expect(keyToAction("F5")).toBeNull();
  });
});
