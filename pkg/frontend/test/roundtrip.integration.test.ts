/** Review round-trip against a live annotation service.
 *
 * Boots the Python service on a synthetic slide with 10 predictions, then
 * drives a scripted UI session through the real session/queue/api code:
 * accept 8, adjust 1 (right edge +10 px), reject 1. The exported annotation
 * file must reflect exactly those changes with correct versions, and a
 * stale-version replay must surface a conflict instead of silently losing
 * an expert's work.
 */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { ReviewSession } from "../src/session.js";
import { applyEdgeDrag } from "../src/viewstate.js";

const PORT = 8741;
const BASE = `http://127.0.0.1:${PORT}`;

const BOOTSTRAP = `
import sys
from pathlib import Path
from vesselid.core import Annotation, BBox, Review, Source
from vesselid.dataset import DatasetIndex
from vesselid.synth import SynthSpec, default_profiles, generate

root = Path(sys.argv[1])
spec = SynthSpec(width=512, height=512, planes=2, genus_mix={"Fagus": 1.0},
                 element_count=3, blur_per_plane=(0, 1), seed=7)
container, gt = generate(spec, default_profiles(scale=0.15), root / "slides", "s1", "m1")
index = DatasetIndex(root)
index.add_slide(container.meta)
index.add_annotations(gt)
preds = [
    Annotation(f"s1-p{i:05d}", "s1", BBox(20 + 40 * i, 300, 50 + 40 * i, 340),
               confidence=0.40 + 0.05 * i, source=Source.PREDICTED, review=Review.PENDING)
    for i in range(10)
]
index.add_annotations(preds)
index.save_annotations()
print("ready")
`;

let server: ChildProcess | null = null;
let root = "";

async function waitForService(timeoutMs = 30000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const resp = await fetch(`${BASE}/slides`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("service did not come up");
}

beforeAll(async () => {
  root = mkdtempSync(join(tmpdir(), "vesselid-ui-"));
  const script = join(root, "bootstrap.py");
  writeFileSync(script, BOOTSTRAP);
  const boot = spawnSync("python3", [script, root], { encoding: "utf-8" });
  if (!boot.stdout.includes("ready")) {
    throw new Error(`bootstrap failed: ${boot.stderr}`);
  }
  server = spawn("vesselid", ["serve", "--dataset", root, "--port", String(PORT)], {
    stdio: "ignore",
  });
  await waitForService();
}, 90000);

afterAll(() => {
  server?.kill("SIGTERM");
  rmSync(root, { recursive: true, force: true });
});

describe("scripted review session round-trip", () => {
  it("accept 8, adjust 1, reject 1; export reflects exactly that", async () => {
    const api = new ApiClient(BASE);
    const session = new ReviewSession(api, "s1", "integration-bot");
    const n = await session.load();
    expect(n).toBe(10);

    // queue is confidence-ascending, so p00000..p00009 in order
    const decided: string[] = [];
    for (let i = 0; i < 8; i++) {
      const current = session.queue.current()!;
      const outcome = await session.decideCurrent("accept");
      expect(outcome.status).toBe("applied");
      decided.push(current.annotation_id);
    }

    const adjustTarget = session.queue.current()!;
    const staleVersion = adjustTarget.version;
    const widened = applyEdgeDrag(adjustTarget.bbox, "right", +10, 0)!;
    expect(widened[2]).toBe(adjustTarget.bbox[2] + 10);
    const adjusted = await session.decideCurrent("adjust", widened);
    expect(adjusted.status).toBe("applied");
    if (adjusted.status === "applied") {
      expect(adjusted.annotation.bbox[2]).toBe(adjustTarget.bbox[2] + 10);
      expect(adjusted.annotation.version).toBe(2);
    }

    const rejectTarget = session.queue.current()!;
    const rejected = await session.decideCurrent("reject");
    expect(rejected.status).toBe("applied");
    expect(session.queue.done).toBe(true);

    // export downloads the annotation file; verify every change landed
    const text = await session.export();
    const lines = new Map(
      text
        .trim()
        .split("\n")
        .map((l) => [l.split(",")[0].trim(), l] as const),
    );
    for (const id of decided) {
      const line = lines.get(id)!;
      expect(line).toContain("corrected");
      expect(line).toContain("accepted");
      expect(line.trim().endsWith("2")).toBe(true);
    }
    const adjustedLine = lines.get(adjustTarget.annotation_id)!;
    const bboxField = adjustedLine.split(",")[1].trim().split(/\s+/).map(Number);
    expect(bboxField[2]).toBe(adjustTarget.bbox[2] + 10);
    expect(adjustedLine).toContain("corrected");
    const rejectedLine = lines.get(rejectTarget.annotation_id)!;
    expect(rejectedLine).toContain("rejected");
    expect(rejectedLine.trim().endsWith("2")).toBe(true);

    // stale-version replay: resubmitting the adjust with the version the
    // reviewer originally saw must surface a conflict, not silent loss
    const replaySession = new ReviewSession(api, "s1", "integration-bot");
    const replay = await replaySession.decideById(
      adjustTarget.annotation_id,
      staleVersion,
      "adjust",
      widened,
    );
    expect(replay.status).toBe("conflict");
    if (replay.status === "conflict") {
      expect(replay.conflict.current.version).toBe(2);
      expect(replay.conflict.current.bbox[2]).toBe(adjustTarget.bbox[2] + 10);
    }
  }, 60000);
});
