import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { ReviewSession } from "../src/session.js";
import type { AnnotationRecord } from "../src/types.js";

function pred(id: string, confidence: number, version = 1): AnnotationRecord {
  return {
    annotation_id: id,
    slide_id: "s1",
    bbox: [0, 0, 10, 10],
    genus: null,
    confidence,
    source: "predicted",
    review: "pending",
    version,
  };
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("review session conflict handling", () => {
  const fetchMock = vi.fn();

  beforeEach(() => {
    vi.stubGlobal("fetch", fetchMock);
    fetchMock.mockReset();
  });

  afterEach(() => {
    vi.unstubAllGlobals();
  });

  it("applies a correction and removes it from the queue", async () => {
    fetchMock
      .mockResolvedValueOnce(jsonResponse(200, [pred("a", 0.2), pred("b", 0.7)]))
      .mockResolvedValueOnce(jsonResponse(200, { ...pred("a", 0.2, 2), review: "accepted", source: "corrected" }));
    const session = new ReviewSession(new ApiClient("http://x"), "s1", "t");
    await session.load();
    const outcome = await session.decideCurrent("accept");
    expect(outcome.status).toBe("applied");
    expect(session.queue.length).toBe(1);
    expect(session.queue.current()!.annotation_id).toBe("b");
  });

  it("surfaces a 409 as a conflict and replays on confirmation", async () => {
    const moved = { ...pred("a", 0.2, 4) };
    fetchMock
      .mockResolvedValueOnce(jsonResponse(200, [pred("a", 0.2)]))
      .mockResolvedValueOnce(
        jsonResponse(409, { code: "version_conflict", message: "stale", current: moved }),
      )
      .mockResolvedValueOnce(jsonResponse(200, { ...moved, version: 5, review: "rejected" }));
    const session = new ReviewSession(new ApiClient("http://x"), "s1", "t");
    await session.load();

    const outcome = await session.decideCurrent("reject");
    expect(outcome.status).toBe("conflict");
    expect(session.conflict).not.toBeNull();
    expect(session.conflict!.current.version).toBe(4);
    // the queue now shows the server's record, nothing was lost
    expect(session.queue.current()!.version).toBe(4);

    const replay = await session.replayConflict(true);
    expect(replay!.status).toBe("applied");
    expect(session.conflict).toBeNull();
    const lastCall = fetchMock.mock.calls.at(-1)!;
    expect(JSON.parse(lastCall[1].body).expected_version).toBe(4);
  });

  it("dropping a conflict keeps the record intact", async () => {
    const moved = { ...pred("a", 0.2, 2), review: "accepted" as const };
    fetchMock
      .mockResolvedValueOnce(jsonResponse(200, [pred("a", 0.2)]))
      .mockResolvedValueOnce(
        jsonResponse(409, { code: "version_conflict", message: "stale", current: moved }),
      );
    const session = new ReviewSession(new ApiClient("http://x"), "s1", "t");
    await session.load();
    await session.decideCurrent("accept");
    const replay = await session.replayConflict(false);
    expect(replay).toBeNull();
    expect(session.conflict).toBeNull();
    // already-accepted record left the queue on refresh
    expect(session.queue.length).toBe(0);
  });

  it("empty queue yields an error outcome, not a request", async () => {
    fetchMock.mockResolvedValueOnce(jsonResponse(200, []));
    const session = new ReviewSession(new ApiClient("http://x"), "s1", "t");
    await session.load();
    const outcome = await session.decideCurrent("accept");
    expect(outcome.status).toBe("error");
    expect(fetchMock).toHaveBeenCalledTimes(1);
  });
});
