/** Review session: wires the queue to the service.
 *
 * Every mutation flows through submitCorrection with the version the
 * reviewer saw. On a 409 the session reloads the current record and parks
 * the reviewer's intent for explicit confirmation; nothing is lost and
 * nothing is silently overwritten.
 */

import { ApiClient, CorrectionResult } from "./api.js";
import { ReviewQueue } from "./queue.js";
import type { AnnotationRecord, CorrectionAction, CorrectionRequest } from "./types.js";

export interface ConflictState {
  intent: CorrectionRequest;
  current: AnnotationRecord;
}

export type DecisionOutcome =
  | { status: "applied"; annotation: AnnotationRecord }
  | { status: "conflict"; conflict: ConflictState }
  | { status: "error"; code: string; message: string };

export class ReviewSession {
  readonly queue = new ReviewQueue();
  conflict: ConflictState | null = null;

  constructor(
    private readonly api: ApiClient,
    readonly slideId: string,
    readonly reviewer: string,
  ) {}

  async load(): Promise<number> {
    const pending = await this.api.listAnnotations(this.slideId, {
      source: "predicted",
      review: "pending",
    });
    this.queue.load(pending);
    return this.queue.length;
  }

  private buildRequest(
    target: AnnotationRecord,
    action: CorrectionAction,
    bbox?: [number, number, number, number],
    genus?: string,
  ): CorrectionRequest {
    const req: CorrectionRequest = {
      annotation_id: target.annotation_id,
      expected_version: target.version,
      action,
      reviewer: this.reviewer,
    };
    if (bbox) req.bbox = bbox;
    if (genus) req.genus = genus;
    return req;
  }

  private async submit(req: CorrectionRequest): Promise<DecisionOutcome> {
    const result: CorrectionResult = await this.api.submitCorrection(this.slideId, req);
    if (result.ok) {
      this.queue.remove(result.annotation.annotation_id);
      this.conflict = null;
      return { status: "applied", annotation: result.annotation };
    }
    if (result.status === 409 && result.error.current) {
      // surface the conflict: reload the record, hold the intent for replay
      this.queue.refresh(result.error.current);
      this.conflict = { intent: req, current: result.error.current };
      return { status: "conflict", conflict: this.conflict };
    }
    return { status: "error", code: result.error.code, message: result.error.message };
  }

  async decideCurrent(
    action: CorrectionAction,
    bbox?: [number, number, number, number],
    genus?: string,
  ): Promise<DecisionOutcome> {
    const target = this.queue.current();
    if (!target) return { status: "error", code: "empty_queue", message: "no pending predictions" };
    return this.submit(this.buildRequest(target, action, bbox, genus));
  }

  async decideById(
    annotationId: string,
    expectedVersion: number,
    action: CorrectionAction,
    bbox?: [number, number, number, number],
    genus?: string,
  ): Promise<DecisionOutcome> {
    const req: CorrectionRequest = {
      annotation_id: annotationId,
      expected_version: expectedVersion,
      action,
      reviewer: this.reviewer,
    };
    if (bbox) req.bbox = bbox;
    if (genus) req.genus = genus;
    return this.submit(req);
  }

  /** Replay the parked intent against the record's current version after the
   * reviewer confirmed; discard it otherwise. */
  async replayConflict(confirmed: boolean): Promise<DecisionOutcome | null> {
    if (!this.conflict) return null;
    const { intent, current } = this.conflict;
    this.conflict = null;
    if (!confirmed) return null;
    return this.submit({ ...intent, expected_version: current.version });
  }

  async export(): Promise<string> {
    return this.api.exportAnnotations(this.slideId);
  }
}
