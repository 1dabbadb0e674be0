/** Review queue over pending predictions.
 *
 * Ordered by confidence ascending: the expert's time goes to the detector's
 * most doubtful outputs first. Deciding an item removes it and advances to
 * the next; the queue itself never talks to the network.
 */

import type { AnnotationRecord } from "./types.js";

export function queueOrder(a: AnnotationRecord, b: AnnotationRecord): number {
  const ca = a.confidence ?? 1;
  const cb = b.confidence ?? 1;
  if (ca !== cb) return ca - cb;
  return a.annotation_id < b.annotation_id ? -1 : a.annotation_id > b.annotation_id ? 1 : 0;
}

export class ReviewQueue {
  private items: AnnotationRecord[] = [];
  private cursor = 0;

  load(pending: AnnotationRecord[]): void {
    this.items = [...pending].sort(queueOrder);
    this.cursor = 0;
  }

  get length(): number {
    return this.items.length;
  }

  get position(): number {
    return this.cursor;
  }

  get done(): boolean {
    return this.cursor >= this.items.length;
  }

  current(): AnnotationRecord | null {
    return this.done ? null : this.items[this.cursor];
  }

  next(): AnnotationRecord | null {
    if (this.cursor < this.items.length) this.cursor++;
    return this.current();
  }

  previous(): AnnotationRecord | null {
    if (this.cursor > 0) this.cursor--;
    return this.current();
  }

  /** Remove a decided record (by id) and keep the cursor on the next item. */
  remove(annotationId: string): void {
    const idx = this.items.findIndex((a) => a.annotation_id === annotationId);
    if (idx < 0) return;
    this.items.splice(idx, 1);
    if (idx < this.cursor) this.cursor--;
    if (this.cursor > this.items.length) this.cursor = this.items.length;
  }

  /** Replace a record with the server's current version (after a 409). */
  refresh(record: AnnotationRecord): void {
    const idx = this.items.findIndex((a) => a.annotation_id === record.annotation_id);
    if (idx >= 0) {
      if (record.review === "pending") {
        this.items[idx] = record;
      } else {
        this.remove(record.annotation_id);
      }
    }
  }
}
