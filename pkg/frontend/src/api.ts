/** Thin fetch wrapper over the annotation service HTTP API.
 *
 * The UI never holds authoritative state: every mutation goes through
 * submitCorrection and the server's response is the new truth.
 */

import type {
  AnnotationRecord,
  CorrectionRequest,
  ServiceError,
  SlideDetail,
  SlideSummary,
} from "./types.js";

export type CorrectionResult =
  | { ok: true; annotation: AnnotationRecord }
  | { ok: false; status: number; error: ServiceError };

export class ApiClient {
  constructor(private readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async listSlides(): Promise<SlideSummary[]> {
    const resp = await fetch(this.url("/slides"));
    if (!resp.ok) throw new Error(`GET /slides failed: ${resp.status}`);
    return (await resp.json()) as SlideSummary[];
  }

  async getSlide(slideId: string): Promise<SlideDetail> {
    const resp = await fetch(this.url(`/slides/${slideId}`));
    if (!resp.ok) throw new Error(`GET /slides/${slideId} failed: ${resp.status}`);
    return (await resp.json()) as SlideDetail;
  }

  tileUrl(slideId: string, plane: number, level: number, x: number, y: number): string {
    return this.url(`/slides/${slideId}/tiles/${plane}/${level}/${x}_${y}`);
  }

  async listAnnotations(
    slideId: string,
    filter?: { source?: string; review?: string },
  ): Promise<AnnotationRecord[]> {
    const params = new URLSearchParams();
    if (filter?.source) params.set("source", filter.source);
    if (filter?.review) params.set("review", filter.review);
    const qs = params.toString();
    const resp = await fetch(this.url(`/slides/${slideId}/annotations${qs ? "?" + qs : ""}`));
    if (!resp.ok) throw new Error(`GET annotations failed: ${resp.status}`);
    return (await resp.json()) as AnnotationRecord[];
  }

  async submitCorrection(slideId: string, req: CorrectionRequest): Promise<CorrectionResult> {
    const resp = await fetch(this.url(`/slides/${slideId}/corrections`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
    const body = await resp.json();
    if (resp.ok) return { ok: true, annotation: body as AnnotationRecord };
    return { ok: false, status: resp.status, error: body as ServiceError };
  }

  /** Triggers the annotation-file export; the caller downloads the text. */
  async exportAnnotations(slideId?: string): Promise<string> {
    const resp = await fetch(this.url("/export"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(slideId ? { slide_id: slideId } : {}),
    });
    if (!resp.ok) throw new Error(`POST /export failed: ${resp.status}`);
    return await resp.text();
  }
}
