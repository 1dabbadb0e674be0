/** Browser bootstrap: slide picker, tile viewer, review queue panel,
 * keyboard-driven accept/adjust/reject, genus shortcuts 1-9, export. */

import { ApiClient } from "./api.js";
import { isTypingTarget, keyToAction } from "./keyboard.js";
import { ReviewSession } from "./session.js";
import type { AnnotationRecord, SlideDetail } from "./types.js";
import { TileViewer } from "./viewer.js";
import {
  ViewState,
  applyEdgeDrag,
  initialView,
  pan,
  switchPlane,
  zoom,
} from "./viewstate.js";

const api = new ApiClient("");
let slide: SlideDetail | null = null;
let view: ViewState | null = null;
let session: ReviewSession | null = null;
let viewer: TileViewer | null = null;
let annotations: AnnotationRecord[] = [];

const canvas = document.getElementById("viewer") as HTMLCanvasElement;
const queueInfo = document.getElementById("queue-info")!;
const conflictBox = document.getElementById("conflict")!;
const genusLegend = document.getElementById("genus-legend")!;
const slideSelect = document.getElementById("slide-select") as HTMLSelectElement;
const planeLabel = document.getElementById("plane-label")!;
const statusLine = document.getElementById("status")!;

function setStatus(text: string): void {
  statusLine.textContent = text;
}

function redraw(): void {
  if (viewer && view) viewer.render(view, annotations, view.selection);
}

async function refreshAnnotations(): Promise<void> {
  if (!slide) return;
  annotations = await api.listAnnotations(slide.slide_id);
  redraw();
  renderQueue();
}

function renderQueue(): void {
  if (!session || !view) return;
  const current = session.queue.current();
  if (session.queue.done) {
    queueInfo.textContent = "Queue empty: all predictions reviewed.";
    view.selection = null;
  } else if (current) {
    const conf = current.confidence?.toFixed(3) ?? "-";
    queueInfo.textContent =
      `${session.queue.position + 1}/${session.queue.length} ` +
      `${current.annotation_id} (confidence ${conf})`;
    view.selection = current.annotation_id;
    const [x0, y0, x1, y1] = current.bbox;
    view.centerX = (x0 + x1) / 2;
    view.centerY = (y0 + y1) / 2;
  }
  conflictBox.hidden = session.conflict === null;
  if (session.conflict) {
    conflictBox.textContent =
      `Conflict: record moved to version ${session.conflict.current.version} ` +
      `(now ${session.conflict.current.review}). Enter = replay your ${session.conflict.intent.action}, Esc = drop.`;
  }
  redraw();
}

async function openSlide(slideId: string): Promise<void> {
  slide = await api.getSlide(slideId);
  view = initialView(slideId, slide.width_px, slide.height_px, slide.levels.length);
  viewer = new TileViewer(api, canvas, slide, redraw);
  session = new ReviewSession(api, slideId, reviewerName());
  genusLegend.textContent = slide.genera.map((g, i) => `${i + 1}:${g}`).join("  ");
  const n = await session.load();
  setStatus(`${n} pending predictions`);
  await refreshAnnotations();
  planeLabel.textContent = `plane ${view.plane + 1}/${slide.plane_count}`;
}

function reviewerName(): string {
  const input = document.getElementById("reviewer") as HTMLInputElement;
  return input.value || "anonymous";
}

async function decide(action: "accept" | "reject", genus?: string): Promise<void> {
  if (!session) return;
  const outcome =
    genus === undefined
      ? await session.decideCurrent(action)
      : await session.decideCurrent("adjust", undefined, genus);
  if (outcome.status === "applied") {
    setStatus(`${outcome.annotation.annotation_id}: ${outcome.annotation.review}`);
    await refreshAnnotations();
  } else if (outcome.status === "conflict") {
    setStatus("version conflict, confirm replay");
  } else {
    setStatus(`${outcome.code}: ${outcome.message}`);
  }
  renderQueue();
}

/** Right-edge nudge wired to , and . while a box is selected. */
async function nudgeRightEdge(screenDelta: number): Promise<void> {
  if (!session || !view) return;
  const current = session.queue.current();
  if (!current) return;
  const next = applyEdgeDrag(current.bbox, "right", screenDelta, view.level);
  if (!next) {
    setStatus("edit blocked: box would collapse");
    return;
  }
  const outcome = await session.decideCurrent("adjust", next);
  if (outcome.status === "applied") await refreshAnnotations();
  renderQueue();
}

window.addEventListener("keydown", (ev) => {
  if (isTypingTarget(ev.target) || !session || !view || !slide) return;
  const action = keyToAction(ev.key);
  if (!action) return;
  ev.preventDefault();
  switch (action.type) {
    case "accept":
      void decide("accept");
      break;
    case "reject":
      void decide("reject");
      break;
    case "assign_genus": {
      const genus = slide.genera[action.index];
      if (genus) void decide("accept", genus);
      break;
    }
    case "next":
      session.queue.next();
      renderQueue();
      break;
    case "previous":
      session.queue.previous();
      renderQueue();
      break;
    case "plane_up":
      view = switchPlane(view, view.plane + 1, slide.plane_count);
      planeLabel.textContent = `plane ${view.plane + 1}/${slide.plane_count}`;
      redraw();
      break;
    case "plane_down":
      view = switchPlane(view, view.plane - 1, slide.plane_count);
      planeLabel.textContent = `plane ${view.plane + 1}/${slide.plane_count}`;
      redraw();
      break;
    case "zoom_in":
      view = zoom(view, -1, slide.levels.length);
      redraw();
      break;
    case "zoom_out":
      view = zoom(view, +1, slide.levels.length);
      redraw();
      break;
    case "confirm_conflict":
      void session.replayConflict(true).then(() => refreshAnnotations().then(renderQueue));
      break;
    case "dismiss_conflict":
      void session.replayConflict(false).then(renderQueue);
      break;
  }
});

let dragging = false;
let lastX = 0;
let lastY = 0;
canvas.addEventListener("mousedown", (ev) => {
  dragging = true;
  lastX = ev.offsetX;
  lastY = ev.offsetY;
});
canvas.addEventListener("mousemove", (ev) => {
  if (!dragging || !view) return;
  view = pan(view, ev.offsetX - lastX, ev.offsetY - lastY);
  lastX = ev.offsetX;
  lastY = ev.offsetY;
  redraw();
});
window.addEventListener("mouseup", () => {
  dragging = false;
});

document.getElementById("export")!.addEventListener("click", async () => {
  if (!session) return;
  const text = await session.export();
  const blob = new Blob([text], { type: "text/plain" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = `${session.slideId}-annotations.txt`;
  a.click();
  URL.revokeObjectURL(a.href);
});

document.getElementById("widen")!.addEventListener("click", () => void nudgeRightEdge(+10));
document.getElementById("narrow")!.addEventListener("click", () => void nudgeRightEdge(-10));

slideSelect.addEventListener("change", () => void openSlide(slideSelect.value));

async function boot(): Promise<void> {
  const slides = await api.listSlides();
  slideSelect.innerHTML = slides
    .map((s) => `<option value="${s.slide_id}">${s.slide_id}${s.genus ? ` (${s.genus})` : ""}</option>`)
    .join("");
  if (slides.length) await openSlide(slides[0].slide_id);
}

void boot();
