/** Canvas tile viewer: draws the visible pyramid tiles for the active focal
 * plane, then the annotation boxes on top. Tiles are immutable, so the image
 * cache never invalidates. */

import { ApiClient } from "./api.js";
import type { AnnotationRecord, SlideDetail } from "./types.js";
import { ViewState, Viewport, level0ToScreen, levelFactor, visibleTiles } from "./viewstate.js";

const REVIEW_COLORS: Record<string, string> = {
  pending: "#2f80ed",
  accepted: "#27ae60",
  rejected: "#eb5757",
};

export class TileViewer {
  private tileCache = new Map<string, HTMLImageElement>();

  constructor(
    private readonly api: ApiClient,
    private readonly canvas: HTMLCanvasElement,
    private readonly slide: SlideDetail,
    private readonly onTileLoaded: () => void,
  ) {}

  private tileImage(plane: number, level: number, tx: number, ty: number): HTMLImageElement {
    const key = `${plane}/${level}/${tx}_${ty}`;
    let img = this.tileCache.get(key);
    if (!img) {
      img = new Image();
      img.src = this.api.tileUrl(this.slide.slide_id, plane, level, tx, ty);
      img.onload = this.onTileLoaded;
      this.tileCache.set(key, img);
    }
    return img;
  }

  render(view: ViewState, annotations: AnnotationRecord[], selection: string | null): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const vp: Viewport = { width: this.canvas.width, height: this.canvas.height };
    ctx.fillStyle = "#111";
    ctx.fillRect(0, 0, vp.width, vp.height);
    ctx.imageSmoothingEnabled = false;

    const f = levelFactor(view.level);
    const ts = this.slide.tile_size;
    for (const { tx, ty } of visibleTiles(view, vp, ts, this.slide.width_px, this.slide.height_px)) {
      const img = this.tileImage(view.plane, view.level, tx, ty);
      if (!img.complete || img.naturalWidth === 0) continue;
      const [sx, sy] = level0ToScreen(view, vp, tx * ts * f, ty * ts * f);
      ctx.drawImage(img, Math.round(sx), Math.round(sy), img.naturalWidth, img.naturalHeight);
    }

    for (const a of annotations) {
      const [x0, y0, x1, y1] = a.bbox;
      const [sx0, sy0] = level0ToScreen(view, vp, x0, y0);
      const [sx1, sy1] = level0ToScreen(view, vp, x1, y1);
      ctx.lineWidth = a.annotation_id === selection ? 3 : 1.5;
      ctx.strokeStyle = REVIEW_COLORS[a.review] ?? "#f2c94c";
      ctx.strokeRect(sx0, sy0, sx1 - sx0, sy1 - sy0);
      if (a.annotation_id === selection && a.genus) {
        ctx.fillStyle = ctx.strokeStyle;
        ctx.font = "12px sans-serif";
        ctx.fillText(a.genus, sx0 + 2, sy0 - 4);
      }
    }
  }
}
