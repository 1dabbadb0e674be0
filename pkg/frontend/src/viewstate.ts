/** Viewer state and the screen <-> level-0 coordinate mapping.
 *
 * All geometry lives in level-0 pixels; the screen shows pyramid level
 * `level`, where one screen pixel covers 2^level level-0 pixels. Box edits
 * are rounded once, at level 0, never in screen space.
 */

export interface ViewState {
  slideId: string;
  /** level-0 coordinates at the viewport center */
  centerX: number;
  centerY: number;
  /** pyramid level index; factor is 2^level */
  level: number;
  plane: number;
  filter: { source?: string; review?: string };
  selection: string | null;
}

export function initialView(slideId: string, widthPx: number, heightPx: number, levelCount: number): ViewState {
  return {
    slideId,
    centerX: widthPx / 2,
    centerY: heightPx / 2,
    level: Math.max(0, levelCount - 1),
    plane: 0,
    filter: { source: "predicted", review: "pending" },
    selection: null,
  };
}

export function levelFactor(level: number): number {
  return 2 ** level;
}

export function clampLevel(level: number, levelCount: number): number {
  return Math.min(Math.max(level, 0), levelCount - 1);
}

export function clampPlane(plane: number, planeCount: number): number {
  return Math.min(Math.max(plane, 0), planeCount - 1);
}

export interface Viewport {
  width: number;
  height: number;
}

/** Level-0 coordinates of a screen point. */
export function screenToLevel0(view: ViewState, vp: Viewport, sx: number, sy: number): [number, number] {
  const f = levelFactor(view.level);
  return [view.centerX + (sx - vp.width / 2) * f, view.centerY + (sy - vp.height / 2) * f];
}

/** Screen coordinates of a level-0 point. */
export function level0ToScreen(view: ViewState, vp: Viewport, x: number, y: number): [number, number] {
  const f = levelFactor(view.level);
  return [(x - view.centerX) / f + vp.width / 2, (y - view.centerY) / f + vp.height / 2];
}

/** A drag of `screenDelta` pixels moves a box edge by screenDelta * 2^level
 * level-0 pixels, rounded at level 0. */
export function dragDeltaToLevel0(screenDelta: number, level: number): number {
  return Math.round(screenDelta * levelFactor(level));
}

export function pan(view: ViewState, dxScreen: number, dyScreen: number): ViewState {
  const f = levelFactor(view.level);
  return { ...view, centerX: view.centerX - dxScreen * f, centerY: view.centerY - dyScreen * f };
}

export function zoom(view: ViewState, delta: number, levelCount: number): ViewState {
  return { ...view, level: clampLevel(view.level + delta, levelCount) };
}

/** Plane switching never changes geometry, only imagery. */
export function switchPlane(view: ViewState, plane: number, planeCount: number): ViewState {
  return { ...view, plane: clampPlane(plane, planeCount) };
}

export type BoxEdge = "left" | "top" | "right" | "bottom";

/** Apply an edge drag to a level-0 box. Returns null when the result would
 * be degenerate (min >= max): the UI blocks such edits client-side. */
export function applyEdgeDrag(
  bbox: [number, number, number, number],
  edge: BoxEdge,
  screenDelta: number,
  level: number,
): [number, number, number, number] | null {
  const d = dragDeltaToLevel0(screenDelta, level);
  const [x0, y0, x1, y1] = bbox;
  const out: [number, number, number, number] =
    edge === "left" ? [x0 + d, y0, x1, y1]
    : edge === "right" ? [x0, y0, x1 + d, y1]
    : edge === "top" ? [x0, y0 + d, x1, y1]
    : [x0, y0, x1, y1 + d];
  if (out[0] >= out[2] || out[1] >= out[3]) return null;
  return out;
}

/** Tile indices covering the viewport at the current level. */
export function visibleTiles(
  view: ViewState,
  vp: Viewport,
  tileSize: number,
  widthPx: number,
  heightPx: number,
): Array<{ tx: number; ty: number }> {
  const f = levelFactor(view.level);
  const levelW = Math.max(1, Math.ceil(widthPx / f));
  const levelH = Math.max(1, Math.ceil(heightPx / f));
  const [x0, y0] = screenToLevel0(view, vp, 0, 0);
  const [x1, y1] = screenToLevel0(view, vp, vp.width, vp.height);
  const lx0 = Math.max(0, Math.floor(x0 / f / tileSize));
  const ly0 = Math.max(0, Math.floor(y0 / f / tileSize));
  const lx1 = Math.min(Math.ceil(levelW / tileSize) - 1, Math.floor((x1 / f - 1) / tileSize));
  const ly1 = Math.min(Math.ceil(levelH / tileSize) - 1, Math.floor((y1 / f - 1) / tileSize));
  const tiles: Array<{ tx: number; ty: number }> = [];
  for (let ty = ly0; ty <= ly1; ty++) {
    for (let tx = lx0; tx <= lx1; tx++) {
      tiles.push({ tx, ty });
    }
  }
  return tiles;
}
