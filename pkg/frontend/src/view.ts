/** Viewport math. Screen and image coordinates relate by
 * screen = image * zoom + pan; annotations always store image pixels, so
 * every click goes through screenToImage before being kept. */

export interface Viewport {
  zoom: number;
  panX: number;
  panY: number;
}

export interface Point {
  x: number;
  y: number;
}

export const IDENTITY_VIEW: Viewport = { zoom: 1, panX: 0, panY: 0 };

export function imageToScreen(view: Viewport, p: Point): Point {
  return { x: p.x * view.zoom + view.panX, y: p.y * view.zoom + view.panY };
}

export function screenToImage(view: Viewport, p: Point): Point {
  return {
    x: (p.x - view.panX) / view.zoom,
    y: (p.y - view.panY) / view.zoom,
  };
}

/** Zoom by `factor` keeping the image point under `anchor` (screen coords)
 * fixed on screen. */
export function zoomAt(view: Viewport, anchor: Point, factor: number): Viewport {
  const zoom = clampZoom(view.zoom * factor);
  const effective = zoom / view.zoom;
  return {
    zoom,
    panX: anchor.x - (anchor.x - view.panX) * effective,
    panY: anchor.y - (anchor.y - view.panY) * effective,
  };
}

export function panBy(view: Viewport, dx: number, dy: number): Viewport {
  return { zoom: view.zoom, panX: view.panX + dx, panY: view.panY + dy };
}

function clampZoom(zoom: number): number {
  return Math.min(64, Math.max(1 / 16, zoom));
}
